//! File codecs for disparity maps, images and cost volumes.
//!
//! | format      | contents                      | precision                 |
//! |-------------|-------------------------------|---------------------------|
//! | PFM (`Pf`)  | disparity or any scalar map   | 32-bit float, lossless    |
//! | KITTI PNG16 | disparity + validity          | 1/256 px, 0 means invalid |
//! | PGM         | 8-bit grayscale image         | exact                     |
//! | raw volume  | cost volume                   | 64- or 32-bit float       |
//!
//! Disparities that need finer than 1/256 px precision must be stored as PFM.
//! A valid disparity below 1/512 px rounds to 0 in PNG16 and reads back as
//! invalid.
//!
//! Raw volume layout (header integers in the payload byte order):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CVOL"
//! 4       1     version (1)
//! 5       1     dtype: 0 = f64, 1 = f32
//! 6       1     byte order: 0 = little-endian, 1 = big-endian
//! 7       1     reserved (0)
//! 8       4     height (u32)
//! 12      4     width (u32)
//! 16      4     hypotheses = d_max + 1 (u32)
//! 20      ...   costs, row-major, disparity fastest
//! ```

use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, ImageBuffer, ImageEncoder, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMap;
use crate::volume::{ensure_same_shape, CostVolume, DisparityMap, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Pfm,
    KittiPng16,
    Pgm,
    RawVolume,
}

impl FileFormat {
    /// Guesses the format from a file extension. `.png` maps to KITTI PNG16.
    pub fn from_path(path: &Path) -> Option<FileFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pfm" => Some(FileFormat::Pfm),
            "png" => Some(FileFormat::KittiPng16),
            "pgm" => Some(FileFormat::Pgm),
            "cvol" => Some(FileFormat::RawVolume),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

impl Endianness {
    pub const NATIVE: Endianness = if cfg!(target_endian = "big") {
        Endianness::Big
    } else {
        Endianness::Little
    };
}

// ---------------------------------------------------------------- PFM

/// Encodes a row-major scalar field as grayscale PFM.
pub fn encode_pfm(height: usize, width: usize, values: &[f64], order: Endianness) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Shape(format!(
            "expected {} values for {height}x{width}, got {}",
            height * width,
            values.len()
        )));
    }
    let scale = match order {
        Endianness::Little => "-1.0",
        Endianness::Big => "1.0",
    };
    let mut out = format!("Pf\n{width} {height}\n{scale}\n").into_bytes();
    let header = out.len();
    out.resize(header + 4 * values.len(), 0);
    let payload = &mut out[header..];
    let mut k = 0;
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value {v} cannot be written to PFM")));
            }
            let f = *v as f32;
            if !f.is_finite() {
                return Err(Error::Range(format!("{v} overflows a 32-bit float")));
            }
            match order {
                Endianness::Little => LittleEndian::write_f32(&mut payload[k..k + 4], f),
                Endianness::Big => BigEndian::write_f32(&mut payload[k..k + 4], f),
            }
            k += 4;
        }
    }
    Ok(out)
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
        if *pos - start > 32 {
            return Err(Error::Format("PFM header token too long".into()));
        }
    }
    if start == *pos {
        return Err(Error::Format("PFM header ended early".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("PFM header is not ASCII".into()))
}

/// Decodes a grayscale PFM into `(height, width, row-major values)`.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut pos = 0;
    match header_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => {
            return Err(Error::Format(
                "colour PFM (PF) is not supported; disparity files must be grayscale (Pf)".into(),
            ))
        }
        other => return Err(Error::Format(format!("not a PFM file (magic {other:?})"))),
    }
    let dim = |tok: &str, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::Format(format!("bad PFM {what} {tok:?}")))
    };
    let width = dim(header_token(bytes, &mut pos)?, "width")?;
    let height = dim(header_token(bytes, &mut pos)?, "height")?;
    let scale_tok = header_token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad PFM scale {scale}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("PFM header is not terminated".into()));
    }
    pos += 1;

    let n = width
        .checked_mul(height)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "PFM payload has {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    let mut values = vec![0.0; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let f = if scale < 0.0 {
            LittleEndian::read_f32(chunk)
        } else {
            BigEndian::read_f32(chunk)
        };
        let row = height - 1 - k / width;
        values[row * width + k % width] = f as f64;
    }
    Ok((height, width, values))
}

/// Little-endian grayscale PFM.
pub fn pfm_write(map: &DisparityMap) -> Result<Vec<u8>> {
    encode_pfm(map.height(), map.width(), map.values(), Endianness::Little)
}

pub fn pfm_read(bytes: &[u8]) -> Result<DisparityMap> {
    let (h, w, values) = decode_pfm(bytes)?;
    DisparityMap::new(h, w, values)
}

// ---------------------------------------------------------------- KITTI PNG16

/// Largest disparity representable in PNG16, exclusive.
pub const KITTI_MAX_DISPARITY: f64 = 256.0;

/// `round(d * 256)` at valid pixels, 0 at invalid ones.
pub fn kitti_png_write(map: &DisparityMap, mask: &ValidityMask) -> Result<Vec<u8>> {
    ensure_same_shape(map, mask, "disparity vs mask")?;
    let mut raw = Vec::with_capacity(map.values().len());
    for (i, (d, valid)) in map.values().iter().zip(mask.as_slice()).enumerate() {
        if !valid {
            raw.push(0u16);
            continue;
        }
        if !(d.is_finite() && *d >= 0.0 && *d < KITTI_MAX_DISPARITY) {
            return Err(Error::Range(format!(
                "disparity {d} at pixel ({}, {}) is outside [0, 256)",
                i / map.width(),
                i % map.width()
            )));
        }
        // Values within 1/512 of 256 would round to 65536.
        raw.push((d * 256.0).round().min(u16::MAX as f64) as u16);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw)
            .expect("buffer sized to the map");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn kitti_png_read(bytes: &[u8]) -> Result<(DisparityMap, ValidityMask)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("cannot decode PNG: {e}")))?;
    let DynamicImage::ImageLuma16(img) = img else {
        return Err(Error::Format(format!(
            "KITTI disparity must be a 16-bit grayscale PNG, got {:?}",
            img.color()
        )));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let valid = raw.iter().map(|v| *v != 0).collect();
    let values = raw.iter().map(|v| *v as f64 / 256.0).collect();
    Ok((DisparityMap::new(h, w, values)?, ValidityMask::new(h, w, valid)?))
}

// ---------------------------------------------------------------- PGM

pub fn pgm_write(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)?;
    Ok(out)
}

pub fn pgm_read(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("cannot decode PGM: {e}")))?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Format(format!(
            "expected an 8-bit grayscale PGM, got {:?}",
            other.color()
        ))),
    }
}

/// Loads an 8-bit grayscale image from PGM or PNG, by content.
pub fn read_gray_image(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Format(format!("cannot decode image: {e}")))?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Format(format!(
            "expected an 8-bit grayscale image, got {:?}",
            other.color()
        ))),
    }
}

// ---------------------------------------------------------------- uncertainty

/// 8-bit grayscale PNG, white = most uncertain.
pub fn uncertainty_png_write(map: &UncertaintyMap) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(map.width() as u32, map.height() as u32, map.to_gray8())
        .expect("buffer sized to the map");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Raw uncertainty values as little-endian PFM.
pub fn uncertainty_pfm_write(map: &UncertaintyMap) -> Result<Vec<u8>> {
    encode_pfm(map.height(), map.width(), map.values(), Endianness::Little)
}

// ---------------------------------------------------------------- raw volume

pub const RAW_VOLUME_MAGIC: &[u8; 4] = b"CVOL";
pub const RAW_VOLUME_VERSION: u8 = 1;
const RAW_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeDtype {
    F64,
    F32,
}

impl VolumeDtype {
    fn code(self) -> u8 {
        match self {
            VolumeDtype::F64 => 0,
            VolumeDtype::F32 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            VolumeDtype::F64 => 8,
            VolumeDtype::F32 => 4,
        }
    }
}

fn put_u32(buf: &mut [u8], v: u32, order: Endianness) {
    match order {
        Endianness::Little => LittleEndian::write_u32(buf, v),
        Endianness::Big => BigEndian::write_u32(buf, v),
    }
}

fn get_u32(buf: &[u8], order: Endianness) -> u32 {
    match order {
        Endianness::Little => LittleEndian::read_u32(buf),
        Endianness::Big => BigEndian::read_u32(buf),
    }
}

pub fn raw_volume_write(vol: &CostVolume, dtype: VolumeDtype, order: Endianness) -> Result<Vec<u8>> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Range(format!("dimension {v} exceeds u32")))
    };
    let (h, w, hyp) = (dim(vol.height())?, dim(vol.width())?, dim(vol.hypotheses())?);
    let mut out = vec![0u8; RAW_HEADER_LEN + dtype.size() * vol.as_slice().len()];
    out[..4].copy_from_slice(RAW_VOLUME_MAGIC);
    out[4] = RAW_VOLUME_VERSION;
    out[5] = dtype.code();
    out[6] = match order {
        Endianness::Little => 0,
        Endianness::Big => 1,
    };
    put_u32(&mut out[8..12], h, order);
    put_u32(&mut out[12..16], w, order);
    put_u32(&mut out[16..20], hyp, order);
    let payload = &mut out[RAW_HEADER_LEN..];
    match (dtype, order) {
        (VolumeDtype::F64, Endianness::Little) => LittleEndian::write_f64_into(vol.as_slice(), payload),
        (VolumeDtype::F64, Endianness::Big) => BigEndian::write_f64_into(vol.as_slice(), payload),
        (VolumeDtype::F32, _) => {
            let narrow: Vec<f32> = vol.as_slice().iter().map(|c| *c as f32).collect();
            if let Some(c) = vol.as_slice().iter().find(|c| !(**c as f32).is_finite()) {
                return Err(Error::Range(format!("cost {c} overflows a 32-bit float")));
            }
            match order {
                Endianness::Little => LittleEndian::write_f32_into(&narrow, payload),
                Endianness::Big => BigEndian::write_f32_into(&narrow, payload),
            }
        }
    }
    Ok(out)
}

pub fn raw_volume_read(bytes: &[u8]) -> Result<CostVolume> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::Format(format!(
            "raw volume header needs {RAW_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAW_VOLUME_MAGIC {
        return Err(Error::Format(format!("bad raw volume magic {:?}", &bytes[..4])));
    }
    if bytes[4] != RAW_VOLUME_VERSION {
        return Err(Error::Format(format!("unsupported raw volume version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => VolumeDtype::F64,
        1 => VolumeDtype::F32,
        other => return Err(Error::Format(format!("unknown raw volume dtype {other}"))),
    };
    let order = match bytes[6] {
        0 => Endianness::Little,
        1 => Endianness::Big,
        other => return Err(Error::Format(format!("unknown byte-order flag {other}"))),
    };
    let h = get_u32(&bytes[8..12], order) as usize;
    let w = get_u32(&bytes[12..16], order) as usize;
    let hyp = get_u32(&bytes[16..20], order) as usize;
    if h == 0 || w == 0 || hyp < 2 {
        return Err(Error::Format(format!("bad raw volume dimensions {h}x{w}x{hyp}")));
    }
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(hyp))
        .ok_or_else(|| Error::Format("raw volume dimensions overflow".into()))?;
    let payload = &bytes[RAW_HEADER_LEN..];
    if count.checked_mul(dtype.size()) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "raw volume payload has {} bytes, expected {count} values of {} bytes",
            payload.len(),
            dtype.size()
        )));
    }
    let mut costs = vec![0.0; count];
    match (dtype, order) {
        (VolumeDtype::F64, Endianness::Little) => LittleEndian::read_f64_into(payload, &mut costs),
        (VolumeDtype::F64, Endianness::Big) => BigEndian::read_f64_into(payload, &mut costs),
        (VolumeDtype::F32, _) => {
            let mut narrow = vec![0f32; count];
            match order {
                Endianness::Little => LittleEndian::read_f32_into(payload, &mut narrow),
                Endianness::Big => BigEndian::read_f32_into(payload, &mut narrow),
            }
            costs.iter_mut().zip(narrow).for_each(|(c, f)| *c = f as f64);
        }
    }
    CostVolume::new(h, w, hyp - 1, costs).map_err(|e| match e {
        Error::NonFiniteCost { .. } => Error::Format(format!("raw volume payload: {e}")),
        other => other,
    })
}
