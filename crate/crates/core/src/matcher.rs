//! Random-dot stereograms with known disparity, and block-matching cost volumes.
//!
//! # Generator
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (the `rand_chacha`
//! crate, ChaCha with 8 rounds) and is consumed in this order:
//!
//! 1. left image, row-major: `(next_u32() >> 24) as u8` per pixel;
//! 2. right image background, row-major, same rule;
//! 3. noise, only when `noise_sigma > 0`, right image row-major: two draws
//!    `u1 = (next_u64() >> 11) * 2^-53`, `u2` likewise, then
//!    `z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` and the pixel becomes
//!    `clamp(round(v + sigma * z), 0, 255)`.
//!
//! Each left pixel `(x, y)` with integer disparity `d` is copied to the right
//! image at `(x - d, y)`. When several left pixels land on one right pixel the
//! largest disparity (the closest surface) wins; the others are occluded.
//! A left pixel is valid when it lands inside the frame and is not occluded.
//! A constant brightness offset, if any, is applied to the right image before
//! noise.
//!
//! # Cost volumes
//!
//! Window samples outside the frame are clamped to the nearest edge pixel.
//! A hypothesis `i` with `x - i < 0` has no partner in the right image and gets
//! [`OUT_OF_FRAME_COST`]. SAD costs are mean absolute differences in
//! intensity units; census costs are Hamming distances divided by the code
//! length, in `[0, 1]`.

use image::GrayImage;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{CostVolume, DisparityMap, ValidityMask};

/// Cost assigned to hypotheses that reach outside the right image. Exceeds
/// every achievable SAD or census cost.
pub const OUT_OF_FRAME_COST: f64 = 255.0;

/// A rectified grayscale pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: GrayImage,
    pub right: GrayImage,
}

impl StereoPair {
    pub fn new(left: GrayImage, right: GrayImage) -> Result<Self> {
        if left.dimensions() != right.dimensions() {
            return Err(Error::Shape(format!(
                "left {:?} and right {:?} differ in size",
                left.dimensions(),
                right.dimensions()
            )));
        }
        Ok(StereoPair { left, right })
    }

    pub fn width(&self) -> usize {
        self.left.width() as usize
    }

    pub fn height(&self) -> usize {
        self.left.height() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisparityPattern {
    Constant {
        disparity: u32,
    },
    /// Disparity varying linearly from `left` at column 0 to `right` at the
    /// last column, rounded to the nearest integer.
    TiltedPlane {
        left: f64,
        right: f64,
    },
    /// Background disparity everywhere except a foreground rectangle
    /// `[x0, x1) x [y0, y1)` of left-image pixels.
    TwoLayer {
        background: u32,
        foreground: u32,
        rect: [u32; 4],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub pattern: DisparityPattern,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub brightness_offset: i32,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// 128x96, `d_max = 32`, an 8 px background with a 20 px rectangle.
    pub fn benchmark(noise_sigma: f64, seed: u64) -> Self {
        SceneSpec {
            width: 128,
            height: 96,
            d_max: 32,
            pattern: DisparityPattern::TwoLayer {
                background: 8,
                foreground: 20,
                rect: [48, 24, 100, 72],
            },
            noise_sigma,
            brightness_offset: 0,
            seed,
        }
    }

    fn disparity_at(&self, x: usize, y: usize) -> i64 {
        match &self.pattern {
            DisparityPattern::Constant { disparity } => *disparity as i64,
            DisparityPattern::TiltedPlane { left, right } => {
                let f = if self.width > 1 {
                    x as f64 / (self.width - 1) as f64
                } else {
                    0.0
                };
                (left + (right - left) * f).round() as i64
            }
            DisparityPattern::TwoLayer {
                background,
                foreground,
                rect,
            } => {
                let [x0, y0, x1, y1] = rect.map(|v| v as usize);
                if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                    *foreground as i64
                } else {
                    *background as i64
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("scene dimensions must be positive".into()));
        }
        if self.d_max == 0 || self.d_max >= self.width {
            return Err(Error::InvalidInput(format!(
                "d_max must lie in [1, width), got {} for width {}",
                self.d_max, self.width
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        let (lo, hi) = match &self.pattern {
            DisparityPattern::Constant { disparity } => (*disparity as f64, *disparity as f64),
            DisparityPattern::TiltedPlane { left, right } => {
                if !(left.is_finite() && right.is_finite()) {
                    return Err(Error::InvalidInput("plane disparities must be finite".into()));
                }
                (left.min(*right).round(), left.max(*right).round())
            }
            DisparityPattern::TwoLayer {
                background,
                foreground,
                rect,
            } => {
                let [x0, y0, x1, y1] = rect.map(|v| v as usize);
                if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
                    return Err(Error::InvalidInput(format!(
                        "foreground rectangle {rect:?} does not fit a {}x{} image",
                        self.width, self.height
                    )));
                }
                let (a, b) = (*background as f64, *foreground as f64);
                (a.min(b), a.max(b))
            }
        };
        if lo < 0.0 || hi > self.d_max as f64 {
            return Err(Error::InvalidInput(format!(
                "pattern disparities [{lo}, {hi}] exceed [0, {}]",
                self.d_max
            )));
        }
        Ok(())
    }
}

/// A generated scene: images plus ground truth for the left view.
#[derive(Debug, Clone, PartialEq)]
pub struct Stereogram {
    pub pair: StereoPair,
    pub gt: DisparityMap,
    pub mask: ValidityMask,
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn generate_stereogram(spec: &SceneSpec) -> Result<Stereogram> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let left: Vec<u8> = (0..w * h).map(|_| (rng.next_u32() >> 24) as u8).collect();
    let mut right: Vec<u8> = (0..w * h).map(|_| (rng.next_u32() >> 24) as u8).collect();

    let disparity: Vec<i64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| spec.disparity_at(x, y))
        .collect();

    // owner[right pixel] = (disparity, left column) of the closest surface seen there.
    let mut owner: Vec<Option<(i64, usize)>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = disparity[y * w + x];
            let xr = x as i64 - d;
            if xr < 0 {
                continue;
            }
            let slot = &mut owner[y * w + xr as usize];
            if slot.is_none_or(|(od, _)| d > od) {
                *slot = Some((d, x));
            }
        }
    }

    let mut valid = vec![false; w * h];
    for y in 0..h {
        for xr in 0..w {
            if let Some((_, x)) = owner[y * w + xr] {
                right[y * w + xr] = left[y * w + x];
                valid[y * w + x] = true;
            }
        }
    }

    if spec.brightness_offset != 0 {
        for v in right.iter_mut() {
            *v = (*v as i32 + spec.brightness_offset).clamp(0, 255) as u8;
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in right.iter_mut() {
            let u1 = unit_f64(&mut rng);
            let u2 = unit_f64(&mut rng);
            let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *v = (*v as f64 + spec.noise_sigma * z).round().clamp(0.0, 255.0) as u8;
        }
    }

    let to_image = |data: Vec<u8>| {
        GrayImage::from_raw(w as u32, h as u32, data).expect("buffer sized to the image")
    };
    Ok(Stereogram {
        pair: StereoPair::new(to_image(left), to_image(right))?,
        gt: DisparityMap::new(h, w, disparity.iter().map(|d| *d as f64).collect())?,
        mask: ValidityMask::new(h, w, valid)?,
    })
}

/// Pixels whose matching window sees a single, fully visible surface: the
/// window fits the frame at both the left position and the shifted right
/// position, and every pixel in it is valid with the centre's disparity.
pub fn interior_mask(gt: &DisparityMap, mask: &ValidityMask, window: usize) -> Result<ValidityMask> {
    check_window(window)?;
    let (h, w) = (gt.height(), gt.width());
    let r = (window / 2) as i64;
    let mut out = vec![false; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let d = gt.get(y as usize, x as usize);
            let fits = y - r >= 0
                && y + r < h as i64
                && x - r >= 0
                && x + r < w as i64
                && (x as f64 - d) as i64 - r >= 0;
            if !fits {
                continue;
            }
            let uniform = (y - r..=y + r).all(|yy| {
                (x - r..=x + r).all(|xx| {
                    mask.is_valid(yy as usize, xx as usize) && gt.get(yy as usize, xx as usize) == d
                })
            });
            out[(y * w as i64 + x) as usize] = uniform;
        }
    }
    ValidityMask::new(h, w, out)
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "window must be odd and at least 1, got {window}"
        )));
    }
    Ok(())
}

fn check_matching_inputs(pair: &StereoPair, d_max: usize, window: usize) -> Result<()> {
    check_window(window)?;
    if d_max == 0 {
        return Err(Error::InvalidInput("d_max must be at least 1".into()));
    }
    if d_max >= pair.width() {
        return Err(Error::InvalidInput(format!(
            "d_max {d_max} must be smaller than the image width {}",
            pair.width()
        )));
    }
    Ok(())
}

#[inline]
fn clamped(img: &GrayImage, x: i64, y: i64) -> u8 {
    let x = x.clamp(0, img.width() as i64 - 1) as u32;
    let y = y.clamp(0, img.height() as i64 - 1) as u32;
    img.get_pixel(x, y).0[0]
}

fn assemble(
    pair: &StereoPair,
    d_max: usize,
    cost_at: impl Fn(usize, usize, usize) -> f64 + Sync,
) -> Result<(CostVolume, ValidityMask)> {
    let (h, w) = (pair.height(), pair.width());
    let hyp = d_max + 1;
    let mut costs = vec![0.0; h * w * hyp];
    costs
        .par_chunks_mut(w * hyp)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                for i in 0..hyp {
                    row[x * hyp + i] = if x >= i {
                        cost_at(x, y, i)
                    } else {
                        OUT_OF_FRAME_COST
                    };
                }
            }
        });
    // A pixel is unusable only if no hypothesis stays in frame. Hypothesis 0
    // always does, so this mask is all valid; it is kept so callers can AND it
    // with other masks uniformly.
    let valid = (0..h * w).map(|k| (0..hyp).any(|i| k % w >= i)).collect();
    Ok((CostVolume::new(h, w, d_max, costs)?, ValidityMask::new(h, w, valid)?))
}

/// Mean absolute difference over a `window x window` patch.
pub fn sad_cost_volume(
    pair: &StereoPair,
    d_max: usize,
    window: usize,
) -> Result<(CostVolume, ValidityMask)> {
    check_matching_inputs(pair, d_max, window)?;
    let r = (window / 2) as i64;
    let area = (window * window) as f64;
    assemble(pair, d_max, |x, y, i| {
        let (x, y, i) = (x as i64, y as i64, i as i64);
        let mut sum = 0u32;
        for dy in -r..=r {
            for dx in -r..=r {
                let a = clamped(&pair.left, x + dx, y + dy);
                let b = clamped(&pair.right, x - i + dx, y + dy);
                sum += a.abs_diff(b) as u32;
            }
        }
        sum as f64 / area
    })
}

/// Census signature of every pixel: one bit per window neighbour, set when the
/// neighbour is darker than the centre. Neighbours are visited row-major,
/// skipping the centre, and packed little-endian into 64-bit words.
pub fn census_transform(img: &GrayImage, window: usize) -> Result<Vec<Vec<u64>>> {
    check_window(window)?;
    let r = (window / 2) as i64;
    let bits = window * window - 1;
    let words = bits.div_ceil(64).max(1);
    let (w, h) = (img.width() as i64, img.height() as i64);
    Ok((0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let centre = clamped(img, x, y);
            let mut code = vec![0u64; words];
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if clamped(img, x + dx, y + dy) < centre {
                        code[k / 64] |= 1 << (k % 64);
                    }
                    k += 1;
                }
            }
            code
        })
        .collect())
}

pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Normalized Hamming distance between census signatures.
pub fn census_cost_volume(
    pair: &StereoPair,
    d_max: usize,
    window: usize,
) -> Result<(CostVolume, ValidityMask)> {
    check_matching_inputs(pair, d_max, window)?;
    let bits = (window * window - 1).max(1) as f64;
    let left = census_transform(&pair.left, window)?;
    let right = census_transform(&pair.right, window)?;
    let w = pair.width();
    assemble(pair, d_max, |x, y, i| {
        hamming(&left[y * w + x], &right[y * w + x - i]) as f64 / bits
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Sad,
    Census,
}

impl MatcherKind {
    pub fn cost_volume(
        self,
        pair: &StereoPair,
        d_max: usize,
        window: usize,
    ) -> Result<(CostVolume, ValidityMask)> {
        match self {
            MatcherKind::Sad => sad_cost_volume(pair, d_max, window),
            MatcherKind::Census => census_cost_volume(pair, d_max, window),
        }
    }
}
