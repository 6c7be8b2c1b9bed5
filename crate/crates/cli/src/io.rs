//! File helpers: every read names the path on failure.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dispsharp::storage::{self, FileFormat};
use dispsharp::{CostVolume, DisparityMap, SceneSpec, StereoPair, UncertaintyMap, UncertaintyMetric, ValidityMask};
use serde::Serialize;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn format_of(path: &Path) -> Result<FileFormat> {
    FileFormat::from_path(path)
        .with_context(|| format!("unknown file extension: {}", path.display()))
}

/// Disparity from PFM (non-finite values invalid) or KITTI PNG16 (0 invalid).
pub fn read_disparity(path: &Path) -> Result<(DisparityMap, ValidityMask)> {
    let bytes = read_bytes(path)?;
    let parsed = match format_of(path)? {
        FileFormat::Pfm => storage::pfm_read(&bytes).map(|map| {
            let valid = map.values().iter().map(|v| v.is_finite()).collect();
            let mask = ValidityMask::new(map.height(), map.width(), valid).expect("same shape");
            (map, mask)
        }),
        FileFormat::KittiPng16 => storage::kitti_png_read(&bytes),
        other => bail!("{}: {other:?} does not hold a disparity map", path.display()),
    };
    parsed.with_context(|| format!("cannot decode {}", path.display()))
}

/// Raw uncertainty values from PFM.
pub fn read_uncertainty(path: &Path, metric: UncertaintyMetric, hypotheses: usize) -> Result<UncertaintyMap> {
    let bytes = read_bytes(path)?;
    let (h, w, values) =
        storage::decode_pfm(&bytes).with_context(|| format!("cannot decode {}", path.display()))?;
    Ok(UncertaintyMap::new(h, w, values, metric, hypotheses)?)
}

pub fn read_volume(path: &Path) -> Result<CostVolume> {
    let bytes = read_bytes(path)?;
    storage::raw_volume_read(&bytes).with_context(|| format!("cannot decode {}", path.display()))
}

pub fn read_pair(left: &Path, right: &Path) -> Result<StereoPair> {
    let load = |p: &Path| -> Result<_> {
        storage::read_gray_image(&read_bytes(p)?).with_context(|| format!("cannot decode {}", p.display()))
    };
    Ok(StereoPair::new(load(left)?, load(right)?)?)
}

pub fn read_scene(path: &Path) -> Result<SceneSpec> {
    let bytes = read_bytes(path)?;
    let spec: SceneSpec = serde_json::from_slice(&bytes)
        .with_context(|| format!("invalid scene config {}", path.display()))?;
    spec.validate()
        .with_context(|| format!("invalid scene config {}", path.display()))?;
    Ok(spec)
}
