//! Cost and probability volumes and the readouts that turn one into the other.
//!
//! Volumes are stored row-major with the disparity axis fastest:
//! `index = (row * width + col) * (d_max + 1) + d`. Disparity hypotheses
//! run over `0..=d_max`.
//!
//! The temperature `t` and the scale of the costs are confounded: scaling all
//! costs by `k` is the same as scaling `t` by `k`. Nothing here normalizes the
//! costs, so `t` is only meaningful relative to the cost units of whatever
//! produced the volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive sharpening factor applied to the negated costs before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    /// Plain softmax.
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::InvalidInput(format!(
                "temperature must be positive and finite, got {t}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Temperature::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

fn check_dims(height: usize, width: usize, d_max: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "volume dimensions must be at least 1, got {height}x{width}"
        )));
    }
    if d_max == 0 {
        return Err(Error::Shape("d_max must be at least 1".into()));
    }
    Ok(())
}

/// Per-pixel matching costs over `d_max + 1` disparity hypotheses.
///
/// All entries are finite; this is checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    height: usize,
    width: usize,
    d_max: usize,
    costs: Vec<f64>,
}

impl CostVolume {
    pub fn new(height: usize, width: usize, d_max: usize, costs: Vec<f64>) -> Result<Self> {
        check_dims(height, width, d_max)?;
        let hyp = d_max + 1;
        if costs.len() != height * width * hyp {
            return Err(Error::Shape(format!(
                "expected {} costs for {height}x{width}x{hyp}, got {}",
                height * width * hyp,
                costs.len()
            )));
        }
        if let Some(pos) = costs.iter().position(|c| !c.is_finite()) {
            let pixel = pos / hyp;
            return Err(Error::NonFiniteCost {
                row: pixel / width,
                col: pixel % width,
                disparity: pos % hyp,
                value: costs[pos],
            });
        }
        Ok(CostVolume {
            height,
            width,
            d_max,
            costs,
        })
    }

    /// A single-pixel volume holding one cost vector.
    pub fn from_vector(costs: &[f64]) -> Result<Self> {
        if costs.len() < 2 {
            return Err(Error::Shape(
                "a cost vector needs at least two hypotheses".into(),
            ));
        }
        CostVolume::new(1, 1, costs.len() - 1, costs.to_vec())
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        d_max: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, d_max)?;
        let hyp = d_max + 1;
        let mut costs = Vec::with_capacity(height * width * hyp);
        for row in 0..height {
            for col in 0..width {
                for d in 0..hyp {
                    costs.push(f(row, col, d));
                }
            }
        }
        CostVolume::new(height, width, d_max, costs)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Number of disparity hypotheses, `d_max + 1`.
    pub fn hypotheses(&self) -> usize {
        self.d_max + 1
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let hyp = self.hypotheses();
        let start = (row * self.width + col) * hyp;
        &self.costs[start..start + hyp]
    }

    /// Cost vectors in row-major pixel order.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.costs.chunks_exact(self.hypotheses())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.costs
    }

    /// Adds a per-pixel offset to every hypothesis of that pixel.
    pub fn shifted_by(&self, offset: impl Fn(usize) -> f64) -> Result<CostVolume> {
        let hyp = self.hypotheses();
        let costs = self
            .costs
            .iter()
            .enumerate()
            .map(|(k, c)| c + offset(k / hyp))
            .collect();
        CostVolume::new(self.height, self.width, self.d_max, costs)
    }
}

/// Per-pixel probability vectors, each non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    height: usize,
    width: usize,
    d_max: usize,
    probs: Vec<f64>,
}

/// Tolerance on the per-pixel sum accepted by [`ProbabilityVolume::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

impl ProbabilityVolume {
    /// Wraps explicit probabilities, checking range and per-pixel normalization.
    pub fn new(height: usize, width: usize, d_max: usize, probs: Vec<f64>) -> Result<Self> {
        check_dims(height, width, d_max)?;
        let hyp = d_max + 1;
        if probs.len() != height * width * hyp {
            return Err(Error::Shape(format!(
                "expected {} probabilities for {height}x{width}x{hyp}, got {}",
                height * width * hyp,
                probs.len()
            )));
        }
        for (pixel, p) in probs.chunks_exact(hyp).enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!(
                    "probability outside [0, 1] at pixel {pixel}"
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidInput(format!(
                    "probabilities at pixel {pixel} sum to {sum}"
                )));
            }
        }
        Ok(ProbabilityVolume {
            height,
            width,
            d_max,
            probs,
        })
    }

    pub fn from_vector(p: &[f64]) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::Shape(
                "a probability vector needs at least two hypotheses".into(),
            ));
        }
        ProbabilityVolume::new(1, 1, p.len() - 1, p.to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn hypotheses(&self) -> usize {
        self.d_max + 1
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let hyp = self.hypotheses();
        let start = (row * self.width + col) * hyp;
        &self.probs[start..start + hyp]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.hypotheses())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Scalar disparity per pixel, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "map dimensions must be at least 1, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(DisparityMap {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        DisparityMap::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape<T: Shaped + ?Sized>(&self, other: &T) -> bool {
        self.height == other.shape().0 && self.width == other.shape().1
    }
}

/// Boolean companion of a map; `true` marks a valid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} mask entries for {height}x{width}, got {}",
                height * width,
                valid.len()
            )));
        }
        Ok(ValidityMask {
            height,
            width,
            valid,
        })
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        ValidityMask {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }

    /// Number of valid pixels, the divisor of every masked mean.
    pub fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Pixel-wise AND of two masks.
    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        let valid = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(a, b)| *a && *b)
            .collect();
        ValidityMask::new(self.height, self.width, valid)
    }
}

/// Anything with a `(height, width)` pixel grid.
pub trait Shaped {
    fn shape(&self) -> (usize, usize);
}

macro_rules! impl_shaped {
    ($($ty:ty),*) => {
        $(impl Shaped for $ty {
            fn shape(&self) -> (usize, usize) {
                (self.height, self.width)
            }
        })*
    };
}

impl_shaped!(CostVolume, ProbabilityVolume, DisparityMap, ValidityMask);

pub(crate) fn ensure_same_shape<A: Shaped + ?Sized, B: Shaped + ?Sized>(
    a: &A,
    b: &B,
    what: &str,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Temperature-scaled softmax of negated costs for one pixel, written into `out`.
///
/// The largest logit is subtracted before exponentiation, so any finite cost
/// vector produces a finite, normalized result.
pub fn softmax_into(costs: &[f64], t: Temperature, out: &mut [f64]) {
    debug_assert_eq!(costs.len(), out.len());
    let t = t.value();
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, c) in out.iter_mut().zip(costs) {
        *o = (-t * (c - min_cost)).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(costs: &[f64], t: Temperature) -> Vec<f64> {
    let mut out = vec![0.0; costs.len()];
    softmax_into(costs, t, &mut out);
    out
}

/// Softmax evaluated literally as `exp(-t C(i)) / sum_j exp(-t C(j))`.
///
/// Returns `None` when the denominator under- or overflows. Kept for
/// comparison against the shifted path; the readouts use [`softmax_into`].
pub fn softmax_unshifted(costs: &[f64], t: Temperature) -> Option<Vec<f64>> {
    let t = t.value();
    let e: Vec<f64> = costs.iter().map(|c| (-t * c).exp()).collect();
    let sum: f64 = e.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return None;
    }
    Some(e.into_iter().map(|v| v / sum).collect())
}

/// Expected disparity index `sum_i i * p(i)`.
pub fn expected_index(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, v)| i as f64 * v).sum()
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel `softmax(-t * C)`.
pub fn anisotropic_softmax(volume: &CostVolume, t: Temperature) -> ProbabilityVolume {
    let hyp = volume.hypotheses();
    let mut probs = vec![0.0; volume.costs.len()];
    probs
        .par_chunks_mut(hyp)
        .zip(volume.costs.par_chunks(hyp))
        .for_each(|(out, c)| softmax_into(c, t, out));
    ProbabilityVolume {
        height: volume.height,
        width: volume.width,
        d_max: volume.d_max,
        probs,
    }
}

/// Same as [`anisotropic_softmax`] without the max subtraction.
///
/// Fails with [`Error::Degenerate`] at the first pixel whose partition sum
/// leaves the representable range.
pub fn anisotropic_softmax_unshifted(
    volume: &CostVolume,
    t: Temperature,
) -> Result<ProbabilityVolume> {
    let mut probs = Vec::with_capacity(volume.costs.len());
    for (pixel, c) in volume.pixels().enumerate() {
        let p = softmax_unshifted(c, t).ok_or_else(|| {
            Error::Degenerate(format!(
                "partition sum not representable at row {}, col {}",
                pixel / volume.width,
                pixel % volume.width
            ))
        })?;
        probs.extend(p);
    }
    Ok(ProbabilityVolume {
        height: volume.height,
        width: volume.width,
        d_max: volume.d_max,
        probs,
    })
}

/// Expected disparity under each pixel's distribution.
pub fn soft_argmin(probs: &ProbabilityVolume) -> DisparityMap {
    let values = probs
        .probs
        .par_chunks(probs.hypotheses())
        .map(expected_index)
        .collect();
    DisparityMap {
        height: probs.height,
        width: probs.width,
        values,
    }
}

/// Lowest-cost hypothesis per pixel, lowest index on ties.
pub fn hard_argmin(volume: &CostVolume) -> DisparityMap {
    let values = volume
        .costs
        .par_chunks(volume.hypotheses())
        .map(|c| argmin(c) as f64)
        .collect();
    DisparityMap {
        height: volume.height,
        width: volume.width,
        values,
    }
}

/// Anisotropic softmax followed by soft argmin.
pub fn readout(volume: &CostVolume, t: Temperature) -> (ProbabilityVolume, DisparityMap) {
    let probs = anisotropic_softmax(volume, t);
    let disparity = soft_argmin(&probs);
    (probs, disparity)
}
