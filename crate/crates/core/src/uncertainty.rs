//! Sharpness measures of per-pixel disparity distributions.
//!
//! Three measures are provided, all oriented so that larger means less
//! certain:
//!
//! * **MSM**, `1 - p(i1)` where `i1` is the most probable index.
//! * **Entropy**, `-sum p(i) ln p(i)`, natural log, with `0 ln 0 = 0`.
//! * **PER**, `(1/M) sum_{i != i1} exp(-(p(i1) - p(i))^2 / s^2)` with
//!   `M = d_max`, the number of indices other than `i1`.
//!
//! Ties for the most probable index resolve to the lowest index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{argmax, ensure_same_shape, ProbabilityVolume, Shaped, ValidityMask};

/// Default PER kernel width, in probability units.
pub const DEFAULT_PER_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UncertaintyMetric {
    Msm,
    Entropy,
    Per { s: f64 },
}

impl UncertaintyMetric {
    pub fn per(s: f64) -> Result<Self> {
        if s.is_finite() && s > 0.0 {
            Ok(UncertaintyMetric::Per { s })
        } else {
            Err(Error::InvalidInput(format!(
                "PER scale must be positive, got {s}"
            )))
        }
    }

    /// Parses `msm`, `entropy` or `per`; `per_s` is only used by PER.
    pub fn from_name(name: &str, per_s: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "msm" => Ok(UncertaintyMetric::Msm),
            "entropy" => Ok(UncertaintyMetric::Entropy),
            "per" => UncertaintyMetric::per(per_s),
            other => Err(Error::InvalidInput(format!(
                "unknown uncertainty metric {other:?} (expected msm, entropy or per)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UncertaintyMetric::Msm => "msm",
            UncertaintyMetric::Entropy => "entropy",
            UncertaintyMetric::Per { .. } => "per",
        }
    }

    /// Loss weight used when this metric regularizes training.
    pub fn default_lambda(&self) -> f64 {
        match self {
            UncertaintyMetric::Per { .. } => 1.0,
            UncertaintyMetric::Msm => 0.5,
            UncertaintyMetric::Entropy => 0.125,
        }
    }

    /// Closed range the metric can take for `hypotheses` disparity candidates.
    pub fn value_range(&self, hypotheses: usize) -> (f64, f64) {
        match *self {
            UncertaintyMetric::Msm => (0.0, 1.0 - 1.0 / hypotheses as f64),
            UncertaintyMetric::Entropy => (0.0, (hypotheses as f64).ln()),
            UncertaintyMetric::Per { s } => ((-1.0 / (s * s)).exp(), 1.0),
        }
    }

    /// Evaluates the metric on one probability vector.
    pub fn evaluate(&self, p: &[f64]) -> Result<f64> {
        match *self {
            UncertaintyMetric::Msm => Ok(msm_of(p)),
            UncertaintyMetric::Entropy => Ok(entropy_of(p)),
            UncertaintyMetric::Per { s } => per_of(p, s),
        }
    }

    /// All three metrics with PER at scale `s`, in a fixed order.
    pub fn all(s: f64) -> [UncertaintyMetric; 3] {
        [
            UncertaintyMetric::Msm,
            UncertaintyMetric::Entropy,
            UncertaintyMetric::Per { s },
        ]
    }
}

pub fn msm_of(p: &[f64]) -> f64 {
    1.0 - p[argmax(p)]
}

pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

pub fn per_of(p: &[f64], s: f64) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::Degenerate(
            "PER needs at least two hypotheses (M = 0)".into(),
        ));
    }
    let i1 = argmax(p);
    let peak = p[i1];
    let s2 = s * s;
    let sum: f64 = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != i1)
        .map(|(_, v)| {
            let gap = peak - v;
            (-gap * gap / s2).exp()
        })
        .sum();
    Ok(sum / (p.len() - 1) as f64)
}

/// Per-pixel uncertainty produced by one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    metric: UncertaintyMetric,
    hypotheses: usize,
}

impl UncertaintyMap {
    /// Wraps precomputed values. `hypotheses` is only used to place values
    /// inside the metric's range when rendering.
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        metric: UncertaintyMetric,
        hypotheses: usize,
    ) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(UncertaintyMap {
            height,
            width,
            values,
            metric,
            hypotheses,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metric(&self) -> UncertaintyMetric {
        self.metric
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Mean over valid pixels.
    pub fn masked_mean(&self, mask: &ValidityMask) -> Result<f64> {
        ensure_same_shape(self, mask, "uncertainty map vs mask")?;
        let n = mask.count();
        if n == 0 {
            return Err(Error::Degenerate("mask has no valid pixels".into()));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(mask.as_slice())
            .filter(|(_, m)| **m)
            .map(|(v, _)| v)
            .sum();
        Ok(sum / n as f64)
    }

    /// 8-bit rendering; white is the metric's maximum uncertainty.
    pub fn to_gray8(&self) -> Vec<u8> {
        let (lo, hi) = self.metric.value_range(self.hypotheses);
        let span = hi - lo;
        self.values
            .iter()
            .map(|v| {
                if span <= 0.0 {
                    0
                } else {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }
}

impl Shaped for UncertaintyMap {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn map_pixels(
    probs: &ProbabilityVolume,
    metric: UncertaintyMetric,
    f: impl Fn(&[f64]) -> f64 + Sync + Send,
) -> UncertaintyMap {
    let values = probs.as_slice().par_chunks(probs.hypotheses()).map(f).collect();
    UncertaintyMap {
        height: probs.height(),
        width: probs.width(),
        values,
        metric,
        hypotheses: probs.hypotheses(),
    }
}

pub fn msm(probs: &ProbabilityVolume) -> UncertaintyMap {
    map_pixels(probs, UncertaintyMetric::Msm, msm_of)
}

pub fn entropy(probs: &ProbabilityVolume) -> UncertaintyMap {
    map_pixels(probs, UncertaintyMetric::Entropy, entropy_of)
}

pub fn per(probs: &ProbabilityVolume, s: f64) -> Result<UncertaintyMap> {
    let metric = UncertaintyMetric::per(s)?;
    if probs.d_max() == 0 {
        return Err(Error::Degenerate("PER needs d_max >= 1".into()));
    }
    Ok(map_pixels(probs, metric, |p| {
        per_of(p, s).expect("hypothesis count checked above")
    }))
}

/// Dispatches to [`msm`], [`entropy`] or [`per`].
pub fn uncertainty_map(
    probs: &ProbabilityVolume,
    metric: UncertaintyMetric,
) -> Result<UncertaintyMap> {
    match metric {
        UncertaintyMetric::Msm => Ok(msm(probs)),
        UncertaintyMetric::Entropy => Ok(entropy(probs)),
        UncertaintyMetric::Per { s } => per(probs, s),
    }
}

/// Mean uncertainty over the valid pixels of `mask`.
pub fn uncertainty_loss(
    probs: &ProbabilityVolume,
    metric: UncertaintyMetric,
    mask: &ValidityMask,
) -> Result<f64> {
    ensure_same_shape(probs, mask, "probabilities vs mask")?;
    uncertainty_map(probs, metric)?.masked_mean(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use crate::volume::{softmax, Temperature};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirac(n: usize, at: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        p
    }

    #[test]
    fn msm_examples() {
        assert_eq!(msm_of(&dirac(5, 2)), 0.0);
        assert!((msm_of(&[0.25; 4]) - 0.75).abs() < 1e-15);
        assert!((msm_of(&[0.5, 0.3, 0.2]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_of(&dirac(5, 2)), 0.0);
        assert!((entropy_of(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy_of(&[0.5, 0.5, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn per_examples() {
        assert!((per_of(&[0.25; 4], 0.5).unwrap() - 1.0).abs() < 1e-15);
        for s in [0.1, 0.5, 2.0] {
            let v = per_of(&dirac(6, 3), s).unwrap();
            assert!((v - (-1.0 / (s * s)).exp()).abs() < 1e-15);
        }
        let v = per_of(&[0.6, 0.4], 0.5).unwrap();
        assert!((v - (-0.16f64).exp()).abs() < 1e-15);
        assert!(matches!(per_of(&[1.0], 0.5), Err(Error::Degenerate(_))));
        assert!(UncertaintyMetric::per(0.0).is_err());
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let probs = ProbabilityVolume::from_vector(&dirac(8, 3)).unwrap();
        let m = uncertainty_map(&probs, UncertaintyMetric::Msm).unwrap();
        assert_eq!(m.values(), &[0.0]);

        let probs = ProbabilityVolume::new(2, 1, 3, vec![0.25; 8]).unwrap();
        let m = uncertainty_map(&probs, UncertaintyMetric::Entropy).unwrap();
        for v in m.values() {
            assert!((v - 4f64.ln()).abs() < 1e-15);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let costs: Vec<f64> = (0..3 * 16).map(|_| rng.random_range(0.0..3.0)).collect();
        let vol = crate::volume::CostVolume::new(1, 3, 15, costs).unwrap();
        let probs = crate::volume::anisotropic_softmax(&vol, Temperature::ONE);
        let a = uncertainty_map(&probs, UncertaintyMetric::Per { s: 0.5 }).unwrap();
        let b = per(&probs, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_is_masked_mean() {
        let probs = ProbabilityVolume::new(1, 2, 2, {
            let mut v = dirac(3, 0);
            v.extend(dirac(3, 2));
            v
        })
        .unwrap();
        let mask = ValidityMask::all_valid(1, 2);
        assert_eq!(
            uncertainty_loss(&probs, UncertaintyMetric::Entropy, &mask).unwrap(),
            0.0
        );

        let probs = ProbabilityVolume::new(1, 2, 2, vec![0.5, 0.5, 0.0, 0.2, 0.3, 0.5]).unwrap();
        let a = entropy_of(&[0.5, 0.5, 0.0]);
        let b = entropy_of(&[0.2, 0.3, 0.5]);
        let l = uncertainty_loss(&probs, UncertaintyMetric::Entropy, &mask).unwrap();
        assert!((l - (a + b) / 2.0).abs() < 1e-15);

        let empty = ValidityMask::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(
            uncertainty_loss(&probs, UncertaintyMetric::Msm, &empty),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn loss_matches_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w, hyp) = (4, 5, 12);
        let costs: Vec<f64> = (0..h * w * hyp).map(|_| rng.random_range(0.0..3.0)).collect();
        let mask_bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.7)).collect();
        let vol = crate::volume::CostVolume::new(h, w, hyp - 1, costs.clone()).unwrap();
        let probs = crate::volume::anisotropic_softmax(&vol, Temperature::ONE);
        let mask = ValidityMask::new(h, w, mask_bits.clone()).unwrap();
        for metric in UncertaintyMetric::all(0.5) {
            // Re-derive every pixel's distribution from the raw costs.
            let mut sum = 0.0;
            let mut n = 0;
            for (k, c) in costs.chunks(hyp).enumerate() {
                if !mask_bits[k] {
                    continue;
                }
                let e: Vec<f64> = c.iter().map(|x| (-x).exp()).collect();
                let z: f64 = e.iter().sum();
                let p: Vec<f64> = e.iter().map(|x| x / z).collect();
                sum += metric.evaluate(&p).unwrap();
                n += 1;
            }
            let l = uncertainty_loss(&probs, metric, &mask).unwrap();
            assert!((l - sum / n as f64).abs() < 1e-12, "{metric:?}");
        }
    }

    #[test]
    fn canonical_shapes_are_ordered() {
        let shapes = toy::sharpness_shapes();
        for metric in UncertaintyMetric::all(DEFAULT_PER_SCALE) {
            let u: Vec<f64> = shapes
                .iter()
                .map(|p| metric.evaluate(p).unwrap())
                .collect();
            assert!(u[0] < u[1] && u[1] < u[2], "{metric:?}: {u:?}");
        }
    }

    #[test]
    fn metrics_fall_as_temperature_rises() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let c: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..3.0)).collect();
            for metric in [UncertaintyMetric::Msm, UncertaintyMetric::Entropy] {
                let mut prev = f64::INFINITY;
                for t in [1.0, 2.0, 4.0, 8.0, 16.0] {
                    let v = metric
                        .evaluate(&softmax(&c, Temperature::new(t).unwrap()))
                        .unwrap();
                    assert!(v <= prev + 1e-12);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn gray_rendering_spans_metric_range() {
        let probs = ProbabilityVolume::new(1, 2, 3, {
            let mut v = dirac(4, 1);
            v.extend([0.25; 4]);
            v
        })
        .unwrap();
        assert_eq!(entropy(&probs).to_gray8(), vec![0, 255]);
        assert_eq!(msm(&probs).to_gray8(), vec![0, 255]);
        assert_eq!(per(&probs, 0.5).unwrap().to_gray8(), vec![0, 255]);
    }

    fn prob_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..40).prop_filter_map("non-zero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_within_bounds(p in prob_vector()) {
            let h = entropy_of(&p);
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn msm_ignores_permutations_of_the_rest(p in prob_vector(), seed in any::<u64>()) {
            let i1 = argmax(&p);
            let mut rest: Vec<f64> = p.iter().enumerate().filter(|(i, _)| *i != i1).map(|(_, v)| *v).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..rest.len()).rev() {
                rest.swap(i, rng.random_range(0..=i));
            }
            rest.insert(i1, p[i1]);
            prop_assert_eq!(msm_of(&p), msm_of(&rest));
        }

        #[test]
        fn per_within_bounds(p in prob_vector(), s in 0.05f64..2.0) {
            let v = per_of(&p, s).unwrap();
            prop_assert!(v >= (-1.0 / (s * s)).exp() - 1e-12);
            prop_assert!(v <= 1.0 + 1e-12);
        }
    }
}
