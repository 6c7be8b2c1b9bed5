//! Pseudo-labels: the predicted disparity with the most uncertain pixels removed.

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMap;
use crate::volume::{ensure_same_shape, DisparityMap, ValidityMask};

/// Default fraction of pixels, in percent, dropped from a pseudo-label.
pub const DEFAULT_DELTA_PERCENT: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    /// Prediction at valid pixels, 0 elsewhere.
    pub disparity: DisparityMap,
    pub validity: ValidityMask,
    pub delta_percent: f64,
    /// Uncertainty threshold; pixels strictly above it are dropped.
    pub threshold: f64,
}

impl PseudoLabel {
    pub fn valid_fraction(&self) -> f64 {
        self.validity.count() as f64 / self.validity.as_slice().len() as f64
    }
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(q/100 * n)` of
/// the ascending order, with rank clamped to `[1, n]`.
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty set".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in percentile input".into()));
    }
    let n = values.len();
    // The epsilon keeps products such as 0.8 * 10 from rounding up to 9.
    let rank = ((q / 100.0 * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = values.to_vec();
    let (_, v, _) = sorted.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*v)
}

/// Drops the `delta_percent`% most uncertain pixels of `disp`.
///
/// The threshold is the nearest-rank `(100 - delta)`-th percentile of the
/// uncertainty values. Pixels with uncertainty equal to the threshold stay.
pub fn make_pseudo_label(
    disp: &DisparityMap,
    unc: &UncertaintyMap,
    delta_percent: f64,
) -> Result<PseudoLabel> {
    if !(delta_percent > 0.0 && delta_percent < 100.0) {
        return Err(Error::InvalidInput(format!(
            "delta must lie strictly between 0 and 100, got {delta_percent}"
        )));
    }
    ensure_same_shape(disp, unc, "disparity vs uncertainty")?;
    let threshold = nearest_rank_percentile(unc.values(), 100.0 - delta_percent)?;
    let valid: Vec<bool> = unc.values().iter().map(|u| *u <= threshold).collect();
    let values = disp
        .values()
        .iter()
        .zip(&valid)
        .map(|(d, ok)| if *ok { *d } else { 0.0 })
        .collect();
    Ok(PseudoLabel {
        disparity: DisparityMap::new(disp.height(), disp.width(), values)?,
        validity: ValidityMask::new(disp.height(), disp.width(), valid)?,
        delta_percent,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::error_stats;
    use crate::uncertainty::UncertaintyMetric;
    use proptest::prelude::*;

    fn unc(values: Vec<f64>) -> UncertaintyMap {
        let n = values.len();
        UncertaintyMap::new(1, n, values, UncertaintyMetric::Msm, 8).unwrap()
    }

    #[test]
    fn drops_only_the_most_uncertain_quarter() {
        let disp = DisparityMap::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let label = make_pseudo_label(&disp, &unc(vec![0.1, 0.9, 0.5, 0.2]), 25.0).unwrap();
        assert_eq!(label.threshold, 0.5);
        assert_eq!(label.validity.as_slice(), &[true, false, true, true]);
        assert_eq!(label.disparity.values(), &[1.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_uncertainty_keeps_everything() {
        let disp = DisparityMap::new(1, 5, vec![2.0; 5]).unwrap();
        for delta in [1.0, 20.0, 50.0, 99.0] {
            let label = make_pseudo_label(&disp, &unc(vec![0.3; 5]), delta).unwrap();
            assert_eq!(label.validity.count(), 5);
        }
    }

    #[test]
    fn delta_out_of_range() {
        let disp = DisparityMap::new(1, 2, vec![2.0; 2]).unwrap();
        for delta in [0.0, 100.0, -5.0, f64::NAN] {
            assert!(matches!(
                make_pseudo_label(&disp, &unc(vec![0.3, 0.4]), delta),
                Err(Error::InvalidInput(_))
            ));
        }
    }

    #[test]
    fn twenty_percent_keeps_eighty() {
        let n = 1000;
        let values: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let disp = DisparityMap::new(1, n, vec![1.0; n]).unwrap();
        let label = make_pseudo_label(&disp, &unc(values), 20.0).unwrap();
        assert!((label.validity.count() as f64 - 0.8 * n as f64).abs() <= 1.0);
    }

    #[test]
    fn ranking_uncertainty_lowers_d1() {
        // Uncertainty equal to the absolute error.
        let n = 200;
        let gt = DisparityMap::new(1, n, vec![10.0; n]).unwrap();
        let pred_vals: Vec<f64> = (0..n).map(|i| 10.0 + ((i * 37) % 11) as f64 * 0.7).collect();
        let pred = DisparityMap::new(1, n, pred_vals.clone()).unwrap();
        let errors: Vec<f64> = pred_vals.iter().map(|p| (p - 10.0).abs()).collect();
        let full = ValidityMask::all_valid(1, n);
        let mut prev = error_stats(&pred, &gt, &full).unwrap().d1_all;
        for delta in [5.0, 10.0, 20.0, 40.0, 60.0] {
            let label = make_pseudo_label(&pred, &unc(errors.clone()), delta).unwrap();
            let d1 = error_stats(&pred, &gt, &label.validity).unwrap().d1_all;
            assert!(d1 <= prev);
            prev = d1;
        }
    }

    proptest! {
        #[test]
        fn valid_sets_shrink_with_delta(
            values in prop::collection::vec(0.0f64..1.0, 1..200),
            d1 in 1.0f64..98.0,
            gap in 0.5f64..50.0,
        ) {
            let d2 = (d1 + gap).min(99.0);
            let n = values.len();
            let disp = DisparityMap::new(1, n, vec![3.0; n]).unwrap();
            let a = make_pseudo_label(&disp, &unc(values.clone()), d1).unwrap();
            let b = make_pseudo_label(&disp, &unc(values.clone()), d2).unwrap();
            for (va, vb) in a.validity.as_slice().iter().zip(b.validity.as_slice()) {
                prop_assert!(!vb || *va);
            }
            for ((u, ok), d) in values.iter().zip(b.validity.as_slice()).zip(b.disparity.values()) {
                prop_assert_eq!(*ok, *u <= b.threshold);
                if !ok {
                    prop_assert_eq!(*d, 0.0);
                }
            }
        }
    }
}
