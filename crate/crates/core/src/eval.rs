//! Disparity error statistics and uncertainty-ordered sparsification curves.
//!
//! * `D1_all`: percentage of valid pixels whose error exceeds both 3 px and
//!   5% of the ground-truth disparity (KITTI 2015).
//! * `bad_1`: percentage of valid pixels whose error exceeds 1 px (ETH3D).
//! * `epe`: mean absolute error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMap;
use crate::volume::{ensure_same_shape, DisparityMap, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub d1_all: f64,
    pub bad_1: f64,
    pub epe: f64,
    pub n_valid: usize,
}

#[inline]
pub fn is_d1_outlier(pred: f64, gt: f64) -> bool {
    let err = (pred - gt).abs();
    err > 3.0 && err > 0.05 * gt.abs()
}

pub fn error_stats(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidityMask) -> Result<ErrorStats> {
    ensure_same_shape(pred, gt, "prediction vs ground truth")?;
    ensure_same_shape(pred, mask, "prediction vs mask")?;
    let mut n = 0usize;
    let mut d1 = 0usize;
    let mut bad1 = 0usize;
    let mut abs_sum = 0.0;
    for ((p, g), valid) in pred.values().iter().zip(gt.values()).zip(mask.as_slice()) {
        if !valid {
            continue;
        }
        let err = (p - g).abs();
        n += 1;
        abs_sum += err;
        if is_d1_outlier(*p, *g) {
            d1 += 1;
        }
        if err > 1.0 {
            bad1 += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("mask has no valid pixels".into()));
    }
    Ok(ErrorStats {
        d1_all: 100.0 * d1 as f64 / n as f64,
        bad_1: 100.0 * bad1 as f64 / n as f64,
        epe: abs_sum / n as f64,
        n_valid: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Nominal fraction of valid pixels kept.
    pub density: f64,
    pub d1_all: f64,
    /// Pixels actually kept, `floor(density * n)`.
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn at_density(&self, density: f64) -> Option<&RocPoint> {
        self.points
            .iter()
            .find(|p| (p.density - density).abs() < 1e-9)
    }
}

/// D1 of the retained pixels as the most uncertain ones are removed.
///
/// Valid pixels are ordered by decreasing uncertainty, equal values by
/// ascending row-major index. Level `k` keeps the last
/// `floor((1 - k * step) * n)` of that order. Levels run from density 1 down
/// to the smallest positive density; an empty level is never emitted.
pub fn roc_sparsification(
    pred: &DisparityMap,
    gt: &DisparityMap,
    mask: &ValidityMask,
    unc: &UncertaintyMap,
    step: f64,
) -> Result<RocCurve> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "step must lie in (0, 0.5], got {step}"
        )));
    }
    ensure_same_shape(pred, gt, "prediction vs ground truth")?;
    ensure_same_shape(pred, mask, "prediction vs mask")?;
    ensure_same_shape(pred, unc, "prediction vs uncertainty")?;

    let mut order: Vec<usize> = mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| i)
        .collect();
    let n = order.len();
    if n == 0 {
        return Err(Error::Degenerate("mask has no valid pixels".into()));
    }
    let u = unc.values();
    if order.iter().any(|&i| u[i].is_nan()) {
        return Err(Error::InvalidInput("NaN uncertainty at a valid pixel".into()));
    }
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));

    // suffix[k] = outliers among order[k..]
    let mut suffix = vec![0usize; n + 1];
    for k in (0..n).rev() {
        let i = order[k];
        suffix[k] = suffix[k + 1] + usize::from(is_d1_outlier(pred.values()[i], gt.values()[i]));
    }

    let mut points = Vec::new();
    let mut level = 0usize;
    loop {
        let density = 1.0 - level as f64 * step;
        if density <= 1e-9 {
            break;
        }
        let retained = ((density * n as f64) + 1e-9).floor() as usize;
        if retained == 0 {
            break;
        }
        let outliers = suffix[n - retained];
        points.push(RocPoint {
            density,
            d1_all: 100.0 * outliers as f64 / retained as f64,
            retained,
        });
        level += 1;
    }
    Ok(RocCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::UncertaintyMetric;
    use proptest::prelude::*;

    fn map(values: Vec<f64>) -> DisparityMap {
        let n = values.len();
        DisparityMap::new(1, n, values).unwrap()
    }

    fn unc(values: Vec<f64>) -> UncertaintyMap {
        let n = values.len();
        UncertaintyMap::new(1, n, values, UncertaintyMetric::Entropy, 33).unwrap()
    }

    #[test]
    fn hand_counted_fixtures() {
        let gt = map(vec![10.0; 4]);
        let mask = ValidityMask::all_valid(1, 4);
        let s = error_stats(&gt, &gt, &mask).unwrap();
        assert_eq!((s.d1_all, s.bad_1, s.epe, s.n_valid), (0.0, 0.0, 0.0, 4));

        let pred = map(vec![14.0, 10.0, 10.0, 10.0]);
        let s = error_stats(&pred, &gt, &mask).unwrap();
        assert_eq!(s.d1_all, 25.0);
        assert_eq!(s.bad_1, 25.0);
        assert_eq!(s.epe, 1.0);

        let s = error_stats(&map(vec![104.0]), &map(vec![100.0]), &ValidityMask::all_valid(1, 1))
            .unwrap();
        assert_eq!(s.d1_all, 0.0);
        assert_eq!(s.bad_1, 100.0);

        let empty = ValidityMask::new(1, 4, vec![false; 4]).unwrap();
        assert!(matches!(error_stats(&pred, &gt, &empty), Err(Error::Degenerate(_))));
    }

    #[test]
    fn twenty_levels_at_five_percent() {
        let n = 400;
        let gt = map(vec![5.0; n]);
        let pred = map((0..n).map(|i| 5.0 + (i % 9) as f64).collect());
        let u = unc((0..n).map(|i| (i % 13) as f64).collect());
        let curve =
            roc_sparsification(&pred, &gt, &ValidityMask::all_valid(1, n), &u, 0.05).unwrap();
        assert_eq!(curve.points.len(), 20);
        assert_eq!(curve.points[0].density, 1.0);
        for (k, p) in curve.points.iter().enumerate() {
            let exact = (1.0 - 0.05 * k as f64) * n as f64;
            assert!((p.retained as f64 - exact).abs() <= 1.0);
        }
    }

    #[test]
    fn dense_point_equals_error_stats() {
        let gt = map((0..50).map(|i| 2.0 + i as f64 * 0.5).collect());
        let pred = map((0..50).map(|i| 2.0 + ((i * 13) % 17) as f64).collect());
        let mask = ValidityMask::new(1, 50, (0..50).map(|i| i % 4 != 1).collect()).unwrap();
        let u = unc((0..50).map(|i| ((i * 7) % 5) as f64).collect());
        let curve = roc_sparsification(&pred, &gt, &mask, &u, 0.05).unwrap();
        assert_eq!(curve.points[0].d1_all, error_stats(&pred, &gt, &mask).unwrap().d1_all);
    }

    #[test]
    fn constant_uncertainty_follows_index_order() {
        // With every uncertainty equal, removal goes by ascending pixel index,
        // so each level is the D1 of a suffix of the pixels.
        let n = 100;
        let gt = map(vec![8.0; n]);
        let pred = map((0..n).map(|i| if i % 10 == 3 { 20.0 } else { 8.0 }).collect());
        let mask = ValidityMask::all_valid(1, n);
        let curve = roc_sparsification(&pred, &gt, &mask, &unc(vec![0.4; n]), 0.1).unwrap();
        for p in &curve.points {
            let kept = &pred.values()[n - p.retained..];
            let outliers = kept.iter().filter(|v| **v == 20.0).count();
            assert_eq!(p.d1_all, 100.0 * outliers as f64 / p.retained as f64);
            assert!((p.d1_all - 10.0).abs() <= 100.0 / p.retained as f64);
        }
    }

    #[test]
    fn step_validation() {
        let m = map(vec![1.0]);
        let mask = ValidityMask::all_valid(1, 1);
        for step in [0.0, 0.6, -0.1] {
            assert!(roc_sparsification(&m, &m, &mask, &unc(vec![0.0]), step).is_err());
        }
    }

    proptest! {
        #[test]
        fn oracle_uncertainty_gives_monotone_curve(
            errs in prop::collection::vec(-8.0f64..8.0, 5..300),
            gt_base in 0.0f64..32.0,
            step in 0.01f64..0.5,
        ) {
            let n = errs.len();
            let gt = map(vec![gt_base; n]);
            let pred = map(errs.iter().map(|e| gt_base + e).collect());
            let u = unc(errs.iter().map(|e| e.abs()).collect());
            let curve = roc_sparsification(&pred, &gt, &ValidityMask::all_valid(1, n), &u, step).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[1].d1_all <= w[0].d1_all + 1e-12);
                prop_assert!(w[1].density < w[0].density);
            }
        }
    }
}
