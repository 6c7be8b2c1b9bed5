//! Central finite-difference verification of the analytic gradients.
//!
//! Errors are reported two ways. The absolute error is the largest entry-wise
//! `|analytic - numeric|`. The relative error divides that by the larger of
//! the two gradients' max-norms, so entries that are numerically zero do not
//! blow the ratio up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::objective::PixelObjective;
use crate::uncertainty::{UncertaintyMetric, DEFAULT_PER_SCALE};
use crate::volume::{argmax, expected_index, softmax, Temperature};

/// Step used unless a caller overrides it.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Acceptance threshold on the relative error.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Entry where the absolute error peaks.
    pub worst_index: usize,
}

/// Compares `analytic` against central differences of `loss` at `x`.
pub fn finite_difference_check(
    x: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    if x.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} coordinates but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut y = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        y[j] = x[j] + h;
        let plus = loss(&y);
        y[j] = x[j] - h;
        let minus = loss(&y);
        y[j] = x[j];
        numeric.push((plus - minus) / (2.0 * h));
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let (worst_index, max_abs_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    let max_rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
    Ok(GradCheckReport {
        max_abs_err,
        max_rel_err,
        worst_index,
    })
}

/// The losses the harness knows how to check on a cost vector.
#[derive(Debug, Clone, PartialEq)]
pub enum LossId {
    /// `sum_j a_j C(j)`.
    Linear(Vec<f64>),
    /// Smooth L1 of the temperature-scaled soft argmin against `gt`.
    SmoothL1 { gt: f64 },
    /// One uncertainty metric of the temperature-scaled softmax.
    Uncertainty(UncertaintyMetric),
    /// Source smooth L1 plus `lambda` times target uncertainty. The checked
    /// vector is the source costs followed by the target costs, equal halves.
    Combined {
        gt: f64,
        lambda: f64,
        metric: UncertaintyMetric,
    },
}

impl LossId {
    pub fn label(&self) -> String {
        match self {
            LossId::Linear(_) => "linear".into(),
            LossId::SmoothL1 { .. } => "smooth_l1".into(),
            LossId::Uncertainty(m) => m.name().into(),
            LossId::Combined { metric, .. } => format!("combined_{}", metric.name()),
        }
    }
}

/// Deliberate gradient corruption, for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    SignFlip,
}

fn ensure_smooth_l1_differentiable(costs: &[f64], gt: f64, t: Temperature, h: f64) -> Result<()> {
    let p = softmax(costs, t);
    let d = expected_index(&p);
    // How far one step along any axis can move d.
    let reach = p
        .iter()
        .enumerate()
        .map(|(j, pj)| t.value() * pj * (d - j as f64).abs())
        .fold(0.0, f64::max)
        * h;
    let distance = ((d - gt).abs() - 1.0).abs();
    if distance <= (1e-3f64).max(10.0 * reach) {
        return Err(Error::Resample(format!(
            "|d - gt| = {} is within {distance} of the smooth-L1 kink",
            (d - gt).abs()
        )));
    }
    Ok(())
}

fn ensure_argmax_stable(costs: &[f64], t: Temperature, h: f64) -> Result<()> {
    let p = softmax(costs, t);
    let i1 = argmax(&p);
    let second = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != i1)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    if p[i1] - second <= 10.0 * h * t.value() {
        return Err(Error::Resample(format!(
            "argmax margin {} too small for step {h}",
            p[i1] - second
        )));
    }
    Ok(())
}

fn needs_stable_argmax(metric: UncertaintyMetric) -> bool {
    !matches!(metric, UncertaintyMetric::Entropy)
}

type ScalarLoss = Box<dyn Fn(&[f64]) -> f64>;

/// Checks one loss at one point, refusing points near a non-differentiable set.
pub fn check_loss(
    costs: &[f64],
    id: &LossId,
    t: Temperature,
    h: f64,
    fault: Fault,
) -> Result<GradCheckReport> {
    let (loss, mut grad): (ScalarLoss, Vec<f64>) = match id {
        LossId::Linear(a) => {
            if a.len() != costs.len() {
                return Err(Error::Shape("linear weights vs costs".into()));
            }
            let a = a.clone();
            let grad = a.clone();
            (
                Box::new(move |x: &[f64]| x.iter().zip(&a).map(|(x, a)| x * a).sum()),
                grad,
            )
        }
        LossId::SmoothL1 { gt } => {
            ensure_smooth_l1_differentiable(costs, *gt, t, h)?;
            let obj = PixelObjective {
                t,
                lambda: 0.0,
                metric: UncertaintyMetric::Entropy,
                gt: Some(*gt),
            };
            (Box::new(move |x: &[f64]| obj.loss(x)), obj.gradient(costs))
        }
        LossId::Uncertainty(metric) => {
            if needs_stable_argmax(*metric) {
                ensure_argmax_stable(costs, t, h)?;
            }
            let obj = PixelObjective {
                t,
                lambda: 1.0,
                metric: *metric,
                gt: None,
            };
            (Box::new(move |x: &[f64]| obj.loss(x)), obj.gradient(costs))
        }
        LossId::Combined { gt, lambda, metric } => {
            if !costs.len().is_multiple_of(2) || costs.len() < 4 {
                return Err(Error::Shape(
                    "combined check needs equal source and target halves".into(),
                ));
            }
            let half = costs.len() / 2;
            let (src, tgt) = costs.split_at(half);
            ensure_smooth_l1_differentiable(src, *gt, t, h)?;
            if needs_stable_argmax(*metric) {
                ensure_argmax_stable(tgt, t, h)?;
            }
            let source = PixelObjective {
                t,
                lambda: 0.0,
                metric: *metric,
                gt: Some(*gt),
            };
            let target = PixelObjective {
                t,
                lambda: *lambda,
                metric: *metric,
                gt: None,
            };
            let mut grad = source.gradient(src);
            grad.extend(target.gradient(tgt));
            (
                Box::new(move |x: &[f64]| {
                    let (s, g) = x.split_at(half);
                    source.loss(s) + target.loss(g)
                }),
                grad,
            )
        }
    };
    if fault == Fault::SignFlip {
        grad.iter_mut().for_each(|g| *g = -*g);
    }
    finite_difference_check(costs, loss, &grad, h)
}

/// One row of the suite: the worst case over all sampled vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub loss: String,
    pub t: f64,
    pub h: f64,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub samples: usize,
    pub resampled: usize,
}

impl SuiteRow {
    pub fn passes(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub samples: usize,
    pub len: usize,
    pub h: f64,
    pub per_s: f64,
    pub fault: Fault,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            samples: 100,
            len: 32,
            h: DEFAULT_STEP,
            per_s: DEFAULT_PER_SCALE,
            fault: Fault::None,
        }
    }
}

/// Temperatures every loss is checked at.
pub const SUITE_TEMPERATURES: [f64; 3] = [1.0, 4.0, 16.0];

/// Every loss at every suite temperature, on random vectors with entries in
/// `[0, 3)` and labels in `[0, len - 1)`. Points rejected as
/// non-differentiable are redrawn, at most 1000 times per row.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    let metrics = UncertaintyMetric::all(cfg.per_s);
    for &tv in &SUITE_TEMPERATURES {
        let t = Temperature::new(tv)?;
        let mut kinds: Vec<Box<dyn Fn(f64) -> LossId>> = vec![Box::new(|gt| LossId::SmoothL1 { gt })];
        for m in metrics {
            kinds.push(Box::new(move |_| LossId::Uncertainty(m)));
        }
        for m in metrics {
            kinds.push(Box::new(move |gt| LossId::Combined {
                gt,
                lambda: m.default_lambda(),
                metric: m,
            }));
        }
        for (k, make) in kinds.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((k as u64) << 32) ^ tv.to_bits());
            let mut row = SuiteRow {
                loss: String::new(),
                t: tv,
                h: cfg.h,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
                samples: 0,
                resampled: 0,
            };
            while row.samples < cfg.samples {
                let gt = rng.random_range(0.0..(cfg.len - 1) as f64);
                let id = make(gt);
                let len = if matches!(id, LossId::Combined { .. }) {
                    2 * cfg.len
                } else {
                    cfg.len
                };
                let costs: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
                row.loss = id.label();
                match check_loss(&costs, &id, t, cfg.h, cfg.fault) {
                    Ok(r) => {
                        row.max_abs_err = row.max_abs_err.max(r.max_abs_err);
                        row.max_rel_err = row.max_rel_err.max(r.max_rel_err);
                        row.samples += 1;
                    }
                    Err(Error::Resample(_)) => {
                        row.resampled += 1;
                        if row.resampled > 1000 {
                            return Err(Error::Degenerate(format!(
                                "{}: too many rejected sample points",
                                row.loss
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let r = check_loss(&x, &LossId::Linear(a), Temperature::ONE, 1e-5, Fault::None).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn smooth_l1_and_entropy_pass_at_sharp_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let t = Temperature::new(16.0).unwrap();
        let mut done = 0;
        while done < 20 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..3.0)).collect();
            let gt = rng.random_range(0.0..31.0);
            match check_loss(&x, &LossId::SmoothL1 { gt }, t, DEFAULT_STEP, Fault::None) {
                Ok(r) => assert!(r.max_rel_err < TOLERANCE, "{r:?}"),
                Err(Error::Resample(_)) => continue,
                Err(e) => panic!("{e}"),
            }
            let r = check_loss(
                &x,
                &LossId::Uncertainty(UncertaintyMetric::Entropy),
                t,
                DEFAULT_STEP,
                Fault::None,
            )
            .unwrap();
            assert!(r.max_rel_err < TOLERANCE, "{r:?}");
            done += 1;
        }
    }

    #[test]
    fn kink_and_tie_points_are_refused() {
        // Uniform costs: d = 3.5, so gt = 2.5 lands exactly on the kink.
        let x = vec![1.0; 8];
        let err = check_loss(
            &x,
            &LossId::SmoothL1 { gt: 2.5 },
            Temperature::ONE,
            1e-5,
            Fault::None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Resample(_)));
        let err = check_loss(
            &x,
            &LossId::Uncertainty(UncertaintyMetric::Msm),
            Temperature::ONE,
            1e-5,
            Fault::None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Resample(_)));
    }

    #[test]
    fn sign_flip_is_detected() {
        let cfg = SuiteConfig {
            samples: 5,
            fault: Fault::SignFlip,
            ..SuiteConfig::default()
        };
        let rows = run_suite(&cfg).unwrap();
        assert!(rows.iter().all(|r| !r.passes()));
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_difference_check(&[0.0], |_| 0.0, &[0.0], 0.0).is_err());
        assert!(finite_difference_check(&[0.0], |_| 0.0, &[0.0, 1.0], 1e-5).is_err());
    }
}
