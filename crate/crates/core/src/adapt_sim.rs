//! Gradient descent on a single cost vector under the combined loss.
//!
//! The optimization variable is the cost vector itself, standing in for the
//! logits a network would emit for one pixel. With no label the flow only
//! feels the uncertainty term; with a label the temperature-scaled smooth L1
//! pulls the soft argmin towards it. Probabilities are recomputed from the
//! costs at every step.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::PixelObjective;
use crate::uncertainty::{entropy_of, UncertaintyMetric};
use crate::volume::{argmax, expected_index, softmax, Temperature};

/// Maximum number of step halvings per iteration.
pub const MAX_HALVINGS: usize = 30;

/// A step whose gradient max-norm is below this is treated as stationary.
pub const STATIONARY_GRADIENT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t: Temperature,
    pub lambda: f64,
    pub metric: UncertaintyMetric,
    pub step_size: f64,
    pub max_steps: usize,
    /// Halve the step until the loss does not increase.
    pub line_search: bool,
    /// Label for the pixel; `None` runs the unsupervised flow.
    pub gt: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t: Temperature::new(16.0).expect("positive"),
            lambda: UncertaintyMetric::Entropy.default_lambda(),
            metric: UncertaintyMetric::Entropy,
            step_size: 0.05,
            max_steps: 2000,
            line_search: true,
            gt: None,
        }
    }
}

impl SimConfig {
    /// Entropy only, `t = 1`, `lambda = 1`, no label.
    pub fn pure_entropy() -> Self {
        SimConfig {
            t: Temperature::ONE,
            lambda: 1.0,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidInput("lambda must be finite".into()));
        }
        Ok(())
    }

    fn objective(&self) -> PixelObjective {
        PixelObjective {
            t: self.t,
            lambda: self.lambda,
            metric: self.metric,
            gt: self.gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub entropy: f64,
    pub max_prob: f64,
    pub disparity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    /// Gradient vanished.
    Stationary,
    /// No halving of the step reduced the loss.
    LineSearchExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceLog {
    pub records: Vec<StepRecord>,
    pub final_costs: Vec<f64>,
    pub stop: StopReason,
}

impl ConvergenceLog {
    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("a log holds at least the initial state")
    }

    /// First step at which `|disparity - gt| < threshold`.
    pub fn steps_to_threshold(&self, gt: f64, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| (r.disparity - gt).abs() < threshold)
            .map(|r| r.step)
    }

    /// Most probable index of the final distribution.
    pub fn final_argmax(&self, t: Temperature) -> usize {
        argmax(&softmax(&self.final_costs, t))
    }

    /// Steps from the first entropy at or below 90% of the initial value to the
    /// first step with peak probability above 0.99, inclusive.
    pub fn concentration_window(&self) -> Option<Range<usize>> {
        let h0 = self.records.first()?.entropy;
        let start = self.records.iter().position(|r| r.entropy <= 0.9 * h0)?;
        let end = self.records.iter().position(|r| r.max_prob > 0.99)?;
        (end > start).then_some(start..end + 1)
    }

    /// Decay fit over [`Self::concentration_window`].
    pub fn decay(&self) -> Option<DecayFit> {
        fit_decay_rate(self, self.concentration_window()?).ok()
    }
}

fn record(step: usize, costs: &[f64], cfg: &SimConfig, loss: f64) -> StepRecord {
    let p = softmax(costs, cfg.t);
    StepRecord {
        step,
        loss,
        entropy: entropy_of(&p),
        max_prob: p.iter().copied().fold(0.0, f64::max),
        disparity: expected_index(&p),
    }
}

/// Runs gradient descent from `init_cost` and returns the full trajectory.
pub fn simulate_pixel(init_cost: &[f64], cfg: &SimConfig) -> Result<ConvergenceLog> {
    cfg.validate()?;
    if init_cost.len() < 2 {
        return Err(Error::InvalidInput(
            "a cost vector needs at least two hypotheses".into(),
        ));
    }
    if let Some(i) = init_cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite initial cost at index {i}")));
    }
    let d_max = (init_cost.len() - 1) as f64;
    if let Some(gt) = cfg.gt {
        if !(0.0..=d_max).contains(&gt) {
            return Err(Error::InvalidInput(format!(
                "ground truth {gt} outside [0, {d_max}]"
            )));
        }
    }

    let obj = cfg.objective();
    let mut costs = init_cost.to_vec();
    let mut loss = obj.loss(&costs);
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0, loss });
    }
    let mut records = vec![record(0, &costs, cfg, loss)];
    let mut stop = StopReason::MaxSteps;
    let mut candidate = vec![0.0; costs.len()];

    for step in 1..=cfg.max_steps {
        let grad = obj.gradient(&costs);
        if grad.iter().all(|g| g.abs() < STATIONARY_GRADIENT) {
            stop = StopReason::Stationary;
            break;
        }
        let mut rate = cfg.step_size;
        let mut accepted = None;
        let attempts = if cfg.line_search { MAX_HALVINGS + 1 } else { 1 };
        for _ in 0..attempts {
            for ((c, x), g) in candidate.iter_mut().zip(&costs).zip(&grad) {
                *c = x - rate * g;
            }
            let next = obj.loss(&candidate);
            if !cfg.line_search || next <= loss {
                accepted = Some(next);
                break;
            }
            rate *= 0.5;
        }
        let Some(next) = accepted else {
            stop = StopReason::LineSearchExhausted;
            break;
        };
        if !next.is_finite() || candidate.iter().any(|c| !c.is_finite()) {
            return Err(Error::Divergence { step, loss: next });
        }
        std::mem::swap(&mut costs, &mut candidate);
        loss = next;
        records.push(record(step, &costs, cfg, loss));
    }

    Ok(ConvergenceLog {
        records,
        final_costs: costs,
        stop,
    })
}

/// Runs independent simulations in parallel, one per initial cost vector.
pub fn simulate_batch(inits: &[Vec<f64>], cfg: &SimConfig) -> Vec<Result<ConvergenceLog>> {
    inits.par_iter().map(|c| simulate_pixel(c, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseBReport {
    pub log: ConvergenceLog,
    pub initial_argmax: usize,
    pub final_argmax: usize,
    /// The final most probable index is the labeled one.
    pub reached_gt: bool,
    /// First step with `|d - gt| < 0.5`.
    pub steps_to_half_pixel: Option<usize>,
}

/// Simulates a pixel whose peak starts at a wrong index and reports whether
/// the peak ends up at `gt`.
pub fn simulate_case_b(init_cost: &[f64], gt: f64, cfg: &SimConfig) -> Result<CaseBReport> {
    let cfg = SimConfig { gt: Some(gt), ..*cfg };
    let log = simulate_pixel(init_cost, &cfg)?;
    let initial_argmax = argmax(&softmax(init_cost, cfg.t));
    let final_argmax = log.final_argmax(cfg.t);
    let steps_to_half_pixel = log.steps_to_threshold(gt, 0.5);
    Ok(CaseBReport {
        reached_gt: final_argmax as f64 == gt.round() && (gt - gt.round()).abs() < 0.5,
        log,
        initial_argmax,
        final_argmax,
        steps_to_half_pixel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// Negated least-squares slope of `ln H` against the step index.
    pub gamma: f64,
    /// Coefficient of determination; 1 when entropy is constant over the window.
    pub r_squared: f64,
    pub window: (usize, usize),
}

/// Fits `ln H(k) = a - gamma * k` over the records whose index lies in `window`.
pub fn fit_decay_rate(log: &ConvergenceLog, window: Range<usize>) -> Result<DecayFit> {
    let records = log.records.get(window.clone()).ok_or_else(|| {
        Error::InvalidInput(format!(
            "window {window:?} outside a log of {} records",
            log.records.len()
        ))
    })?;
    if records.len() < 2 {
        return Err(Error::Degenerate(
            "decay fit needs at least two steps".into(),
        ));
    }
    if let Some(r) = records.iter().find(|r| r.entropy.is_nan() || r.entropy <= 0.0) {
        return Err(Error::Degenerate(format!(
            "entropy {} at step {} is not positive",
            r.entropy, r.step
        )));
    }
    let xs: Vec<f64> = records.iter().map(|r| r.step as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.entropy.ln()).collect();
    let (slope, r_squared) = least_squares(&xs, &ys);
    Ok(DecayFit {
        gamma: -slope,
        r_squared,
        window: (window.start, window.end),
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (my + slope * (x - mx))).powi(2))
        .sum();
    // Relative threshold: a constant series read through ln() can carry
    // rounding-level noise.
    let r_squared = if syy <= 1e-24 * n { 1.0 } else { 1.0 - ss_res / syy };
    (slope, r_squared)
}
