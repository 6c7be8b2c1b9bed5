//! Hand-built distributions and cost vectors used by the examples, the
//! simulator cases and the test suites.
//!
//! Distributions are written down as probabilities and turned into costs with
//! [`costs_from_probs`]. A case tied to a reference temperature `t_ref`
//! reproduces its probabilities exactly when read out at that temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hypotheses in the 20-plane toy examples (indices 0..=19).
pub const TOY_HYPOTHESES: usize = 20;

/// Costs `-ln p(i) / t_ref`, so that `softmax(-t_ref * C) = p`.
pub fn costs_from_probs(p: &[f64], t_ref: f64) -> Vec<f64> {
    p.iter().map(|v| -v.ln() / t_ref).collect()
}

/// A 20-plane distribution with the given peaks and the leftover mass spread
/// evenly across the remaining indices.
pub fn peaked(peaks: &[(usize, f64)]) -> Vec<f64> {
    let n = TOY_HYPOTHESES;
    let mass: f64 = peaks.iter().map(|(_, v)| v).sum();
    let rest = (1.0 - mass) / (n - peaks.len()) as f64;
    let mut p = vec![rest; n];
    for &(i, v) in peaks {
        p[i] = v;
    }
    p
}

/// Unimodal, predominantly unimodal and two-peak distributions around index 9,
/// in order of increasing uncertainty.
pub fn sharpness_shapes() -> [Vec<f64>; 3] {
    [
        peaked(&[(9, 0.9), (8, 0.04), (10, 0.04)]),
        peaked(&[(9, 0.6), (8, 0.15), (10, 0.15)]),
        peaked(&[(9, 0.4), (3, 0.4)]),
    ]
}

/// Correct index of [`temperature_toy_costs`].
pub const TEMPERATURE_TOY_GT: usize = 12;

/// A 20-plane cost curve with its minimum at index 12 and a shallower
/// secondary valley at index 5. The best-to-second-best margin is 0.58.
pub fn temperature_toy_costs() -> Vec<f64> {
    (0..TOY_HYPOTHESES)
        .map(|i| {
            if i == TEMPERATURE_TOY_GT {
                0.0
            } else {
                let a = 0.5 + 0.08 * (i as f64 - 12.0).abs();
                let b = 0.75 + 0.08 * (i as f64 - 5.0).abs();
                a.min(b)
            }
        })
        .collect()
}

/// Named starting points for the per-pixel gradient-flow simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyCase {
    /// Multimodal, but the largest peak already sits at the true index.
    Fig5a,
    /// Largest peak at a wrong index, faint mass at the true index.
    Fig5b,
    /// Two equal peaks with a 1e-6 tilt towards the lower index; no label.
    Bimodal,
    /// Nearly flat costs with a small deterministic ripple; no label.
    Uniform,
}

/// Reference temperature at which the labeled case distributions are specified.
pub const CASE_T_REF: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyInit {
    pub costs: Vec<f64>,
    pub gt: Option<f64>,
}

impl ToyCase {
    pub const ALL: [ToyCase; 4] = [
        ToyCase::Fig5a,
        ToyCase::Fig5b,
        ToyCase::Bimodal,
        ToyCase::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyCase::Fig5a => "fig5a",
            ToyCase::Fig5b => "fig5b",
            ToyCase::Bimodal => "bimodal",
            ToyCase::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Option<ToyCase> {
        ToyCase::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn init(self) -> ToyInit {
        match self {
            ToyCase::Fig5a => ToyInit {
                costs: costs_from_probs(&peaked(&[(10, 0.35), (3, 0.3), (15, 0.15)]), CASE_T_REF),
                gt: Some(10.0),
            },
            ToyCase::Fig5b => ToyInit {
                costs: costs_from_probs(&peaked(&[(14, 0.6), (6, 0.1)]), CASE_T_REF),
                gt: Some(6.0),
            },
            ToyCase::Bimodal => {
                let mut costs = costs_from_probs(&peaked(&[(5, 0.4), (14, 0.4)]), 1.0);
                // An exactly symmetric pair is a saddle of the entropy flow.
                costs[5] -= 1e-6;
                ToyInit { costs, gt: None }
            }
            ToyCase::Uniform => ToyInit {
                costs: (0..32).map(|i| 0.2 * (1.7 * i as f64).sin()).collect(),
                gt: None,
            },
        }
    }
}

/// A random cost vector with a few low-cost modes over a high-cost floor.
pub fn random_multimodal<R: Rng + ?Sized>(rng: &mut R, len: usize, modes: usize) -> Vec<f64> {
    let mut costs: Vec<f64> = (0..len).map(|_| rng.random_range(1.5..3.0)).collect();
    let mut picked = Vec::with_capacity(modes);
    while picked.len() < modes.min(len) {
        let i = rng.random_range(0..len);
        if !picked.contains(&i) {
            picked.push(i);
            costs[i] = rng.random_range(0.0..0.3);
        }
    }
    costs
}
