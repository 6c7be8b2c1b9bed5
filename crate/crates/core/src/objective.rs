//! Losses and their closed-form gradients with respect to the cost volume.
//!
//! Every loss here factors through the temperature-scaled softmax
//! `p = softmax(-t C)`, whose Jacobian is
//!
//! ```text
//! dp(i)/dC(j) = t * p(i) * (p(j) - [i == j])
//! ```
//!
//! so an upstream gradient `g(i) = dL/dp(i)` pulls back to
//! `dL/dC(j) = t * p(j) * (sum_i g(i) p(i) - g(j))`. The factor `t` in front
//! is exact: the Jacobian at temperature `t` is `t` times the plain-softmax
//! Jacobian formula evaluated at the same probability vector.
//!
//! MSM and PER depend on the most probable index `i1`, which is piecewise
//! constant in `C`. Their gradients hold `i1` fixed, which is the gradient
//! everywhere away from ties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{entropy_of, UncertaintyMetric};
use crate::volume::{
    anisotropic_softmax, argmax, ensure_same_shape, expected_index, readout, softmax_into,
    CostVolume, DisparityMap, Shaped, Temperature, ValidityMask,
};

/// Temperature used when nothing else is specified.
pub const DEFAULT_TEMPERATURE: f64 = 16.0;

/// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
#[inline]
pub fn smooth_l1_value(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1_value`]; at `|x| = 1` both sides agree on `±1`.
#[inline]
pub fn smooth_l1_derivative(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Masked mean smooth-L1 between a prediction and ground truth.
pub fn smooth_l1(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidityMask) -> Result<f64> {
    ensure_same_shape(pred, gt, "prediction vs ground truth")?;
    ensure_same_shape(pred, mask, "prediction vs mask")?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::Degenerate("mask has no valid pixels".into()));
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(mask.as_slice())
        .filter(|(_, m)| **m)
        .map(|((p, g), _)| smooth_l1_value(p - g))
        .sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub t: Temperature,
    pub lambda: f64,
    pub metric: UncertaintyMetric,
}

impl LossConfig {
    pub fn new(t: Temperature, lambda: f64, metric: UncertaintyMetric) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
        Ok(LossConfig { t, lambda, metric })
    }

    /// `t = 16` with the metric's default weight.
    pub fn defaults(metric: UncertaintyMetric) -> Self {
        LossConfig {
            t: Temperature::new(DEFAULT_TEMPERATURE).expect("positive"),
            lambda: metric.default_lambda(),
            metric,
        }
    }
}

/// The combined loss and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    /// `source + lambda * target`.
    pub total: f64,
    /// Smooth L1 of the temperature-scaled soft argmin on labeled pixels.
    pub source: f64,
    /// Mean uncertainty over every target pixel.
    pub target: f64,
}

/// Supervised loss on the source volume plus weighted uncertainty on the target.
pub fn combined_loss(
    source_cost: &CostVolume,
    source_gt: &DisparityMap,
    source_mask: &ValidityMask,
    target_cost: &CostVolume,
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let (_, pred) = readout(source_cost, cfg.t);
    let source = smooth_l1(&pred, source_gt, source_mask)?;
    let target_probs = anisotropic_softmax(target_cost, cfg.t);
    let full = ValidityMask::all_valid(target_cost.height(), target_cost.width());
    let target = crate::uncertainty::uncertainty_loss(&target_probs, cfg.metric, &full)?;
    Ok(CombinedLoss {
        total: source + cfg.lambda * target,
        source,
        target,
    })
}

/// `dL/dC` with the same layout as the cost volume it was taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVolume {
    height: usize,
    width: usize,
    d_max: usize,
    grads: Vec<f64>,
}

impl GradientVolume {
    fn zeros_like(cost: &CostVolume) -> Self {
        GradientVolume {
            height: cost.height(),
            width: cost.width(),
            d_max: cost.d_max(),
            grads: vec![0.0; cost.as_slice().len()],
        }
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

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let hyp = self.d_max + 1;
        let start = (row * self.width + col) * hyp;
        &self.grads[start..start + hyp]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }
}

impl Shaped for GradientVolume {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Pulls `g = dL/dp` back through the softmax at temperature `t`.
pub fn pull_back_through_softmax(p: &[f64], g: &[f64], t: Temperature, out: &mut [f64]) {
    let mean: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
    let t = t.value();
    for ((o, pj), gj) in out.iter_mut().zip(p).zip(g) {
        *o = t * pj * (mean - gj);
    }
}

/// Full Jacobian `dp(i)/dC(j)` of the temperature-scaled softmax, row-major in `i`.
pub fn softmax_jacobian(p: &[f64], t: Temperature) -> Vec<f64> {
    let n = p.len();
    let t = t.value();
    let mut jac = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[i * n + j] = t * p[i] * (p[j] - delta);
        }
    }
    jac
}

/// `dU/dp` for one probability vector, with the argmax held fixed.
pub fn metric_gradient_wrt_probs(p: &[f64], metric: UncertaintyMetric) -> Vec<f64> {
    let n = p.len();
    let mut g = vec![0.0; n];
    match metric {
        UncertaintyMetric::Msm => {
            g[argmax(p)] = -1.0;
        }
        UncertaintyMetric::Entropy => {
            for (gi, pi) in g.iter_mut().zip(p) {
                // -1 - ln p, finite only where p > 0; zero-probability
                // entries are multiplied by p(j) = 0 downstream.
                *gi = if *pi > 0.0 { -1.0 - pi.ln() } else { 0.0 };
            }
        }
        UncertaintyMetric::Per { s } => {
            let i1 = argmax(p);
            let m = (n - 1) as f64;
            let s2 = s * s;
            let mut peak = 0.0;
            for i in (0..n).filter(|i| *i != i1) {
                let gap = p[i1] - p[i];
                let w = 2.0 * gap / (m * s2) * (-gap * gap / s2).exp();
                g[i] = w;
                peak -= w;
            }
            g[i1] = peak;
        }
    }
    g
}

/// Gradient of one pixel's uncertainty with respect to its costs.
pub fn pixel_uncertainty_gradient(
    costs: &[f64],
    metric: UncertaintyMetric,
    t: Temperature,
    out: &mut [f64],
) {
    let mut p = vec![0.0; costs.len()];
    softmax_into(costs, t, &mut p);
    match metric {
        UncertaintyMetric::Entropy => {
            let h = entropy_of(&p);
            let tv = t.value();
            for (o, pj) in out.iter_mut().zip(&p) {
                *o = if *pj > 0.0 { tv * pj * (pj.ln() + h) } else { 0.0 };
            }
        }
        _ => {
            let g = metric_gradient_wrt_probs(&p, metric);
            pull_back_through_softmax(&p, &g, t, out);
        }
    }
}

/// Gradient of one pixel's smooth-L1 term: `rho'(d - gt) * t * p(j) * (d - j)`.
pub fn pixel_smooth_l1_gradient(costs: &[f64], gt: f64, t: Temperature, out: &mut [f64]) {
    let mut p = vec![0.0; costs.len()];
    softmax_into(costs, t, &mut p);
    let d = expected_index(&p);
    let scale = smooth_l1_derivative(d - gt) * t.value();
    for (j, (o, pj)) in out.iter_mut().zip(&p).enumerate() {
        *o = scale * pj * (d - j as f64);
    }
}

/// Gradient of the masked smooth-L1 of the temperature-scaled soft argmin.
pub fn grad_smooth_l1_wrt_cost(
    cost: &CostVolume,
    gt: &DisparityMap,
    mask: &ValidityMask,
    t: Temperature,
) -> Result<GradientVolume> {
    ensure_same_shape(cost, gt, "cost vs ground truth")?;
    ensure_same_shape(cost, mask, "cost vs mask")?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::Degenerate("mask has no valid pixels".into()));
    }
    let mut out = GradientVolume::zeros_like(cost);
    let hyp = cost.hypotheses();
    let inv_n = 1.0 / n as f64;
    out.grads
        .par_chunks_mut(hyp)
        .zip(cost.as_slice().par_chunks(hyp))
        .zip(gt.values().par_iter().zip(mask.as_slice().par_iter()))
        .for_each(|((o, c), (g, valid))| {
            if *valid {
                pixel_smooth_l1_gradient(c, *g, t, o);
                o.iter_mut().for_each(|v| *v *= inv_n);
            }
        });
    Ok(out)
}

/// Gradient of the mean uncertainty over all pixels of `cost`.
pub fn grad_uncertainty_wrt_cost(
    cost: &CostVolume,
    metric: UncertaintyMetric,
    t: Temperature,
) -> GradientVolume {
    let mut out = GradientVolume::zeros_like(cost);
    let hyp = cost.hypotheses();
    let inv_n = 1.0 / cost.pixel_count() as f64;
    out.grads
        .par_chunks_mut(hyp)
        .zip(cost.as_slice().par_chunks(hyp))
        .for_each(|(o, c)| {
            pixel_uncertainty_gradient(c, metric, t, o);
            o.iter_mut().for_each(|v| *v *= inv_n);
        });
    out
}

/// Gradients of [`combined_loss`] with respect to the source and target costs.
pub fn grad_combined(
    source_cost: &CostVolume,
    source_gt: &DisparityMap,
    source_mask: &ValidityMask,
    target_cost: &CostVolume,
    cfg: &LossConfig,
) -> Result<(GradientVolume, GradientVolume)> {
    let source = grad_smooth_l1_wrt_cost(source_cost, source_gt, source_mask, cfg.t)?;
    let mut target = grad_uncertainty_wrt_cost(target_cost, cfg.metric, cfg.t);
    target.grads.iter_mut().for_each(|v| *v *= cfg.lambda);
    Ok((source, target))
}

/// Loss on a single cost vector: optional smooth-L1 anchor plus weighted uncertainty.
///
/// This is the per-pixel form of the combined loss with source and target
/// sharing one cost vector, as used by the gradient-flow simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObjective {
    pub t: Temperature,
    pub lambda: f64,
    pub metric: UncertaintyMetric,
    pub gt: Option<f64>,
}

impl PixelObjective {
    pub fn loss(&self, costs: &[f64]) -> f64 {
        let mut p = vec![0.0; costs.len()];
        softmax_into(costs, self.t, &mut p);
        let mut loss = 0.0;
        if let Some(gt) = self.gt {
            loss += smooth_l1_value(expected_index(&p) - gt);
        }
        if self.lambda != 0.0 {
            loss += self.lambda
                * self
                    .metric
                    .evaluate(&p)
                    .expect("cost vectors have at least two hypotheses");
        }
        loss
    }

    pub fn gradient(&self, costs: &[f64]) -> Vec<f64> {
        let n = costs.len();
        let mut grad = vec![0.0; n];
        if let Some(gt) = self.gt {
            pixel_smooth_l1_gradient(costs, gt, self.t, &mut grad);
        }
        if self.lambda != 0.0 {
            let mut u = vec![0.0; n];
            pixel_uncertainty_gradient(costs, self.metric, self.t, &mut u);
            for (g, v) in grad.iter_mut().zip(u) {
                *g += self.lambda * v;
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::softmax;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    fn random_costs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..3.0)).collect()
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|j| {
                y[j] = x[j] + h;
                let fp = f(&y);
                y[j] = x[j] - h;
                let fm = f(&y);
                y[j] = x[j];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn scaled_error(a: &[f64], b: &[f64]) -> f64 {
        let scale = a
            .iter()
            .chain(b)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale
    }

    // Complex-step derivative of softmax(-t C) along e_j; no cancellation error.
    fn complex_step_column(c: &[f64], temp: f64, j: usize) -> Vec<f64> {
        let h = 1e-30;
        let z: Vec<Complex64> = c
            .iter()
            .enumerate()
            .map(|(k, v)| Complex64::new(*v, if k == j { h } else { 0.0 }))
            .collect();
        let shift = c.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<Complex64> = z.iter().map(|v| (-(v - shift) * temp).exp()).collect();
        let sum: Complex64 = e.iter().sum();
        e.iter().map(|v| (v / sum).im / h).collect()
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1_value(0.5), 0.125);
        assert_eq!(smooth_l1_value(-0.5), 0.125);
        assert_eq!(smooth_l1_value(2.0), 1.5);
        assert_eq!(smooth_l1_value(1.0), 0.5);
        assert_eq!(smooth_l1_value(1.0 - 1e-12), 0.5 * (1.0 - 1e-12f64).powi(2));
        assert_eq!(smooth_l1_derivative(1.0), 1.0);
        assert_eq!(smooth_l1_derivative(-3.0), -1.0);

        let pred = DisparityMap::new(1, 3, vec![1.5, 5.0, 9.0]).unwrap();
        let gt = DisparityMap::new(1, 3, vec![1.0, 3.0, 0.0]).unwrap();
        let mask = ValidityMask::new(1, 3, vec![true, true, false]).unwrap();
        assert_eq!(smooth_l1(&pred, &gt, &mask).unwrap(), (0.125 + 1.5) / 2.0);
        let empty = ValidityMask::new(1, 3, vec![false; 3]).unwrap();
        assert!(matches!(
            smooth_l1(&pred, &gt, &empty),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn jacobian_matches_complex_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let c = random_costs(&mut rng, 12);
            for temp in [1.0, 4.0, 16.0] {
                let p = softmax(&c, t(temp));
                let jac = softmax_jacobian(&p, t(temp));
                for j in 0..12 {
                    let col = complex_step_column(&c, temp, j);
                    for i in 0..12 {
                        assert!((jac[i * 12 + j] - col[i]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_is_t_times_plain_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_costs(&mut rng, 8);
        let p = softmax(&c, t(4.0));
        let at_t = softmax_jacobian(&p, t(4.0));
        let plain = softmax_jacobian(&p, Temperature::ONE);
        for (a, b) in at_t.iter().zip(&plain) {
            assert!((a - 4.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn dirac_with_correct_prediction_has_no_gradient() {
        let mut c = vec![50.0; 10];
        c[4] = 0.0;
        let mut g = vec![0.0; 10];
        pixel_smooth_l1_gradient(&c, 4.0, t(1.0), &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn smooth_l1_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 60 {
            let c = random_costs(&mut rng, 32);
            let gt = rng.random_range(0.0..31.0);
            for temp in [1.0, 4.0, 16.0] {
                let d = expected_index(&softmax(&c, t(temp)));
                if ((d - gt).abs() - 1.0).abs() < 1e-2 {
                    continue;
                }
                let obj = PixelObjective {
                    t: t(temp),
                    lambda: 0.0,
                    metric: UncertaintyMetric::Entropy,
                    gt: Some(gt),
                };
                let fd = central_difference(|x| obj.loss(x), &c, 1e-5);
                let err = scaled_error(&obj.gradient(&c), &fd);
                assert!(err < 1e-6, "t={temp}: {err}");
            }
            checked += 1;
        }
    }

    #[test]
    fn uncertainty_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..60 {
            let c = random_costs(&mut rng, 32);
            for temp in [1.0, 4.0, 16.0] {
                let p = softmax(&c, t(temp));
                let i1 = argmax(&p);
                let second = p
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != i1)
                    .map(|(_, v)| *v)
                    .fold(0.0, f64::max);
                for metric in UncertaintyMetric::all(0.5) {
                    if metric != UncertaintyMetric::Entropy && p[i1] - second < 1e-3 {
                        continue;
                    }
                    let mut g = vec![0.0; 32];
                    pixel_uncertainty_gradient(&c, metric, t(temp), &mut g);
                    let fd = central_difference(
                        |x| metric.evaluate(&softmax(x, t(temp))).unwrap(),
                        &c,
                        1e-5,
                    );
                    let err = scaled_error(&g, &fd);
                    assert!(err < 1e-6, "{metric:?} t={temp}: {err}");
                }
            }
        }
    }

    #[test]
    fn entropy_closed_form_agrees_with_generic_pull_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = random_costs(&mut rng, 16);
        let p = softmax(&c, t(3.0));
        let mut closed = vec![0.0; 16];
        pixel_uncertainty_gradient(&c, UncertaintyMetric::Entropy, t(3.0), &mut closed);
        let g = metric_gradient_wrt_probs(&p, UncertaintyMetric::Entropy);
        let mut generic = vec![0.0; 16];
        pull_back_through_softmax(&p, &g, t(3.0), &mut generic);
        for (a, b) in closed.iter().zip(&generic) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_is_stationary_for_entropy() {
        let mut g = vec![1.0; 8];
        pixel_uncertainty_gradient(&[0.7; 8], UncertaintyMetric::Entropy, t(5.0), &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn descent_step_on_two_peaks_sharpens() {
        let p = crate::toy::peaked(&[(4, 0.45), (13, 0.45)]);
        let mut c = crate::toy::costs_from_probs(&p, 1.0);
        c[4] -= 1e-3;
        let before = softmax(&c, Temperature::ONE);
        let mut g = vec![0.0; c.len()];
        pixel_uncertainty_gradient(&c, UncertaintyMetric::Entropy, Temperature::ONE, &mut g);
        let stepped: Vec<f64> = c.iter().zip(&g).map(|(x, d)| x - 0.1 * d).collect();
        let after = softmax(&stepped, Temperature::ONE);
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        assert!(max(&after) > max(&before));
    }

    #[test]
    fn combined_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (h, w, hyp) = (3, 4, 10);
        let src = CostVolume::new(h, w, hyp - 1, random_costs(&mut rng, h * w * hyp)).unwrap();
        let tgt = CostVolume::new(h, w, hyp - 1, random_costs(&mut rng, h * w * hyp)).unwrap();
        let gt = DisparityMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..9.0)).collect())
            .unwrap();
        let mask = ValidityMask::new(h, w, (0..h * w).map(|k| k % 3 != 0).collect()).unwrap();
        let metric = UncertaintyMetric::Per { s: 0.5 };
        let cfg = LossConfig::new(t(4.0), 0.7, metric).unwrap();
        let l = combined_loss(&src, &gt, &mask, &tgt, &cfg).unwrap();

        let (_, pred) = readout(&src, cfg.t);
        let ls = smooth_l1(&pred, &gt, &mask).unwrap();
        let probs = anisotropic_softmax(&tgt, cfg.t);
        let lu = crate::uncertainty::uncertainty_loss(
            &probs,
            metric,
            &ValidityMask::all_valid(h, w),
        )
        .unwrap();
        assert!((l.source - ls).abs() < 1e-15);
        assert!((l.target - lu).abs() < 1e-15);
        assert!((l.total - (ls + 0.7 * lu)).abs() < 1e-14);

        let cfg0 = LossConfig::new(t(4.0), 0.0, metric).unwrap();
        let l0 = combined_loss(&src, &gt, &mask, &tgt, &cfg0).unwrap();
        assert_eq!(l0.total, l0.source);
    }

    #[test]
    fn combined_loss_zero_at_perfect_prediction() {
        let mut c = vec![200.0; 8];
        c[3] = 0.0;
        let vol = CostVolume::from_vector(&c).unwrap();
        let gt = DisparityMap::filled(1, 1, 3.0).unwrap();
        let mask = ValidityMask::all_valid(1, 1);
        let cfg = LossConfig::defaults(UncertaintyMetric::Entropy);
        let l = combined_loss(&vol, &gt, &mask, &vol, &cfg).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn volume_gradients_match_per_pixel_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w, hyp) = (2, 3, 8);
        let costs = random_costs(&mut rng, h * w * hyp);
        let src = CostVolume::new(h, w, hyp - 1, costs.clone()).unwrap();
        let tgt = CostVolume::new(h, w, hyp - 1, random_costs(&mut rng, h * w * hyp)).unwrap();
        let gt = DisparityMap::new(h, w, vec![1.3, 4.2, 6.6, 0.4, 3.1, 5.5]).unwrap();
        let mask = ValidityMask::new(h, w, vec![true, false, true, true, true, false]).unwrap();
        let cfg = LossConfig::new(t(2.0), 0.5, UncertaintyMetric::Entropy).unwrap();
        let (gs, gtg) = grad_combined(&src, &gt, &mask, &tgt, &cfg).unwrap();

        let fd_src = central_difference(
            |x| {
                let v = CostVolume::new(h, w, hyp - 1, x.to_vec()).unwrap();
                combined_loss(&v, &gt, &mask, &tgt, &cfg).unwrap().total
            },
            src.as_slice(),
            1e-5,
        );
        let fd_tgt = central_difference(
            |x| {
                let v = CostVolume::new(h, w, hyp - 1, x.to_vec()).unwrap();
                combined_loss(&src, &gt, &mask, &v, &cfg).unwrap().total
            },
            tgt.as_slice(),
            1e-5,
        );
        assert!(scaled_error(gs.as_slice(), &fd_src) < 1e-6);
        assert!(scaled_error(gtg.as_slice(), &fd_tgt) < 1e-6);
        // Masked-out pixels receive nothing.
        assert!(gs.pixel(0, 1).iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn gradients_sum_to_zero_per_pixel(
            c in prop::collection::vec(0.0f64..3.0, 2..40),
            temp in 0.5f64..20.0,
            gt_frac in 0.0f64..1.0,
        ) {
            let n = c.len();
            let gt = gt_frac * (n - 1) as f64;
            let mut g = vec![0.0; n];
            pixel_smooth_l1_gradient(&c, gt, t(temp), &mut g);
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-10);
            for metric in UncertaintyMetric::all(0.5) {
                pixel_uncertainty_gradient(&c, metric, t(temp), &mut g);
                prop_assert!(g.iter().sum::<f64>().abs() < 1e-10);
            }
        }

        #[test]
        fn entropy_positive_off_dirac(
            c in prop::collection::vec(0.0f64..3.0, 2..40),
        ) {
            let p = softmax(&c, Temperature::ONE);
            let big = p.iter().filter(|v| **v >= 1e-6).count();
            prop_assume!(big >= 2);
            prop_assert!(entropy_of(&p) > 0.0);
        }
    }
}
