use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dispsharp::adapt_sim::{simulate_pixel, DecayFit, SimConfig, StepRecord, StopReason};
use dispsharp::gradcheck::{run_suite, Fault, SuiteConfig, SuiteRow};
use dispsharp::storage::{self, Endianness, VolumeDtype};
use dispsharp::toy::ToyCase;
use dispsharp::volume::{argmax, softmax};
use dispsharp::{
    error_stats, generate_stereogram, make_pseudo_label, readout, roc_sparsification, uncertainty_map,
    CostVolume, ErrorStats, MatcherKind, RocPoint, SceneSpec, Temperature, UncertaintyMap,
    UncertaintyMetric, ValidityMask,
};
use serde::Serialize;

use crate::io;
use crate::{
    AdaptSimArgs, DomainShiftArgs, EstimateArgs, FaultArg, GradcheckArgs, MetricsArgs, OutputFormat,
    PseudoArgs, RocArgs,
};

/// Mean of each metric over the valid pixels, keyed by metric name.
fn mean_uncertainties(
    vol: &CostVolume,
    t: Temperature,
    s: f64,
    mask: &ValidityMask,
) -> Result<BTreeMap<&'static str, f64>> {
    let (probs, _) = readout(vol, t);
    UncertaintyMetric::all(s)
        .into_iter()
        .map(|m| Ok((m.name(), uncertainty_map(&probs, m)?.masked_mean(mask)?)))
        .collect()
}

#[derive(Serialize)]
struct EstimateSummary {
    input: &'static str,
    height: usize,
    width: usize,
    d_max: usize,
    t: f64,
    metric: &'static str,
    valid_pixels: usize,
    mean_uncertainty: BTreeMap<&'static str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorStats>,
}

pub fn estimate(a: &EstimateArgs) -> Result<bool> {
    let t = Temperature::new(a.t)?;
    let metric = a.metric.metric()?;
    let matcher = MatcherKind::from(a.matcher);
    io::ensure_dir(&a.out)?;
    let out = |name: &str| a.out.join(name);

    let (input, vol, mask, gt) = if let Some(path) = &a.scene {
        let spec = io::read_scene(path)?;
        let scene = generate_stereogram(&spec)?;
        let (vol, valid) = matcher.cost_volume(&scene.pair, spec.d_max, a.window)?;
        io::write_bytes(&out("left.pgm"), &storage::pgm_write(&scene.pair.left)?)?;
        io::write_bytes(&out("right.pgm"), &storage::pgm_write(&scene.pair.right)?)?;
        io::write_bytes(&out("gt.png"), &storage::kitti_png_write(&scene.gt, &scene.mask)?)?;
        let mask = scene.mask.and(&valid)?;
        ("scene", vol, mask, Some(scene.gt))
    } else if let (Some(left), Some(right)) = (&a.left, &a.right) {
        let d_max = a.d_max.context("--d-max is required with --left/--right")?;
        let pair = io::read_pair(left, right)?;
        let (vol, mask) = matcher.cost_volume(&pair, d_max, a.window)?;
        ("images", vol, mask, None)
    } else if let Some(path) = &a.volume {
        let vol = io::read_volume(path)?;
        let mask = ValidityMask::all_valid(vol.height(), vol.width());
        ("volume", vol, mask, None)
    } else {
        bail!("one of --scene, --left/--right or --volume is required");
    };

    let (probs, disp) = readout(&vol, t);
    let unc = uncertainty_map(&probs, metric)?;
    io::write_bytes(&out("disparity.pfm"), &storage::pfm_write(&disp)?)?;
    io::write_bytes(&out("disparity.png"), &storage::kitti_png_write(&disp, &mask)?)?;
    io::write_bytes(&out("uncertainty.png"), &storage::uncertainty_png_write(&unc)?)?;
    io::write_bytes(&out("uncertainty.pfm"), &storage::uncertainty_pfm_write(&unc)?)?;
    if a.save_volume {
        let bytes = storage::raw_volume_write(&vol, VolumeDtype::F64, Endianness::Little)?;
        io::write_bytes(&out("volume.cvol"), &bytes)?;
    }

    let error = gt.map(|gt| error_stats(&disp, &gt, &mask)).transpose()?;
    let summary = EstimateSummary {
        input,
        height: vol.height(),
        width: vol.width(),
        d_max: vol.d_max(),
        t: t.value(),
        metric: metric.name(),
        valid_pixels: mask.count(),
        mean_uncertainty: mean_uncertainties(&vol, t, a.metric.s, &mask)?,
        error,
    };
    io::write_json(&out("summary.json"), &summary)?;
    Ok(true)
}

#[derive(Serialize)]
struct GradcheckRow<'a> {
    loss: &'a str,
    t: f64,
    h: f64,
    max_abs_err: f64,
    max_rel_err: f64,
    samples: usize,
    resampled: usize,
    pass: bool,
}

impl<'a> From<&'a SuiteRow> for GradcheckRow<'a> {
    fn from(r: &'a SuiteRow) -> Self {
        GradcheckRow {
            loss: &r.loss,
            t: r.t,
            h: r.h,
            max_abs_err: r.max_abs_err,
            max_rel_err: r.max_rel_err,
            samples: r.samples,
            resampled: r.resampled,
            pass: r.passes(),
        }
    }
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    if !(a.h.is_finite() && a.h > 0.0) {
        bail!("--h must be positive, got {}", a.h);
    }
    let mut steps = vec![a.h];
    if a.sweep {
        for h in [1e-4, 1e-5, 1e-6] {
            if !steps.contains(&h) {
                steps.push(h);
            }
        }
        steps.sort_by(|x, y| y.total_cmp(x));
    }
    let fault = match a.inject_fault {
        FaultArg::None => Fault::None,
        FaultArg::SignFlip => Fault::SignFlip,
    };
    let mut rows = Vec::new();
    for &h in &steps {
        let cfg = SuiteConfig {
            seed: a.seed,
            samples: a.samples,
            h,
            per_s: a.s,
            fault,
            ..SuiteConfig::default()
        };
        rows.extend(run_suite(&cfg)?);
    }

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in &rows {
            w.serialize(GradcheckRow::from(row))?;
        }
        w.flush()?;
    }
    match &a.out {
        Some(path) => io::write_bytes(path, &buf)?,
        None => print!("{}", String::from_utf8(buf)?),
    }

    for &h in &steps {
        let worst = rows
            .iter()
            .filter(|r| r.h == h)
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max);
        eprintln!("h = {h:e}: worst relative error {worst:.3e}");
    }
    let failing: Vec<_> = rows
        .iter()
        .filter(|r| r.h == a.h && !r.passes())
        .map(|r| format!("{} at t={}", r.loss, r.t))
        .collect();
    if failing.is_empty() {
        eprintln!("gradcheck passed at h = {:e}", a.h);
        Ok(true)
    } else {
        eprintln!("gradcheck FAILED at h = {:e}: {}", a.h, failing.join(", "));
        Ok(false)
    }
}

#[derive(Serialize)]
struct SimSummary {
    case: String,
    hypotheses: usize,
    config: SimConfig,
    steps: usize,
    stop: StopReason,
    initial: StepRecord,
    #[serde(rename = "final")]
    last: StepRecord,
    initial_argmax: usize,
    final_argmax: usize,
    gt: Option<f64>,
    abs_error: Option<f64>,
    steps_to_half_pixel: Option<usize>,
    decay: Option<DecayFit>,
}

pub fn adapt_sim(a: &AdaptSimArgs) -> Result<bool> {
    let (case, costs, case_gt) = match (a.case, &a.costs) {
        (Some(c), _) => {
            let c = ToyCase::from(c);
            let init = c.init();
            (c.name().to_string(), init.costs, init.gt)
        }
        (None, Some(costs)) => ("custom".to_string(), costs.clone(), None),
        (None, None) => bail!("one of --case or --costs is required"),
    };
    let gt = a.gt.or(case_gt);
    let metric = a.metric.metric()?;
    let labeled = gt.is_some();
    let cfg = SimConfig {
        t: Temperature::new(a.t.unwrap_or(if labeled { 16.0 } else { 1.0 }))?,
        lambda: a
            .lambda
            .unwrap_or(if labeled { metric.default_lambda() } else { 1.0 }),
        metric,
        step_size: a.step_size,
        max_steps: a.max_steps,
        line_search: !a.no_line_search,
        gt,
    };
    let log = simulate_pixel(&costs, &cfg)?;

    io::ensure_dir(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("trajectory.csv"))
        .with_context(|| format!("cannot write {}", a.out.join("trajectory.csv").display()))?;
    for r in &log.records {
        w.serialize(r)?;
    }
    w.flush()?;

    let last = *log.last();
    let summary = SimSummary {
        case,
        hypotheses: costs.len(),
        config: cfg,
        steps: log.records.len() - 1,
        stop: log.stop,
        initial: log.records[0],
        last,
        initial_argmax: argmax(&softmax(&costs, cfg.t)),
        final_argmax: log.final_argmax(cfg.t),
        gt,
        abs_error: gt.map(|g| (last.disparity - g).abs()),
        steps_to_half_pixel: gt.and_then(|g| log.steps_to_threshold(g, 0.5)),
        decay: log.decay(),
    };
    io::write_json(&a.out.join("summary.json"), &summary)?;
    Ok(true)
}

fn write_or_print(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => io::write_bytes(path, bytes),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn read_uncertainty(path: &Path) -> Result<UncertaintyMap> {
    // The metric only affects rendering, which these commands never do.
    io::read_uncertainty(path, UncertaintyMetric::Entropy, 2)
}

pub fn roc(a: &RocArgs) -> Result<bool> {
    let (pred, _) = io::read_disparity(&a.pred)?;
    let (gt, mask) = io::read_disparity(&a.gt)?;
    let unc = read_uncertainty(&a.uncertainty)?;
    let curve = roc_sparsification(&pred, &gt, &mask, &unc, a.step)?;
    let bytes = match a.format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&curve)?;
            s.push('\n');
            s.into_bytes()
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for p in &curve.points {
                w.serialize::<&RocPoint>(p)?;
            }
            w.into_inner().context("csv buffer")?
        }
    };
    write_or_print(a.out.as_deref(), &bytes)?;
    Ok(true)
}

#[derive(Serialize)]
struct PseudoSummary {
    delta: f64,
    threshold: f64,
    valid_pixels: usize,
    total_pixels: usize,
    valid_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dense_d1_all: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retained_d1_all: Option<f64>,
}

pub fn pseudo(a: &PseudoArgs) -> Result<bool> {
    if !(a.delta > 0.0 && a.delta < 100.0) {
        bail!("--delta must lie strictly between 0 and 100, got {}", a.delta);
    }
    let (pred, _) = io::read_disparity(&a.pred)?;
    let unc = read_uncertainty(&a.uncertainty)?;
    let label = make_pseudo_label(&pred, &unc, a.delta)?;
    io::write_bytes(&a.out, &storage::kitti_png_write(&label.disparity, &label.validity)?)?;

    let (dense, retained) = match &a.gt {
        Some(path) => {
            let (gt, mask) = io::read_disparity(path)?;
            let dense = error_stats(&pred, &gt, &mask)?.d1_all;
            let kept = label.validity.and(&mask)?;
            (Some(dense), Some(error_stats(&pred, &gt, &kept)?.d1_all))
        }
        None => (None, None),
    };
    io::print_json(&PseudoSummary {
        delta: a.delta,
        threshold: label.threshold,
        valid_pixels: label.validity.count(),
        total_pixels: label.validity.as_slice().len(),
        valid_fraction: label.valid_fraction(),
        dense_d1_all: dense,
        retained_d1_all: retained,
    })?;
    Ok(true)
}

pub fn metrics(a: &MetricsArgs) -> Result<bool> {
    let (pred, _) = io::read_disparity(&a.pred)?;
    let (gt, mask) = io::read_disparity(&a.gt)?;
    let stats = error_stats(&pred, &gt, &mask)?;
    match &a.out {
        Some(path) => io::write_json(path, &stats)?,
        None => io::print_json(&stats)?,
    }
    Ok(true)
}

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Serialize)]
struct MetricReport {
    clean_mean: f64,
    noisy_mean: f64,
    noisy_mean_t1: f64,
    d1_at_half_density: f64,
    pseudo_label_d1_all: f64,
}

#[derive(Serialize)]
struct DomainShiftSummary {
    seed: u64,
    noise_sigma: f64,
    t: f64,
    valid_pixels: usize,
    dense_d1_all: f64,
    metrics: BTreeMap<&'static str, MetricReport>,
    checks: Vec<Check>,
}

pub fn domain_shift(a: &DomainShiftArgs) -> Result<bool> {
    let t = Temperature::new(a.t)?;
    if !(a.delta > 0.0 && a.delta < 100.0) {
        bail!("--delta must lie strictly between 0 and 100, got {}", a.delta);
    }
    let matcher = MatcherKind::from(a.matcher);
    let clean_spec = SceneSpec::benchmark(0.0, a.seed);
    let noisy_spec = SceneSpec::benchmark(a.noise, a.seed);
    let clean = generate_stereogram(&clean_spec)?;
    let noisy = generate_stereogram(&noisy_spec)?;
    let (clean_vol, cm) = matcher.cost_volume(&clean.pair, clean_spec.d_max, a.window)?;
    let (noisy_vol, nm) = matcher.cost_volume(&noisy.pair, noisy_spec.d_max, a.window)?;
    let mask = clean.mask.and(&cm)?.and(&nm)?;
    let gt = clean.gt;

    let clean_means = mean_uncertainties(&clean_vol, t, a.s, &mask)?;
    let noisy_means = mean_uncertainties(&noisy_vol, t, a.s, &mask)?;
    let noisy_means_t1 = mean_uncertainties(&noisy_vol, Temperature::ONE, a.s, &mask)?;

    let (probs, pred) = readout(&noisy_vol, t);
    let dense = error_stats(&pred, &gt, &mask)?.d1_all;
    let mut checks = Vec::new();
    let mut reports = BTreeMap::new();
    for metric in UncertaintyMetric::all(a.s) {
        let name = metric.name();
        let unc = uncertainty_map(&probs, metric)?;
        let curve = roc_sparsification(&pred, &gt, &mask, &unc, 0.05)?;
        let half = curve.at_density(0.5).context("density 0.5 on a 0.05 grid")?.d1_all;
        let label = make_pseudo_label(&pred, &unc, a.delta)?;
        let pseudo = error_stats(&pred, &gt, &label.validity.and(&mask)?)?.d1_all;
        let (c, n, n1) = (clean_means[name], noisy_means[name], noisy_means_t1[name]);
        checks.push(Check {
            name: format!("{name}: noisy mean above clean"),
            pass: n > c,
            detail: format!("clean {c:.6}, noisy {n:.6}"),
        });
        checks.push(Check {
            name: format!("{name}: t={} below t=1 on noisy", a.t),
            pass: n < n1,
            detail: format!("t={} {n:.6}, t=1 {n1:.6}", a.t),
        });
        checks.push(Check {
            name: format!("{name}: D1 at density 0.5 <= dense"),
            pass: half <= dense,
            detail: format!("{half:.4}% vs {dense:.4}%"),
        });
        checks.push(Check {
            name: format!("{name}: pseudo-label D1 <= dense"),
            pass: pseudo <= dense,
            detail: format!("delta {} gives {pseudo:.4}% vs {dense:.4}%", a.delta),
        });
        reports.insert(
            name,
            MetricReport {
                clean_mean: c,
                noisy_mean: n,
                noisy_mean_t1: n1,
                d1_at_half_density: half,
                pseudo_label_d1_all: pseudo,
            },
        );
    }

    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let ok = checks.iter().all(|c| c.pass);
    println!("domain-shift: {}", if ok { "all checks passed" } else { "some checks failed" });
    if let Some(dir) = &a.out {
        io::ensure_dir(dir)?;
        io::write_json(
            &dir.join("domain_shift.json"),
            &DomainShiftSummary {
                seed: a.seed,
                noise_sigma: a.noise,
                t: a.t,
                valid_pixels: mask.count(),
                dense_d1_all: dense,
                metrics: reports,
                checks,
            },
        )?;
    }
    Ok(ok)
}
