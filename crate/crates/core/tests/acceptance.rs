//! End-to-end acceptance criteria. Runs every criterion in order, prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.
//!
//! Criteria run sequentially in one test so the wall-clock comparison is not
//! disturbed by other criteria competing for the CPU.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mploss_core::data::{generate, Sample, SyntheticConfig, N_FEATURES};
use mploss_core::dispatch::{self, DispatchSpec, Perturbation};
use mploss_core::loss::{self, PiecewiseLoss, SynthesisOptions};
use mploss_core::mplp;
use mploss_core::train::{
    self, ams, rmse, sample_gradient, DiffOpt, MlpModel, Normalization, TrainConfig, TrainingObjective, Value,
};
use mploss_core::Error;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const DESK_HIDDEN: [usize; 2] = [64, 64];
const DESK_BATCH: usize = 128;
const DESK_LR: f64 = 1e-3;
const PATTERN_EPOCHS: usize = 60;
const TIMING_EPOCHS: usize = 3;
const DATA_SEED: u64 = 2024;
const MODEL_SEED: u64 = 17;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_model(spec: &DispatchSpec, train: &[Sample]) -> MlpModel {
    let mut m = MlpModel::new(N_FEATURES, &DESK_HIDDEN, spec.wind_capacity, MODEL_SEED);
    m.normalization = Normalization::fit(train);
    m
}

fn desk_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: DESK_LR,
        batch_size: DESK_BATCH,
        epochs,
        seed: MODEL_SEED,
        ..TrainConfig::default()
    }
}

fn synthetic(spec: &DispatchSpec) -> (Vec<Sample>, Vec<Sample>) {
    let cfg = SyntheticConfig {
        n_train: 2_000,
        n_test: 500,
        ..SyntheticConfig::default()
    };
    generate(spec, &cfg, DATA_SEED).unwrap()
}

fn uniform_point(rng: &mut ChaCha8Rng, spec: &DispatchSpec) -> (f64, f64, f64) {
    let c = spec.wind_capacity;
    let [lo, hi] = spec.load_range;
    (rng.random_range(0.0..=c), rng.random_range(lo..=hi), rng.random_range(0.0..=c))
}

/// Affine maps of both channel partitions against fresh solves at 200 points each.
fn mplp_exactness(spec: &DispatchSpec) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for plp in [dispatch::day_ahead_channel(spec), dispatch::real_time_channel(spec)] {
        let part = mplp::enumerate_regions(&plp.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let report = mplp::validate_partition(&part, 200, 1);
        worst = worst.max(report.max_map_err).max(report.max_cost_err);
        failures += report.failures.len();
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        failures == 0 && worst <= 1e-6 && secs < 10.0,
        format!("max map/cost error {worst:.2e}, {failures} failures, {secs:.3} s"),
    )
}

/// 10,000 uniform points each lie in exactly one joint region.
fn partition_coverage(spec: &DispatchSpec, pw: &PiecewiseLoss) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut uncovered, mut multiple) = (0, 0);
    for _ in 0..10_000 {
        let (yhat, l, y) = uniform_point(&mut rng, spec);
        match pw.locate(yhat, l, y) {
            Err(Error::PointNotCovered(_)) => uncovered += 1,
            Err(e) => return Err(e.to_string()),
            Ok(_) => {}
        }
        let theta = [yhat, l, y];
        let hits = (0..pw.joint.len())
            .filter(|&k| {
                let (a, b) = pw.joint_constraints(k);
                (0..a.nrows()).all(|i| (0..3).map(|j| a[(i, j)] * theta[j]).sum::<f64>() <= b[i] + 1e-9)
            })
            .count();
        if hits > 1 {
            multiple += 1;
        }
    }
    ensure(
        uncovered == 0 && multiple == 0,
        format!("{uncovered} uncovered, {multiple} in more than one region, {} joint regions", pw.joint.len()),
    )
}

/// Derived loss equals the dispatch cost from two fresh LP solves.
fn loss_oracle(spec: &DispatchSpec, pw: &PiecewiseLoss) -> Outcome {
    let check = loss::check_against_dispatch(pw, spec, 2_000, 3).map_err(|e| e.to_string())?;
    ensure(
        check.uncovered == 0 && check.max_scaled_err <= 1e-6,
        format!("max scaled error {:.2e}, {} uncovered", check.max_scaled_err, check.uncovered),
    )
}

fn structural_slice(pw: &PiecewiseLoss) -> Outcome {
    let (l, y) = (50.0, 10.0);
    let slice = loss::loss_slice_1d(pw, l, y, 201).map_err(|e| e.to_string())?;
    let segs = &slice.segments;
    let mut gap: f64 = 0.0;
    for w in segs.windows(2) {
        let at = w[0].yhat_hi;
        let left = pw.joint[w[0].joint_id].eval(at, l, y);
        let right = pw.joint[w[1].joint_id].eval(at, l, y);
        gap = gap.max((left - right).abs());
    }
    let convex = segs.windows(2).all(|w| w[1].slope_yhat > w[0].slope_yhat);
    // Minimum of a convex piecewise-linear function: where the slope turns positive.
    let argmin = segs
        .iter()
        .find(|s| s.slope_yhat > 0.0)
        .map(|s| s.yhat_lo)
        .unwrap_or(pw.capacity);
    let slopes: Vec<f64> = segs.iter().map(|s| s.slope_yhat).collect();
    ensure(
        segs.len() == 3 && gap <= 1e-6 && convex && (y - argmin).abs() <= 1e-9,
        format!(
            "{} segments, slopes {slopes:?}, max gap {gap:.1e}, minimum at deviation {}",
            segs.len(),
            y - argmin
        ),
    )
}

fn reference_coefficients() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_three_region_loss.json");
    let pw = PiecewiseLoss::load(&path).map_err(|e| e.to_string())?;
    let (l, y) = (50.0, 10.0);
    // ŷ = 5, 15, 25 put ŷ - y in (-∞, 0), (0, 10), (10, ∞).
    let grads: Vec<f64> = [5.0, 15.0, 25.0]
        .iter()
        .map(|&yhat| loss::loss_grad_yhat(&pw, yhat, l, y).unwrap())
        .collect();
    let r1 = pw.joint[0].eval(10.0, l, y);
    let r2 = pw.joint[1].eval(10.0, l, y);
    let v = loss::loss_eval(&pw, 10.0, l, y).map_err(|e| e.to_string())?;
    ensure(
        grads == [-10.0, 70.0, 170.0] && (r1 - r2).abs() <= 1e-9 && (v - 1206.4).abs() <= 1e-9,
        format!("gradients {grads:?}, regions 1/2 at zero deviation {r1} / {r2}, value {v}"),
    )
}

fn gradient_equivalence(spec: &DispatchSpec, pw: &PiecewiseLoss) -> Outcome {
    let (train_split, _) = synthetic(spec);
    let data = &train_split[..512];
    let model = desk_model(spec, data);
    let value = Value::new(pw.clone(), spec).map_err(|e| e.to_string())?;
    let diff = DiffOpt::new(spec).map_err(|e| e.to_string())?;
    let mut per_sample: f64 = 0.0;
    for s in data {
        let a = sample_gradient(&model, s, &value).map_err(|e| e.to_string())?;
        let b = sample_gradient(&model, s, &diff).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&b) {
            per_sample = per_sample.max((x - y).abs());
        }
    }
    let cfg = desk_config(1);
    let tv = train::train_value(&model, data, spec, pw, &cfg).map_err(|e| e.to_string())?;
    let td = train::train_diffopt(&model, data, spec, &cfg).map_err(|e| e.to_string())?;
    let params: f64 = tv
        .model
        .params()
        .iter()
        .zip(td.model.params())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure(
        per_sample <= 1e-8 && params <= 1e-6,
        format!("max per-sample gradient diff {per_sample:.1e}, max parameter diff after 1 epoch {params:.1e}"),
    )
}

struct PatternRow {
    capacity: f64,
    ams_value: f64,
    ams_quality: f64,
    rmse_value: f64,
    rmse_quality: f64,
}

fn pattern_row(capacity: f64) -> PatternRow {
    let mut spec = DispatchSpec::canonical();
    spec.wind_capacity = capacity;
    let pw = loss::synthesize_loss(&spec).unwrap();
    let (train_split, test_split) = synthetic(&spec);
    let model = desk_model(&spec, &train_split);
    let cfg = desk_config(PATTERN_EPOCHS);
    let v = train::train_value(&model, &train_split, &spec, &pw, &cfg).unwrap().model;
    let q = train::train_quality(&model, &train_split, &cfg).unwrap().model;
    PatternRow {
        capacity,
        ams_value: ams(&v, &test_split, &spec).unwrap(),
        ams_quality: ams(&q, &test_split, &spec).unwrap(),
        rmse_value: rmse(&v, &test_split).unwrap(),
        rmse_quality: rmse(&q, &test_split).unwrap(),
    }
}

fn value_versus_quality() -> Outcome {
    let start = Instant::now();
    let rows: Vec<PatternRow> = [10.0, 20.0, 28.0].into_iter().map(pattern_row).collect();
    let secs = start.elapsed().as_secs_f64();
    let dominance = rows
        .iter()
        .all(|r| r.ams_value <= r.ams_quality && r.rmse_value >= r.rmse_quality);
    let gaps: Vec<f64> = rows.iter().map(|r| r.ams_value - r.ams_quality).collect();
    let trend = gaps.windows(2).all(|w| w[1] <= w[0]);
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "C={}: AMS {:.2} vs {:.2} (gap {:+.2}), RMSE {:.3} vs {:.3}",
                r.capacity,
                r.ams_value,
                r.ams_quality,
                r.ams_value - r.ams_quality,
                r.rmse_value,
                r.rmse_quality
            )
        })
        .collect();
    ensure(
        dominance && trend && secs < 300.0,
        format!("value vs quality: {}; {secs:.1} s", table.join("; ")),
    )
}

/// Seconds per sample of the objective step alone (no network work).
fn objective_cost(objective: &dyn TrainingObjective, data: &[Sample]) -> f64 {
    let start = Instant::now();
    for s in data {
        std::hint::black_box(objective.loss_and_slope(0.5 * s.wind + 3.0, s).unwrap());
    }
    start.elapsed().as_secs_f64() / data.len() as f64
}

/// Wall-clock of both training modes; each is the best of three runs.
fn training_cost(spec: &DispatchSpec, pw: &PiecewiseLoss) -> Outcome {
    let (train_split, _) = synthetic(spec);
    let model = desk_model(spec, &train_split);
    let cfg = desk_config(TIMING_EPOCHS);
    let (mut value, mut diff) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..3 {
        let tv = train::train_value(&model, &train_split, spec, pw, &cfg).map_err(|e| e.to_string())?;
        let td = train::train_diffopt(&model, &train_split, spec, &cfg).map_err(|e| e.to_string())?;
        value = value.min(tv.wall_time);
        diff = diff.min(td.wall_time);
    }
    let ratio = value / diff;
    let lookup = objective_cost(&Value::new(pw.clone(), spec).map_err(|e| e.to_string())?, &train_split);
    let solves = objective_cost(&DiffOpt::new(spec).map_err(|e| e.to_string())?, &train_split);
    ensure(
        ratio <= 0.2,
        format!(
            "value {value:.3} s vs diffopt {diff:.3} s over {TIMING_EPOCHS} epochs x {} samples, hidden {DESK_HIDDEN:?} \
             (ratio {ratio:.3}); objective step alone {:.3} us vs {:.3} us per sample",
            train_split.len(),
            lookup * 1e6,
            solves * 1e6
        ),
    )
}

/// Central differences of the dispatch cost in ŷ, away from every kink.
fn finite_difference_audit(spec: &DispatchSpec, pw: &PiecewiseLoss) -> Outcome {
    const STEP: f64 = 1e-4;
    const MARGIN: f64 = 1e-3;
    let near = |t: f64, regions: &[loss::ChannelRegion]| {
        regions
            .iter()
            .any(|r| (t - r.lo).abs() < MARGIN || (t - r.hi).abs() < MARGIN)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 500 {
        let (yhat, l, y) = uniform_point(&mut rng, spec);
        if yhat < MARGIN || yhat > spec.wind_capacity - MARGIN || near(l - yhat, &pw.da_regions) || near(yhat - y, &pw.rt_regions) {
            continue;
        }
        let up = dispatch::operation_cost(spec, yhat + STEP, l, y).map_err(|e| e.to_string())?;
        let dn = dispatch::operation_cost(spec, yhat - STEP, l, y).map_err(|e| e.to_string())?;
        let fd = (up - dn) / (2.0 * STEP);
        let g = loss::loss_grad_yhat(pw, yhat, l, y).map_err(|e| e.to_string())?;
        worst = worst.max((fd - g).abs() / g.abs().max(1.0));
        checked += 1;
    }
    ensure(worst <= 1e-4, format!("{checked} points, max relative error {worst:.1e}"))
}

fn degeneracy_guard() -> Outcome {
    let spec = DispatchSpec::degenerate_example();
    let witness = match loss::synthesize(&spec, &SynthesisOptions::default()) {
        Err(Error::DegenerateAtPoint { theta, .. }) if !theta.is_empty() => theta,
        Err(e) => return Err(format!("expected DegenerateAtPoint, got {e}")),
        Ok(_) => return Err("degenerate spec was accepted".into()),
    };
    let opts = SynthesisOptions {
        perturbation: Some(Perturbation::default()),
        ..SynthesisOptions::default()
    };
    let syn = loss::synthesize(&spec, &opts).map_err(|e| e.to_string())?;
    let checks = [
        mplp_exactness(&syn.spec),
        partition_coverage(&syn.spec, &syn.loss),
        loss_oracle(&syn.spec, &syn.loss),
    ];
    let failed: Vec<String> = checks.iter().filter_map(|c| c.as_ref().err().cloned()).collect();
    ensure(
        failed.is_empty(),
        format!(
            "aborted at theta = {witness:?}; perturbed run: {}",
            if failed.is_empty() { "criteria 1-3 pass".to_string() } else { failed.join("; ") }
        ),
    )
}

#[test]
fn acceptance() {
    let spec = DispatchSpec::canonical();
    let pw = loss::synthesize_loss(&spec).expect("canonical loss derives");
    let criteria: Vec<Criterion> = vec![
        ("1 parametric exactness", Box::new(|| mplp_exactness(&spec))),
        ("2 partition coverage", Box::new(|| partition_coverage(&spec, &pw))),
        ("3 loss equals dispatch cost", Box::new(|| loss_oracle(&spec, &pw))),
        ("4 three-segment convex slice", Box::new(|| structural_slice(&pw))),
        ("5 reference coefficients", Box::new(reference_coefficients)),
        ("6 value/diffopt gradient equivalence", Box::new(|| gradient_equivalence(&spec, &pw))),
        ("7 value vs quality pattern", Box::new(value_versus_quality)),
        ("8 training wall-clock", Box::new(|| training_cost(&spec, &pw))),
        ("9 finite-difference audit", Box::new(|| finite_difference_audit(&spec, &pw))),
        ("10 degeneracy guard", Box::new(degeneracy_guard)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
