//! Command implementations behind the `mploss` binary.
//!
//! Every command reads one JSON run configuration, writes its artifacts under
//! an output directory and is deterministic given the configuration and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mploss_core::data::{self, Sample, SyntheticConfig};
use mploss_core::dispatch::{DispatchSpec, Perturbation};
use mploss_core::loss::{self, LossCheck, PiecewiseLoss, SynthesisOptions};
use mploss_core::mplp::{self, ValidationReport};
use mploss_core::train::{self, Metrics, MlpModel, Normalization, ObjectiveContext, ObjectiveRegistry, TrainConfig};
use mploss_core::{Error, Result};

/// Samples used to validate each channel partition and the assembled loss.
pub const DERIVE_VALIDATION_SAMPLES: usize = 10_000;
pub const DEFAULT_SLICE_POINTS: usize = 201;

/// Either an inline spec or a path to a spec JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    Inline(DispatchSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![64, 64] }
    }
}

/// CSV splits, or a synthetic series when both are absent.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: SpecSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Opt-in jitter of the spec that breaks degenerate ties.
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    /// Previously derived loss; derived on the fly when absent.
    #[serde(default)]
    pub loss: Option<PathBuf>,
}

/// A loaded configuration with file references resolved against its directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    /// The spec after the optional perturbation.
    pub spec: DispatchSpec,
    pub seed: u64,
    base: PathBuf,
}

impl Run {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let raw = match &config.spec {
            SpecSource::Inline(s) => s.clone(),
            SpecSource::File(p) => {
                let p = base.join(p);
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_str(&text)?
            }
        };
        raw.validate()?;
        let spec = match &config.perturbation {
            Some(p) => raw.perturbed(p),
            None => raw,
        };
        spec.validate()?;
        if let Some(s) = seed {
            config.train.seed = s;
        }
        config.train.validate()?;
        Ok(Run {
            seed: config.train.seed,
            config,
            spec,
            base,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    /// `(train, test)` from CSV when configured, otherwise generated.
    pub fn datasets(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let d = &self.config.data;
        match (&d.train, &d.test) {
            (Some(tr), Some(te)) => Ok((
                data::load_dataset(&self.resolve(tr), &self.spec)?,
                data::load_dataset(&self.resolve(te), &self.spec)?,
            )),
            (None, None) => data::generate(&self.spec, &d.synthetic, self.seed),
            _ => Err(Error::InvalidConfig("data.train and data.test must be given together".into())),
        }
    }

    /// The configured loss file, or a fresh derivation.
    pub fn piecewise_loss(&self) -> Result<PiecewiseLoss> {
        match &self.config.loss {
            Some(p) => {
                let pw = PiecewiseLoss::load(&self.resolve(p))?;
                pw.check_spec(&self.spec)?;
                Ok(pw)
            }
            None => loss::synthesize_loss(&self.spec),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionSummary {
    pub id: usize,
    pub da_id: usize,
    pub rt_id: usize,
    pub net_load: [f64; 2],
    pub deviation: [f64; 2],
    pub beta_yhat: f64,
    pub beta_l: f64,
    pub beta_y: f64,
    pub beta_0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeriveReport {
    pub spec_digest: String,
    pub k_d: usize,
    pub k_r: usize,
    pub candidates: usize,
    pub joint_regions: usize,
    pub regions: Vec<RegionSummary>,
    pub day_ahead_validation: ValidationReport,
    pub real_time_validation: ValidationReport,
    pub dispatch_check: LossCheck,
}

impl DeriveReport {
    pub fn passed(&self) -> bool {
        self.day_ahead_validation.is_ok()
            && self.real_time_validation.is_ok()
            && self.dispatch_check.uncovered == 0
            && self.dispatch_check.max_scaled_err <= mplp::VALIDATION_TOL
    }
}

/// Derives the loss, validates it and writes `loss.json` and `report.json`.
pub fn cmd_derive(run: &Run, out: &Path) -> Result<DeriveReport> {
    // The run spec is already perturbed, so synthesis must not perturb again.
    let syn = loss::synthesize(&run.spec, &SynthesisOptions::default())?;
    let pw = &syn.loss;
    let regions = pw
        .joint
        .iter()
        .enumerate()
        .map(|(id, j)| {
            let da = &pw.da_regions[j.da_id];
            let rt = &pw.rt_regions[j.rt_id];
            RegionSummary {
                id,
                da_id: j.da_id,
                rt_id: j.rt_id,
                net_load: [da.lo, da.hi],
                deviation: [rt.lo, rt.hi],
                beta_yhat: j.beta_yhat,
                beta_l: j.beta_l,
                beta_y: j.beta_y,
                beta_0: j.beta_0,
            }
        })
        .collect();
    let report = DeriveReport {
        spec_digest: pw.spec_digest.clone(),
        k_d: pw.da_regions.len(),
        k_r: pw.rt_regions.len(),
        candidates: syn.candidates,
        joint_regions: pw.joint.len(),
        regions,
        day_ahead_validation: mplp::validate_partition(&syn.day_ahead, DERIVE_VALIDATION_SAMPLES, run.seed),
        real_time_validation: mplp::validate_partition(&syn.real_time, DERIVE_VALIDATION_SAMPLES, run.seed),
        dispatch_check: loss::check_against_dispatch(pw, &syn.spec, DERIVE_VALIDATION_SAMPLES, run.seed)?,
    };
    write(out, "loss.json", &(pw.to_json()? + "\n"))?;
    write_json(out, "report.json", &report)?;
    if !report.passed() {
        return Err(Error::ExplorationStalled {
            witness: Vec::new(),
            reason: "derived loss failed validation; see report.json".into(),
        });
    }
    Ok(report)
}

fn initial_model(run: &Run, train_split: &[Sample]) -> MlpModel {
    let mut model = MlpModel::new(data::N_FEATURES, &run.config.model.hidden, run.spec.wind_capacity, run.seed);
    model.normalization = Normalization::fit(train_split);
    model
}

/// Trains in `mode`, writes `model.json` and `metrics.json` (scored on the test split).
pub fn cmd_train(run: &Run, mode: &str, out: &Path, registry: &ObjectiveRegistry) -> Result<Metrics> {
    let (train_split, test_split) = run.datasets()?;
    let pw = if mode == "value" { Some(run.piecewise_loss()?) } else { None };
    let objective = registry.build(
        mode,
        &ObjectiveContext {
            spec: &run.spec,
            loss: pw.as_ref(),
        },
    )?;
    data::check_samples(&train_split, &run.spec)?;
    let model = initial_model(run, &train_split);
    let trained = train::train(&model, &train_split, objective.as_ref(), &run.config.train)?;
    let metrics = Metrics::evaluate(mode, &trained.model, &test_split, &run.spec, Some(&trained), &run.config.train)?;
    trained.model.save(&out_file(out, "model.json")?)?;
    write_json(out, "metrics.json", &metrics)?;
    Ok(metrics)
}

fn out_file(out: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out.join(name))
}

/// Scores a checkpoint on the test split and writes `metrics.json`.
pub fn cmd_evaluate(run: &Run, checkpoint: &Path, out: &Path) -> Result<Metrics> {
    let model = MlpModel::load(checkpoint)?;
    if (model.capacity - run.spec.wind_capacity).abs() > 1e-9 * (1.0 + run.spec.wind_capacity.abs()) {
        return Err(Error::CapacityMismatch {
            checkpoint: model.capacity,
            spec: run.spec.wind_capacity,
        });
    }
    let (_, test_split) = run.datasets()?;
    let metrics = Metrics::evaluate("evaluate", &model, &test_split, &run.spec, None, &run.config.train)?;
    write_json(out, "metrics.json", &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize)]
struct SliceSummary<'a> {
    l: f64,
    y: f64,
    breakpoints: &'a [f64],
    segments: &'a [loss::SliceSegment],
}

/// Writes `slice.csv` (deviation, yhat, value) and `breakpoints.json`.
pub fn cmd_slice(run: &Run, l: f64, y: f64, n_points: usize, out: &Path) -> Result<loss::Slice> {
    let pw = run.piecewise_loss()?;
    let slice = loss::loss_slice_1d(&pw, l, y, n_points)?;
    let mut csv = String::from("deviation,yhat,value\n");
    for p in &slice.points {
        csv.push_str(&format!("{},{},{}\n", p.deviation, p.yhat, p.value));
    }
    write(out, "slice.csv", &csv)?;
    write_json(
        out,
        "breakpoints.json",
        &SliceSummary {
            l,
            y,
            breakpoints: &slice.breakpoints,
            segments: &slice.segments,
        },
    )?;
    Ok(slice)
}

/// Writes the synthetic `train.csv` and `test.csv`.
pub fn cmd_gen_data(run: &Run, out: &Path) -> Result<(usize, usize)> {
    let (tr, te) = data::generate(&run.spec, &run.config.data.synthetic, run.seed)?;
    data::write_dataset(&out_file(out, "train.csv")?, &tr)?;
    data::write_dataset(&out_file(out, "test.csv")?, &te)?;
    Ok((tr.len(), te.len()))
}

/// `error: <Kind>: <message>` on one line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error: {}: {msg}", e.kind())
}
