//! Forecast model, optimizer, training objectives and evaluation metrics.

mod adam;
mod model;
pub mod objective;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use model::{BatchCache, Dense, ForwardCache, MlpModel, Normalization, CHECKPOINT_FORMAT};
pub use objective::{
    DiffOpt, ObjectiveContext, ObjectiveFactory, ObjectiveRegistry, Quality, TrainingObjective, Value,
};

use crate::data::{check_samples, Sample};
use crate::dispatch::{self, DispatchSpec};
use crate::error::{Error, Result};
use crate::loss::PiecewiseLoss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 512,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer decay rates must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    /// Mean per-sample objective of each epoch, measured during the epoch.
    pub loss_trace: Vec<f64>,
    /// Seconds spent in the optimisation loop.
    pub wall_time: f64,
}

/// Per-sample parameter gradient `∂loss/∂ŷ · ∂ŷ/∂Θ`.
pub fn sample_gradient(model: &MlpModel, sample: &Sample, objective: &dyn TrainingObjective) -> Result<Vec<f64>> {
    let cache = model.forward_cached(&sample.features)?;
    let (_, slope) = objective.loss_and_slope(cache.yhat, sample)?;
    let mut grad = vec![0.0; model.n_params()];
    model.backward_into(&cache, slope, &mut grad);
    Ok(grad)
}

/// Mini-batch Adam on the mean objective. Batches are drawn from a fresh
/// seeded shuffle every epoch.
pub fn train(model: &MlpModel, data: &[Sample], objective: &dyn TrainingObjective, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = model.clone();
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        if data.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let cache = model.forward_batch(batch.iter().map(|&i| &data[i].features[..]))?;
            let scale = 1.0 / batch.len() as f64;
            let mut weights = Vec::with_capacity(batch.len());
            for (&i, &yhat) in batch.iter().zip(&cache.yhat) {
                let (loss, slope) = objective.loss_and_slope(yhat, &data[i])?;
                total += loss;
                weights.push(slope * scale);
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward_batch(&cache, &weights, &mut grad);
            adam.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        loss_trace.push(total / data.len() as f64);
    }

    Ok(Trained {
        model,
        loss_trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Trains on the derived piecewise-linear loss.
pub fn train_value(
    model: &MlpModel,
    data: &[Sample],
    spec: &DispatchSpec,
    pw: &PiecewiseLoss,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let objective = Value::new(pw.clone(), spec)?;
    check_samples(data, spec)?;
    train(model, data, &objective, cfg)
}

/// Trains on squared forecast error.
pub fn train_quality(model: &MlpModel, data: &[Sample], cfg: &TrainConfig) -> Result<Trained> {
    train(model, data, &Quality, cfg)
}

/// Trains by solving both dispatch LPs per sample and differentiating the
/// optimal cost through the active set.
pub fn train_diffopt(model: &MlpModel, data: &[Sample], spec: &DispatchSpec, cfg: &TrainConfig) -> Result<Trained> {
    let objective = DiffOpt::new(spec)?;
    check_samples(data, spec)?;
    train(model, data, &objective, cfg)
}

pub fn predict(model: &MlpModel, data: &[Sample]) -> Result<Vec<f64>> {
    data.iter().map(|s| model.forward(&s.features)).collect()
}

fn nonempty(data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("evaluation dataset is empty".into()));
    }
    Ok(())
}

/// Root mean squared forecast error, kW.
pub fn rmse(model: &MlpModel, data: &[Sample]) -> Result<f64> {
    nonempty(data)?;
    let mut sse = 0.0;
    for s in data {
        let e = model.forward(&s.features)? - s.wind;
        sse += e * e;
    }
    Ok((sse / data.len() as f64).sqrt())
}

/// Average operation cost of dispatching on the model's forecasts, from fresh
/// LP solves.
pub fn ams(model: &MlpModel, data: &[Sample], spec: &DispatchSpec) -> Result<f64> {
    nonempty(data)?;
    check_samples(data, spec)?;
    let mut total = 0.0;
    for s in data {
        let yhat = model.forward(&s.features)?;
        total += dispatch::operation_cost(spec, yhat, s.load, s.wind)?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: String,
    pub rmse: f64,
    pub ams: f64,
    pub wall_time: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

impl Metrics {
    /// Scores `model` on `data`; training fields come from `trained` when given.
    pub fn evaluate(
        mode: &str,
        model: &MlpModel,
        data: &[Sample],
        spec: &DispatchSpec,
        trained: Option<&Trained>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(Metrics {
            mode: mode.to_string(),
            rmse: rmse(model, data)?,
            ams: ams(model, data, spec)?,
            wall_time: trained.map_or(0.0, |t| t.wall_time),
            epochs: trained.map_or(0, |t| t.loss_trace.len()),
            seed: cfg.seed,
            loss_trace: trained.map_or_else(Vec::new, |t| t.loss_trace.clone()),
        })
    }
}
