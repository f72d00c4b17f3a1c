//! Per-sample training objectives, selectable by name.
//!
//! Every objective reduces to the same contract: given the forecast `ŷ` for a
//! sample, return the sample's loss and `∂loss/∂ŷ`. The trainer chains that
//! scalar through `∂ŷ/∂Θ`, so swapping objectives never touches the
//! optimisation loop.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::data::Sample;
use crate::dispatch::{self, DispatchSpec};
use crate::error::{Error, Result};
use crate::loss::PiecewiseLoss;
use crate::lp::{self, DenseLp, LpSolution};
use crate::mplp::SUGGESTED_PERTURBATION;

pub trait TrainingObjective: Send + Sync {
    fn name(&self) -> &'static str;

    /// `(loss, ∂loss/∂ŷ)` at forecast `yhat`.
    fn loss_and_slope(&self, yhat: f64, sample: &Sample) -> Result<(f64, f64)>;
}

impl fmt::Debug for dyn TrainingObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TrainingObjective({})", self.name())
    }
}

/// Squared forecast error.
#[derive(Debug, Clone, Default)]
pub struct Quality;

impl TrainingObjective for Quality {
    fn name(&self) -> &'static str {
        "quality"
    }

    fn loss_and_slope(&self, yhat: f64, s: &Sample) -> Result<(f64, f64)> {
        let e = yhat - s.wind;
        Ok((e * e, 2.0 * e))
    }
}

/// Derived piecewise-linear operation-cost loss: region lookup, no LP solves.
#[derive(Debug, Clone)]
pub struct Value {
    loss: PiecewiseLoss,
}

impl Value {
    pub fn new(loss: PiecewiseLoss, spec: &DispatchSpec) -> Result<Self> {
        loss.check_spec(spec)?;
        Ok(Value { loss })
    }
}

impl TrainingObjective for Value {
    fn name(&self) -> &'static str {
        "value"
    }

    fn loss_and_slope(&self, yhat: f64, s: &Sample) -> Result<(f64, f64)> {
        let k = self.loss.locate(yhat, s.load, s.wind)?;
        let region = &self.loss.joint[k];
        Ok((region.eval(yhat, s.load, s.wind), region.beta_yhat))
    }
}

/// Solves both dispatch LPs for every sample and differentiates the optimal
/// cost through the active constraints of each optimum.
#[derive(Debug, Clone)]
pub struct DiffOpt {
    spec: DispatchSpec,
    da_sensitivity: DVector<f64>,
    rt_sensitivity: DVector<f64>,
}

impl DiffOpt {
    pub fn new(spec: &DispatchSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DiffOpt {
            spec: spec.clone(),
            da_sensitivity: dispatch::day_ahead_rhs_sensitivity(spec),
            rt_sensitivity: dispatch::real_time_rhs_sensitivity(spec),
        })
    }
}

/// `d(cᵀx*)/dŷ` where the rhs moves along `drhs`: differentiate the square
/// active system `G_J x = h_J`.
pub fn active_set_cost_slope(lp: &DenseLp, sol: &LpSolution, drhs: &DVector<f64>, point: &[f64]) -> Result<f64> {
    let report = lp::check_nondegenerate(lp, sol);
    if report.is_degenerate() {
        return Err(Error::DegenerateAtPoint {
            theta: point.to_vec(),
            report,
            suggested_magnitude: SUGGESTED_PERTURBATION,
        });
    }
    let rows = lp::basis_rows(lp, sol);
    let n = lp.n_vars();
    if rows.len() != n {
        return Err(Error::SingularActiveSystem(point.to_vec()));
    }
    let g_j = DMatrix::from_fn(n, n, |i, k| lp.g[(rows[i], k)]);
    let d_j = DVector::from_fn(n, |i, _| drhs[rows[i]]);
    let dx = g_j
        .lu()
        .solve(&d_j)
        .ok_or_else(|| Error::SingularActiveSystem(point.to_vec()))?;
    Ok(lp.c.dot(&dx))
}

impl TrainingObjective for DiffOpt {
    fn name(&self) -> &'static str {
        "diffopt"
    }

    fn loss_and_slope(&self, yhat: f64, s: &Sample) -> Result<(f64, f64)> {
        let point = [yhat, s.load, s.wind];
        let da = dispatch::build_day_ahead(&self.spec, yhat, s.load)?;
        let rt = dispatch::build_real_time(&self.spec, yhat, s.wind)?;
        let da_sol = lp::solve(&da)?.into_optimal()?;
        let rt_sol = lp::solve(&rt)?.into_optimal()?;
        let slope = active_set_cost_slope(&da, &da_sol, &self.da_sensitivity, &point)?
            + active_set_cost_slope(&rt, &rt_sol, &self.rt_sensitivity, &point)?;
        Ok((da_sol.objective + rt_sol.objective, slope))
    }
}

/// What a factory may need to build an objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub spec: &'a DispatchSpec,
    pub loss: Option<&'a PiecewiseLoss>,
}

pub type ObjectiveFactory = Box<dyn Fn(&ObjectiveContext) -> Result<Box<dyn TrainingObjective>> + Send + Sync>;

/// Objectives registered under their mode name.
pub struct ObjectiveRegistry {
    factories: BTreeMap<String, ObjectiveFactory>,
}

impl ObjectiveRegistry {
    pub fn empty() -> Self {
        ObjectiveRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `value`, `quality` and `diffopt`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("quality", Box::new(|_| Ok(Box::new(Quality))));
        r.register(
            "value",
            Box::new(|ctx| {
                let loss = ctx
                    .loss
                    .ok_or_else(|| Error::InvalidConfig("value mode needs a derived loss".into()))?;
                Ok(Box::new(Value::new(loss.clone(), ctx.spec)?))
            }),
        );
        r.register("diffopt", Box::new(|ctx| Ok(Box::new(DiffOpt::new(ctx.spec)?))));
        r
    }

    pub fn register(&mut self, name: &str, factory: ObjectiveFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, ctx: &ObjectiveContext) -> Result<Box<dyn TrainingObjective>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))?;
        f(ctx)
    }
}

impl Default for ObjectiveRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{loss_grad_yhat, synthesize_loss};

    fn sample(l: f64, y: f64) -> Sample {
        Sample {
            timestamp: String::new(),
            features: [0.0; 4],
            load: l,
            wind: y,
        }
    }

    #[test]
    fn registry_knows_builtins() {
        let reg = ObjectiveRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["diffopt", "quality", "value"]);
        let spec = DispatchSpec::canonical();
        let ctx = ObjectiveContext { spec: &spec, loss: None };
        assert!(matches!(reg.build("nope", &ctx), Err(Error::UnknownMode(_))));
        assert!(matches!(reg.build("value", &ctx), Err(Error::InvalidConfig(_))));
        assert_eq!(reg.build("quality", &ctx).unwrap().name(), "quality");
    }

    #[test]
    fn value_rejects_foreign_loss() {
        let spec = DispatchSpec::canonical();
        let pw = synthesize_loss(&spec).unwrap();
        let mut other = spec.clone();
        other.sg_costs[1] = 31.0;
        assert!(matches!(Value::new(pw, &other), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn perfect_forecast_has_zero_quality_slope() {
        let (l, g) = Quality.loss_and_slope(7.0, &sample(50.0, 7.0)).unwrap();
        assert_eq!((l, g), (0.0, 0.0));
    }

    #[test]
    fn diffopt_slope_equals_region_slope() {
        let spec = DispatchSpec::canonical();
        let pw = synthesize_loss(&spec).unwrap();
        let d = DiffOpt::new(&spec).unwrap();
        for (yhat, l, y) in [(5.0, 50.0, 10.0), (15.0, 50.0, 10.0), (25.0, 42.0, 3.0), (3.3, 59.0, 27.0)] {
            let (cost, slope) = d.loss_and_slope(yhat, &sample(l, y)).unwrap();
            let beta = loss_grad_yhat(&pw, yhat, l, y).unwrap();
            assert!((slope - beta).abs() <= 1e-8, "{slope} vs {beta}");
            let truth = dispatch::operation_cost(&spec, yhat, l, y).unwrap();
            assert!((cost - truth).abs() <= 1e-9);
        }
    }

    #[test]
    fn diffopt_flags_degenerate_points() {
        let d = DiffOpt::new(&DispatchSpec::canonical()).unwrap();
        // Zero deviation: every flexible resource sits at its lower bound.
        let err = d.loss_and_slope(10.0, &sample(50.0, 10.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateAtPoint { .. }));
    }
}
