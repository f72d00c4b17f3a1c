//! Day-ahead and real-time dispatch problems for a wind-backed portfolio.
//!
//! Day-ahead: schedule the slow generators (SGs) against net load `l - ŷ`.
//! Real-time: settle the wind deviation `ŷ - y` with flexible resources.
//! Both are plain LPs with the balance equality written as a `±` row pair,
//! and both depend on the parameters only through one scalar channel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lp::{self, DenseLp, LpSolution};
use crate::mplp::{ParamBox, ParametricLp};

/// Slack allowed when checking parameters against their domain.
const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSpec {
    /// $/kWh per slow generator.
    pub sg_costs: Vec<f64>,
    /// `[min, max]` output per slow generator, kW.
    pub sg_bounds: Vec<[f64; 2]>,
    /// $/kWh per flexible resource.
    pub flex_costs: Vec<f64>,
    pub flex_bounds: Vec<[f64; 2]>,
    /// +1 for resources that cover a wind deficit, -1 for those absorbing a surplus.
    pub flex_direction: Vec<f64>,
    pub wind_capacity: f64,
    pub load_range: [f64; 2],
}

/// Opt-in random perturbation used to break degeneracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            magnitude: crate::mplp::SUGGESTED_PERTURBATION,
            seed: 0,
        }
    }
}

impl DispatchSpec {
    /// Two SGs, two up-tiers and one down resource, 28 kW of wind.
    pub fn canonical() -> Self {
        DispatchSpec {
            sg_costs: vec![10.0, 30.0],
            sg_bounds: vec![[0.0, 30.0], [0.0, 40.0]],
            flex_costs: vec![40.0, 100.0, 5.0],
            flex_bounds: vec![[0.0, 10.0], [0.0, 30.0], [0.0, 40.0]],
            flex_direction: vec![1.0, 1.0, -1.0],
            wind_capacity: 28.0,
            load_range: [40.0, 60.0],
        }
    }

    /// Canonical instance with both SGs priced identically; dual degenerate
    /// wherever both are unsaturated.
    pub fn degenerate_example() -> Self {
        DispatchSpec {
            sg_costs: vec![10.0, 10.0],
            ..Self::canonical()
        }
    }

    pub fn n_sg(&self) -> usize {
        self.sg_costs.len()
    }

    pub fn n_flex(&self) -> usize {
        self.flex_costs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.sg_costs.is_empty() || self.flex_costs.is_empty() {
            return bad("need at least one SG and one flexible resource".into());
        }
        if self.sg_bounds.len() != self.n_sg() {
            return bad(format!("{} SG costs but {} SG bounds", self.n_sg(), self.sg_bounds.len()));
        }
        if self.flex_bounds.len() != self.n_flex() || self.flex_direction.len() != self.n_flex() {
            return bad("flex_costs, flex_bounds and flex_direction lengths differ".into());
        }
        let all = self
            .sg_costs
            .iter()
            .chain(self.flex_costs.iter())
            .chain(self.sg_bounds.iter().flatten())
            .chain(self.flex_bounds.iter().flatten())
            .chain(self.load_range.iter())
            .chain(std::iter::once(&self.wind_capacity));
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if let Some(c) = self.flex_costs.iter().find(|&&c| c <= 0.0) {
            return bad(format!("flexible resource cost {c} must be > 0"));
        }
        for b in self.sg_bounds.iter().chain(&self.flex_bounds) {
            if b[0] < 0.0 || b[0] > b[1] {
                return bad(format!("bounds {b:?} need 0 <= min <= max"));
            }
        }
        if self.flex_direction.iter().any(|&d| d != 1.0 && d != -1.0) {
            return bad("flex_direction entries must be +1 or -1".into());
        }
        if self.wind_capacity.is_nan() || self.wind_capacity <= 0.0 {
            return bad("wind capacity must be positive".into());
        }
        let [l_min, l_max] = self.load_range;
        if l_min > l_max {
            return bad(format!("load range [{l_min}, {l_max}] is empty"));
        }
        let sg_min: f64 = self.sg_bounds.iter().map(|b| b[0]).sum();
        let sg_max: f64 = self.sg_bounds.iter().map(|b| b[1]).sum();
        let (n_lo, n_hi) = self.net_load_range();
        if sg_min > n_lo || sg_max < n_hi {
            return bad(format!(
                "SG range [{sg_min}, {sg_max}] does not cover net load [{n_lo}, {n_hi}]"
            ));
        }
        let (mut up, mut down) = (0.0, 0.0);
        for (b, d) in self.flex_bounds.iter().zip(&self.flex_direction) {
            if *d > 0.0 {
                up += b[1];
                down -= b[0];
            } else {
                up -= b[0];
                down += b[1];
            }
        }
        let cap = self.wind_capacity;
        if up < cap || down < cap {
            return bad(format!(
                "flexible range covers [-{down}, {up}] but deviations span [-{cap}, {cap}]"
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Range of the day-ahead channel `l - ŷ` over the domain.
    pub fn net_load_range(&self) -> (f64, f64) {
        (self.load_range[0] - self.wind_capacity, self.load_range[1])
    }

    /// Range of the real-time channel `ŷ - y`.
    pub fn deviation_range(&self) -> (f64, f64) {
        (-self.wind_capacity, self.wind_capacity)
    }

    /// Copy with every cost and bound shifted by i.i.d. uniform noise in
    /// `±magnitude`. Bounds keep `0 <= min <= max`.
    pub fn perturbed(&self, p: &Perturbation) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut jitter = |v: &mut f64| *v += p.magnitude * rng.random_range(-1.0..=1.0);
        let mut out = self.clone();
        out.sg_costs.iter_mut().for_each(&mut jitter);
        out.flex_costs.iter_mut().for_each(&mut jitter);
        for b in out.sg_bounds.iter_mut().chain(out.flex_bounds.iter_mut()) {
            let mut lo = b[0];
            let mut hi = b[1];
            jitter(&mut lo);
            jitter(&mut hi);
            b[0] = lo.max(0.0);
            b[1] = hi.max(b[0]);
        }
        out
    }

    fn check_wind(&self, name: &'static str, v: f64) -> Result<()> {
        check_range(name, v, 0.0, self.wind_capacity)
    }

    fn check_load(&self, l: f64) -> Result<()> {
        check_range("l", l, self.load_range[0], self.load_range[1])
    }
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    let tol = DOMAIN_TOL * (1.0 + lo.abs().max(hi.abs()));
    if !(value >= lo - tol && value <= hi + tol) {
        return Err(Error::ParameterOutOfDomain { name, value, lo, hi });
    }
    Ok(())
}

/// `[I; -I; aᵀ; -aᵀ]` with rhs `[max; -min; r; -r]`.
fn bounded_balance(costs: &[f64], bounds: &[[f64; 2]], balance: &[f64], rhs: f64) -> DenseLp {
    let k = costs.len();
    let mut g = DMatrix::zeros(2 * k + 2, k);
    let mut h = DVector::zeros(2 * k + 2);
    for i in 0..k {
        g[(i, i)] = 1.0;
        h[i] = bounds[i][1];
        g[(k + i, i)] = -1.0;
        h[k + i] = -bounds[i][0];
        g[(2 * k, i)] = balance[i];
        g[(2 * k + 1, i)] = -balance[i];
    }
    h[2 * k] = rhs;
    h[2 * k + 1] = -rhs;
    DenseLp {
        c: DVector::from_column_slice(costs),
        g,
        h,
    }
}

/// Day-ahead LP: SGs meet `l - ŷ`.
pub fn build_day_ahead(spec: &DispatchSpec, yhat: f64, l: f64) -> Result<DenseLp> {
    spec.check_wind("yhat", yhat)?;
    spec.check_load(l)?;
    Ok(day_ahead_at_channel(spec, l - yhat))
}

fn day_ahead_at_channel(spec: &DispatchSpec, net_load: f64) -> DenseLp {
    let ones = vec![1.0; spec.n_sg()];
    bounded_balance(&spec.sg_costs, &spec.sg_bounds, &ones, net_load)
}

/// Real-time LP: flexible resources settle `dᵀz = ŷ - y`.
pub fn build_real_time(spec: &DispatchSpec, yhat: f64, y: f64) -> Result<DenseLp> {
    spec.check_wind("yhat", yhat)?;
    spec.check_wind("y", y)?;
    Ok(real_time_at_channel(spec, yhat - y))
}

fn real_time_at_channel(spec: &DispatchSpec, deviation: f64) -> DenseLp {
    bounded_balance(&spec.flex_costs, &spec.flex_bounds, &spec.flex_direction, deviation)
}

/// Derivative of the day-ahead rhs with respect to ŷ.
pub fn day_ahead_rhs_sensitivity(spec: &DispatchSpec) -> DVector<f64> {
    balance_rhs_unit(spec.n_sg(), -1.0)
}

/// Derivative of the real-time rhs with respect to ŷ.
pub fn real_time_rhs_sensitivity(spec: &DispatchSpec) -> DVector<f64> {
    balance_rhs_unit(spec.n_flex(), 1.0)
}

fn balance_rhs_unit(k: usize, sign: f64) -> DVector<f64> {
    let mut v = DVector::zeros(2 * k + 2);
    v[2 * k] = sign;
    v[2 * k + 1] = -sign;
    v
}

fn parametric(base: DenseLp, k: usize, domain: ParamBox) -> Result<ParametricLp> {
    let m = base.g.nrows();
    let mut w = base.h;
    w[2 * k] = 0.0;
    w[2 * k + 1] = 0.0;
    let mut f = DMatrix::zeros(m, 2);
    f[(2 * k, 0)] = 1.0;
    f[(2 * k + 1, 1)] = 1.0;
    ParametricLp::new(base.c, base.g, w, f, domain)
}

/// Day-ahead problem with θ = (l - ŷ, ŷ - l) entering the balance rows
/// through a 2×2 identity block.
pub fn parametric_day_ahead(spec: &DispatchSpec) -> Result<ParametricLp> {
    spec.validate()?;
    let (lo, hi) = spec.net_load_range();
    parametric(
        day_ahead_at_channel(spec, 0.0),
        spec.n_sg(),
        ParamBox::new(vec![lo, -hi], vec![hi, -lo])?,
    )
}

/// Real-time problem with θ = (ŷ - y, y - ŷ).
pub fn parametric_real_time(spec: &DispatchSpec) -> Result<ParametricLp> {
    spec.validate()?;
    let (lo, hi) = spec.deviation_range();
    parametric(
        real_time_at_channel(spec, 0.0),
        spec.n_flex(),
        ParamBox::new(vec![lo, -hi], vec![hi, -lo])?,
    )
}

fn to_channel(plp: &ParametricLp) -> Result<ParametricLp> {
    let lift = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let domain = ParamBox::interval(plp.domain.lo[0], plp.domain.hi[0])?;
    plp.restrict(&lift, &DVector::zeros(2), domain)
}

/// Day-ahead problem parametrised by the scalar net load `l - ŷ`.
pub fn day_ahead_channel(spec: &DispatchSpec) -> Result<ParametricLp> {
    to_channel(&parametric_day_ahead(spec)?)
}

/// Real-time problem parametrised by the scalar deviation `ŷ - y`.
pub fn real_time_channel(spec: &DispatchSpec) -> Result<ParametricLp> {
    to_channel(&parametric_real_time(spec)?)
}

/// Both stages solved at one operating point.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub day_ahead: LpSolution,
    pub real_time: LpSolution,
}

impl Outcome {
    pub fn cost(&self) -> f64 {
        self.day_ahead.objective + self.real_time.objective
    }
}

pub fn operate(spec: &DispatchSpec, yhat: f64, l: f64, y: f64) -> Result<Outcome> {
    let da = build_day_ahead(spec, yhat, l)?;
    let rt = build_real_time(spec, yhat, y)?;
    Ok(Outcome {
        day_ahead: lp::solve(&da)?.into_optimal()?,
        real_time: lp::solve(&rt)?.into_optimal()?,
    })
}

/// Realised two-stage cost from two fresh LP solves.
pub fn operation_cost(spec: &DispatchSpec, yhat: f64, l: f64, y: f64) -> Result<f64> {
    Ok(operate(spec, yhat, l, y)?.cost())
}
