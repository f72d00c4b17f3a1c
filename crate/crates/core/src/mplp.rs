//! Multiparametric LP over a box of right-hand-side parameters.
//!
//! For `min cᵀx s.t. Gx ≤ w + Fθ`, every nondegenerate θ has an optimal
//! active set `J`; on the polyhedron where `J` stays optimal the solution is
//! the affine map `x(θ) = G_J⁻¹(w_J + F_J θ)`. [`enumerate_regions`] covers
//! the parameter box with such regions by stepping across facets of the
//! regions found so far, with uniform rejection sampling as a backstop.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, DenseLp};

/// Region inequalities hold if `H_i θ ≤ h_i + CONTAINS_TOL·(1+|h_i|)`.
pub const CONTAINS_TOL: f64 = 1e-9;
/// Regions whose inscribed ball is smaller than this are dropped.
pub const MIN_CHEBYSHEV_RADIUS: f64 = 1e-9;
/// Perturbation magnitude suggested when a point turns out degenerate. It
/// has to clear the multiplier zero tolerance of [`lp::DUAL_ZERO_TOL`] so
/// that cost ties are actually broken.
pub const SUGGESTED_PERTURBATION: f64 = 1e-5;

/// Axis-aligned parameter domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidParametric("box bounds length mismatch".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h) {
            return Err(Error::InvalidParametric(format!(
                "box needs finite lo < hi, got {lo:?} / {hi:?}"
            )));
        }
        Ok(ParamBox { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| *t >= *l && *t <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect()
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (t, (l, h)) in theta.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *t = t.clamp(*l, *h);
        }
    }
}

/// `min cᵀx s.t. Gx ≤ w + Fθ`, θ in `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricLp {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub f: DMatrix<f64>,
    pub domain: ParamBox,
}

impl ParametricLp {
    pub fn new(
        c: DVector<f64>,
        g: DMatrix<f64>,
        w: DVector<f64>,
        f: DMatrix<f64>,
        domain: ParamBox,
    ) -> Result<Self> {
        let m = g.nrows();
        if w.len() != m || f.nrows() != m {
            return Err(Error::InvalidParametric(format!(
                "row counts disagree: G {m}, w {}, F {}",
                w.len(),
                f.nrows()
            )));
        }
        if f.ncols() != domain.dim() {
            return Err(Error::InvalidParametric(format!(
                "F has {} columns but the domain is {}-dimensional",
                f.ncols(),
                domain.dim()
            )));
        }
        if c.len() != g.ncols() {
            return Err(Error::InvalidParametric("cost length != columns of G".into()));
        }
        Ok(ParametricLp { c, g, w, f, domain })
    }

    pub fn dim_theta(&self) -> usize {
        self.domain.dim()
    }

    pub fn n_vars(&self) -> usize {
        self.g.ncols()
    }

    /// The LP obtained by pinning θ.
    pub fn at(&self, theta: &[f64]) -> Result<DenseLp> {
        if theta.len() != self.dim_theta() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_theta(),
                got: theta.len(),
            });
        }
        let t = DVector::from_column_slice(theta);
        DenseLp::new(self.c.clone(), self.g.clone(), &self.w + &self.f * t)
    }

    /// Substitutes `θ = lift·t + offset`, giving an LP parametric in `t`.
    pub fn restrict(&self, lift: &DMatrix<f64>, offset: &DVector<f64>, domain: ParamBox) -> Result<Self> {
        if lift.nrows() != self.dim_theta() || offset.len() != self.dim_theta() {
            return Err(Error::InvalidParametric("lift does not match parameter dimension".into()));
        }
        if lift.ncols() != domain.dim() {
            return Err(Error::InvalidParametric("lift columns != restricted domain dimension".into()));
        }
        Self::new(
            self.c.clone(),
            self.g.clone(),
            &self.w + &self.f * offset,
            &self.f * lift,
            domain,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub slope: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl AffineMap {
    pub fn eval(&self, theta: &[f64]) -> DVector<f64> {
        &self.slope * DVector::from_column_slice(theta) + &self.intercept
    }
}

/// `slope·θ + intercept`.
pub fn affine_eval(map: &AffineMap, theta: &[f64]) -> DVector<f64> {
    map.eval(theta)
}

/// A polyhedral set of parameters sharing one optimal active set.
///
/// Inequalities are unit-normalised; the last `2·dim(θ)` rows are the
/// domain box.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRegion {
    pub id: usize,
    pub h_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
    pub map: AffineMap,
    pub active: Vec<usize>,
    pub cost_slope: DVector<f64>,
    pub cost_intercept: f64,
}

impl CriticalRegion {
    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        let t = DVector::from_column_slice(theta);
        let lhs = &self.h_mat * t;
        lhs.iter()
            .zip(self.h_vec.iter())
            .all(|(a, b)| *a <= *b + tol * (1.0 + b.abs()))
    }

    pub fn cost(&self, theta: &[f64]) -> f64 {
        self.cost_slope.dot(&DVector::from_column_slice(theta)) + self.cost_intercept
    }

    fn n_domain_rows(&self) -> usize {
        2 * self.h_mat.ncols()
    }

    /// Closed interval of a scalar-parameter region.
    pub fn interval(&self) -> Option<(f64, f64)> {
        if self.h_mat.ncols() != 1 {
            return None;
        }
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (a, b) in self.h_mat.column(0).iter().zip(self.h_vec.iter()) {
            if *a > 1e-12 {
                hi = hi.min(b / a);
            } else if *a < -1e-12 {
                lo = lo.max(b / a);
            }
        }
        Some((lo, hi))
    }

    /// Inscribed-ball center and radius; `None` if the region is empty.
    pub fn chebyshev(&self) -> Option<(Vec<f64>, f64)> {
        chebyshev_ball(&self.h_mat, &self.h_vec, None)
    }
}

/// Largest ball inside `{θ : Hθ ≤ h}` (optionally restricted to the
/// hyperplane of row `on_facet`). Rows of `H` are assumed unit-norm.
fn chebyshev_ball(h_mat: &DMatrix<f64>, h_vec: &DVector<f64>, on_facet: Option<usize>) -> Option<(Vec<f64>, f64)> {
    let (m, d) = h_mat.shape();
    let radius_cap = h_vec.amax().max(1.0) * 1e3;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 2);
    let mut rhs = Vec::with_capacity(m + 2);
    let normal = on_facet.map(|i| h_mat.row(i).transpose());
    for i in 0..m {
        let hi = h_mat.row(i).transpose();
        if Some(i) == on_facet {
            let mut eq: Vec<f64> = hi.iter().copied().collect();
            eq.push(0.0);
            rows.push(eq.clone());
            rhs.push(h_vec[i]);
            rows.push(eq.iter().map(|v| -v).collect());
            rhs.push(-h_vec[i]);
            continue;
        }
        let scale = match &normal {
            Some(n) => (&hi - n * hi.dot(n)).norm(),
            None => hi.norm(),
        };
        let mut row: Vec<f64> = hi.iter().copied().collect();
        row.push(scale);
        rows.push(row);
        rhs.push(h_vec[i]);
    }
    let mut cap = vec![0.0; d + 1];
    cap[d] = 1.0;
    rows.push(cap);
    rhs.push(radius_cap);
    let mut c = vec![0.0; d + 1];
    c[d] = -1.0;
    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let lp = DenseLp::from_rows(&c, &row_refs, &rhs).ok()?;
    let sol = lp::solve(&lp).ok()?;
    if !sol.is_optimal() {
        return None;
    }
    let center = sol.x_star.iter().take(d).copied().collect();
    Some((center, sol.x_star[d]))
}

/// Critical regions covering a parameter box.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    pub regions: Vec<CriticalRegion>,
    pub domain: ParamBox,
    pub plp: ParametricLp,
}

impl RegionPartition {
    /// Scalar-parameter partitions only: `(lo, hi)` of every region, by id.
    pub fn intervals(&self) -> Option<Vec<(f64, f64)>> {
        self.regions.iter().map(|r| r.interval()).collect()
    }
}

/// Computes the critical region containing `theta0`.
pub fn region_from_point(plp: &ParametricLp, theta0: &[f64]) -> Result<CriticalRegion> {
    let lp = plp.at(theta0)?;
    let sol = lp::solve(&lp)?;
    if !sol.is_optimal() {
        return Err(Error::InfeasibleAtPoint(theta0.to_vec()));
    }
    let report = lp::check_nondegenerate(&lp, &sol);
    if report.is_degenerate() {
        return Err(Error::DegenerateAtPoint {
            theta: theta0.to_vec(),
            report,
            suggested_magnitude: SUGGESTED_PERTURBATION,
        });
    }

    let basis = lp::basis_rows(&lp, &sol);
    let n = plp.n_vars();
    let d = plp.dim_theta();
    if basis.len() != n {
        return Err(Error::SingularActiveSystem(theta0.to_vec()));
    }
    let g_j = DMatrix::from_fn(n, n, |i, k| plp.g[(basis[i], k)]);
    let f_j = DMatrix::from_fn(n, d, |i, k| plp.f[(basis[i], k)]);
    let w_j = DVector::from_fn(n, |i, _| plp.w[basis[i]]);
    let svd = g_j.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin.is_nan() || smin <= 1e-12 * smax.max(1.0) {
        return Err(Error::SingularActiveSystem(theta0.to_vec()));
    }
    let lu = g_j.lu();
    let slope = lu
        .solve(&f_j)
        .ok_or_else(|| Error::SingularActiveSystem(theta0.to_vec()))?;
    let intercept = lu
        .solve(&w_j)
        .ok_or_else(|| Error::SingularActiveSystem(theta0.to_vec()))?;

    // Inactive rows with x(θ) substituted: (G_i S - F_i) θ ≤ w_i - G_i b.
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..plp.g.nrows() {
        if basis.contains(&i) {
            continue;
        }
        let gi = plp.g.row(i);
        let a = (gi * &slope - plp.f.row(i)).transpose();
        let b = plp.w[i] - (gi * &intercept)[0];
        let norm = a.norm();
        if norm <= 1e-10 {
            // θ-independent row; satisfied at θ0 so it holds everywhere.
            continue;
        }
        rows.push(a / norm);
        rhs.push(b / norm);
    }
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        rows.push(e.clone());
        rhs.push(plp.domain.hi[k]);
        rows.push(-e);
        rhs.push(-plp.domain.lo[k]);
    }
    let h_mat = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
    let h_vec = DVector::from_vec(rhs);

    let cost_slope = (plp.c.transpose() * &slope).transpose();
    let cost_intercept = plp.c.dot(&intercept);
    Ok(CriticalRegion {
        id: 0,
        h_mat,
        h_vec,
        map: AffineMap { slope, intercept },
        active: basis,
        cost_slope,
        cost_intercept,
    })
}

/// Tuning knobs for [`enumerate_regions_with`].
#[derive(Debug, Clone)]
pub struct EnumerationOptions {
    /// Facet step as a fraction of the domain diagonal.
    pub facet_step: f64,
    /// Total rejection-sampling draws used as a completeness backstop.
    pub backstop_samples: usize,
    pub max_regions: usize,
    pub seed: u64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            facet_step: 1e-6,
            backstop_samples: 10_000,
            max_regions: 1_000,
            seed: 0x5eed,
        }
    }
}

pub fn enumerate_regions(plp: &ParametricLp) -> Result<RegionPartition> {
    enumerate_regions_with(plp, &EnumerationOptions::default())
}

pub fn enumerate_regions_with(plp: &ParametricLp, opts: &EnumerationOptions) -> Result<RegionPartition> {
    let domain = &plp.domain;
    let eps = opts.facet_step * domain.diagonal();
    let mut regions: Vec<CriticalRegion> = Vec::new();
    let mut queue: VecDeque<Vec<f64>> = VecDeque::new();
    queue.push_back(domain.center());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut draws = 0usize;
    let covered = |regions: &[CriticalRegion], t: &[f64]| regions.iter().any(|r| r.contains(t, CONTAINS_TOL));

    loop {
        while let Some(theta) = queue.pop_front() {
            if covered(&regions, &theta) {
                continue;
            }
            let mut region = region_near(plp, &theta, eps)?;
            if regions.iter().any(|r| r.active == region.active) {
                return Err(Error::ExplorationStalled {
                    witness: theta,
                    reason: "rediscovered a known active set at an uncovered point".into(),
                });
            }
            match region.chebyshev() {
                Some((_, r)) if r >= MIN_CHEBYSHEV_RADIUS => {}
                _ => {
                    return Err(Error::ExplorationStalled {
                        witness: theta,
                        reason: "region through an uncovered point is not full-dimensional".into(),
                    })
                }
            }
            region.id = regions.len();
            for i in 0..region.h_mat.nrows() - region.n_domain_rows() {
                if let Some((center, r)) = chebyshev_ball(&region.h_mat, &region.h_vec, Some(i)) {
                    if r < 0.0 {
                        continue;
                    }
                    let normal = region.h_mat.row(i);
                    let step: Vec<f64> = center
                        .iter()
                        .zip(normal.iter())
                        .map(|(c, n)| c + eps * n)
                        .collect();
                    if domain.contains(&step) {
                        queue.push_back(step);
                    }
                }
            }
            regions.push(region);
            if regions.len() > opts.max_regions {
                return Err(Error::ExplorationStalled {
                    witness: regions.last().unwrap().chebyshev().map(|c| c.0).unwrap_or_default(),
                    reason: format!("more than {} regions", opts.max_regions),
                });
            }
        }
        // Backstop: look for any uncovered sample.
        let mut found = None;
        while draws < opts.backstop_samples {
            draws += 1;
            let t = domain.sample(&mut rng);
            if !covered(&regions, &t) {
                found = Some(t);
                break;
            }
        }
        match found {
            Some(t) => queue.push_back(t),
            None => break,
        }
    }

    Ok(RegionPartition {
        regions,
        domain: domain.clone(),
        plp: plp.clone(),
    })
}

/// `region_from_point`, retrying at a few nearby points if the seed lands on a
/// measure-zero primal-degenerate boundary. Dual degeneracy is not retried.
fn region_near(plp: &ParametricLp, theta: &[f64], eps: f64) -> Result<CriticalRegion> {
    let first = match region_from_point(plp, theta) {
        Ok(r) => return Ok(r),
        Err(e) => e,
    };
    let retry = matches!(&first, Error::DegenerateAtPoint { report, .. } if report.primal_degenerate);
    if !retry {
        return Err(first);
    }
    let d = theta.len();
    for k in 1..=4 {
        let mut t = theta.to_vec();
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        for (j, v) in t.iter_mut().enumerate() {
            let phase = 0.618_033_988_75 * ((j + k) as f64);
            *v += sign * 100.0 * eps * (k as f64) * (1.0 + phase.fract()) / (d as f64).sqrt();
        }
        plp.domain.clamp(&mut t);
        match region_from_point(plp, &t) {
            Ok(r) => return Ok(r),
            Err(Error::DegenerateAtPoint { report, .. }) if report.primal_degenerate => continue,
            Err(e) => return Err(e),
        }
    }
    Err(first)
}

/// Id of the first region whose closed inequalities hold at `theta`.
pub fn locate(partition: &RegionPartition, theta: &[f64]) -> Result<usize> {
    if theta.len() != partition.domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: partition.domain.dim(),
            got: theta.len(),
        });
    }
    partition
        .regions
        .iter()
        .find(|r| r.contains(theta, CONTAINS_TOL))
        .map(|r| r.id)
        .ok_or_else(|| Error::PointNotCovered(theta.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureKind {
    NotCovered,
    MapMismatch { max_abs_err: f64 },
    CostMismatch { abs_err: f64 },
    SolveFailed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationFailure {
    pub theta: Vec<f64>,
    #[serde(flatten)]
    pub kind: FailureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub max_map_err: f64,
    pub max_cost_err: f64,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Tolerance for both the map and the cost checks of [`validate_partition`].
pub const VALIDATION_TOL: f64 = 1e-6;

/// Compares the partition against fresh LP solves at uniform samples.
pub fn validate_partition(partition: &RegionPartition, n_samples: usize, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        n_samples,
        max_map_err: 0.0,
        max_cost_err: 0.0,
        failures: Vec::new(),
    };
    for _ in 0..n_samples {
        let theta = partition.domain.sample(&mut rng);
        let fail = |kind| ValidationFailure {
            theta: theta.clone(),
            kind,
        };
        let id = match locate(partition, &theta) {
            Ok(id) => id,
            Err(_) => {
                report.failures.push(fail(FailureKind::NotCovered));
                continue;
            }
        };
        let sol = partition
            .plp
            .at(&theta)
            .and_then(|lp| lp::solve(&lp))
            .and_then(|s| s.into_optimal());
        let sol = match sol {
            Ok(s) => s,
            Err(e) => {
                report.failures.push(fail(FailureKind::SolveFailed {
                    reason: e.to_string(),
                }));
                continue;
            }
        };
        let region = &partition.regions[id];
        let map_err = (region.map.eval(&theta) - &sol.x_star).amax();
        let cost_err = (region.cost(&theta) - sol.objective).abs();
        report.max_map_err = report.max_map_err.max(map_err);
        report.max_cost_err = report.max_cost_err.max(cost_err);
        if map_err > VALIDATION_TOL {
            report
                .failures
                .push(fail(FailureKind::MapMismatch { max_abs_err: map_err }));
        } else if cost_err > VALIDATION_TOL {
            report
                .failures
                .push(fail(FailureKind::CostMismatch { abs_err: cost_err }));
        }
    }
    report
}
