//! Dense inequality-form linear programs.
//!
//! Problems are stored as `min cᵀx  s.t.  Gx ≤ h` with `x` free. Equalities are
//! written as a `+row / -row` pair and recognised as one logical constraint by
//! the degeneracy diagnostics.
//!
//! [`solve`] is a two-phase tableau simplex on the split form
//! `x = x⁺ - x⁻`, `Gx + s = h`, using Bland's rule for both the entering and
//! leaving choice, so it is deterministic and cannot cycle.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative feasibility tolerance: a row is satisfied if `G_j x ≤ h_j + FEAS_TOL·(1+|h_j|)`.
pub const FEAS_TOL: f64 = 1e-8;
/// Default relative tolerance for calling a row active.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Multipliers at or below this (scaled by `1+‖c‖∞`) count as zero.
pub const DUAL_ZERO_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-10;
const REDUCED_COST_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLp {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl DenseLp {
    pub fn new(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let lp = DenseLp { c, g, h };
        lp.check()?;
        Ok(lp)
    }

    /// Builds from row slices, mostly for tests and small hand-written problems.
    pub fn from_rows(c: &[f64], rows: &[&[f64]], h: &[f64]) -> Result<Self> {
        let n = c.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::MalformedLp("ragged constraint rows".into()));
        }
        let g = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(DVector::from_column_slice(c), g, DVector::from_column_slice(h))
    }

    fn check(&self) -> Result<()> {
        let (m, n) = self.g.shape();
        if m == 0 || n == 0 {
            return Err(Error::MalformedLp(format!("G is {m}x{n}")));
        }
        if self.c.len() != n {
            return Err(Error::MalformedLp(format!(
                "cost length {} != {n} columns",
                self.c.len()
            )));
        }
        if self.h.len() != m {
            return Err(Error::MalformedLp(format!(
                "rhs length {} != {m} rows",
                self.h.len()
            )));
        }
        let finite = self.c.iter().chain(self.g.iter()).chain(self.h.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedLp("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.g.nrows()
    }

    /// `G_j x - h_j`.
    pub fn row_residual(&self, j: usize, x: &DVector<f64>) -> f64 {
        self.g.row(j).dot(&x.transpose()) - self.h[j]
    }

    /// Pairs `(j, k)`, `j < k`, whose rows are exact negatives of each other
    /// (`G_k = -G_j`, `h_k = -h_j`), i.e. an encoded equality.
    pub fn equality_pairs(&self) -> Vec<(usize, usize)> {
        let m = self.n_rows();
        let mut taken = vec![false; m];
        let mut pairs = Vec::new();
        for j in 0..m {
            if taken[j] {
                continue;
            }
            for k in j + 1..m {
                if taken[k] {
                    continue;
                }
                let neg = self
                    .g
                    .row(j)
                    .iter()
                    .zip(self.g.row(k).iter())
                    .all(|(a, b)| (a + b).abs() <= 1e-12 * (1.0 + a.abs()));
                if neg && (self.h[j] + self.h[k]).abs() <= 1e-12 * (1.0 + self.h[j].abs()) {
                    taken[j] = true;
                    taken[k] = true;
                    pairs.push((j, k));
                    break;
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x_star: DVector<f64>,
    pub objective: f64,
    /// Sorted indices of rows tight at `x_star` (default tolerance).
    pub active: Vec<usize>,
    /// One nonnegative multiplier per row; `c + Gᵀλ = 0` at an optimum.
    pub dual: DVector<f64>,
}

impl LpSolution {
    fn non_optimal(status: LpStatus, n: usize, m: usize) -> Self {
        LpSolution {
            status,
            x_star: DVector::zeros(n),
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            active: Vec::new(),
            dual: DVector::zeros(m),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Converts a non-optimal status into the matching error.
    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(Error::InfeasibleLp),
            LpStatus::Unbounded => Err(Error::UnboundedLp),
        }
    }
}

/// Which assumption of a unique optimal vertex with unique multipliers fails.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub primal_degenerate: bool,
    pub dual_degenerate: bool,
    /// Active rows when the vertex is over-determined.
    pub primal_detail: Vec<usize>,
    /// Active inequality rows whose multiplier vanishes.
    pub dual_detail: Vec<usize>,
}

impl DegeneracyReport {
    pub fn is_degenerate(&self) -> bool {
        self.primal_degenerate || self.dual_degenerate
    }
}

impl fmt::Display for DegeneracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.primal_degenerate, self.dual_degenerate) {
            (false, false) => write!(f, "nondegenerate"),
            (p, d) => {
                let mut parts = Vec::new();
                if p {
                    parts.push(format!("primal degenerate, active rows {:?}", self.primal_detail));
                }
                if d {
                    parts.push(format!("dual degenerate, zero multipliers on rows {:?}", self.dual_detail));
                }
                write!(f, "{}", parts.join("; "))
            }
        }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, col: usize, obj: &mut [f64]) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        let f = obj[col];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            obj[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Reduced-cost row for `cost` under the current basis; last entry is
    /// minus the objective value.
    fn objective_row(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj: Vec<f64> = cost.to_vec();
        obj.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (v, t) in obj.iter_mut().zip(&self.rows[i]) {
                    *v -= cb * t;
                }
            }
        }
        obj
    }

    /// Bland's-rule primal simplex. Returns `false` when unbounded.
    fn optimize(&mut self, obj: &mut [f64], allowed: &[bool], pivots: &mut usize) -> Result<bool> {
        loop {
            let Some(col) = (0..self.ncols).find(|&j| allowed[j] && obj[j] < -REDUCED_COST_TOL)
            else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            self.pivot(r, col, obj);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::IterationLimit(MAX_PIVOTS));
            }
        }
    }
}

/// Solves `min cᵀx s.t. Gx ≤ h`.
///
/// Infeasibility and unboundedness are reported through [`LpSolution::status`];
/// the `Err` path is reserved for malformed input and pivot-limit exhaustion.
pub fn solve(lp: &DenseLp) -> Result<LpSolution> {
    lp.check()?;
    let (m, n) = lp.g.shape();

    // Columns: x⁺ (n), x⁻ (n), slacks (m), artificials (one per negative-rhs row).
    let flipped: Vec<bool> = lp.h.iter().map(|&v| v < 0.0).collect();
    let n_art = flipped.iter().filter(|&&f| f).count();
    let slack0 = 2 * n;
    let art0 = slack0 + m;
    let ncols = art0 + n_art;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_art = art0;
    for i in 0..m {
        let sign = if flipped[i] { -1.0 } else { 1.0 };
        let mut row = vec![0.0; ncols + 1];
        for j in 0..n {
            row[j] = sign * lp.g[(i, j)];
            row[n + j] = -sign * lp.g[(i, j)];
        }
        row[slack0 + i] = sign;
        row[ncols] = sign * lp.h[i];
        if flipped[i] {
            row[next_art] = 1.0;
            basis.push(next_art);
            next_art += 1;
        } else {
            basis.push(slack0 + i);
        }
        rows.push(row);
    }
    let mut tab = Tableau { rows, basis, ncols };
    let mut pivots = 0;

    if n_art > 0 {
        let mut cost1 = vec![0.0; ncols];
        cost1[art0..].iter_mut().for_each(|v| *v = 1.0);
        let mut obj = tab.objective_row(&cost1);
        let allowed = vec![true; ncols];
        tab.optimize(&mut obj, &allowed, &mut pivots)?;
        let infeas = -obj[ncols];
        let scale = 1.0 + lp.h.amax();
        if infeas > FEAS_TOL * scale {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible, n, m));
        }
        // Drive zero-level artificials out of the basis where possible; rows
        // where that fails are redundant and keep a harmless artificial.
        for r in 0..m {
            if tab.basis[r] >= art0 {
                if let Some(col) = (0..art0).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL) {
                    tab.pivot(r, col, &mut obj);
                }
            }
        }
    }

    let mut cost2 = vec![0.0; ncols];
    for j in 0..n {
        cost2[j] = lp.c[j];
        cost2[n + j] = -lp.c[j];
    }
    let mut obj = tab.objective_row(&cost2);
    let allowed: Vec<bool> = (0..ncols).map(|j| j < art0).collect();
    if !tab.optimize(&mut obj, &allowed, &mut pivots)? {
        return Ok(LpSolution::non_optimal(LpStatus::Unbounded, n, m));
    }

    let mut u = vec![0.0; ncols];
    for (i, &b) in tab.basis.iter().enumerate() {
        u[b] = tab.rhs(i);
    }
    let x_star = DVector::from_fn(n, |j, _| u[j] - u[n + j]);
    let dual = DVector::from_fn(m, |i, _| obj[slack0 + i].max(0.0));
    let objective = lp.c.dot(&x_star);
    let mut sol = LpSolution {
        status: LpStatus::Optimal,
        x_star,
        objective,
        active: Vec::new(),
        dual,
    };
    sol.active = active_set(lp, &sol, ACTIVE_TOL);
    Ok(sol)
}

/// Rows with `|G_j x* - h_j| ≤ tol_act·(1+|h_j|)`, ascending.
pub fn active_set(lp: &DenseLp, sol: &LpSolution, tol_act: f64) -> Vec<usize> {
    (0..lp.n_rows())
        .filter(|&j| lp.row_residual(j, &sol.x_star).abs() <= tol_act * (1.0 + lp.h[j].abs()))
        .collect()
}

/// Active rows with each tight equality pair reduced to its first row: the
/// rows that pin down the vertex.
pub fn basis_rows(lp: &DenseLp, sol: &LpSolution) -> Vec<usize> {
    let pairs = lp.equality_pairs();
    sol.active
        .iter()
        .copied()
        .filter(|&j| !pairs.iter().any(|&(a, b)| b == j && sol.active.contains(&a)))
        .collect()
}

/// Checks uniqueness of the optimal vertex and of its multipliers.
///
/// An equality pair counts as one constraint and is exempt from the
/// zero-multiplier test (its multiplier is free in sign).
pub fn check_nondegenerate(lp: &DenseLp, sol: &LpSolution) -> DegeneracyReport {
    let active = &sol.active;
    let pairs = lp.equality_pairs();
    let in_pair = |j: usize| pairs.iter().any(|&(a, b)| a == j || b == j);
    let is_active = |j: usize| active.binary_search(&j).is_ok();

    let collapsed = pairs
        .iter()
        .filter(|&&(a, b)| is_active(a) && is_active(b))
        .count();
    let logical = active.len() - collapsed;

    let mut report = DegeneracyReport::default();
    if logical > lp.n_vars() {
        report.primal_degenerate = true;
        report.primal_detail = active.clone();
    }
    let zero = DUAL_ZERO_TOL * (1.0 + lp.c.amax());
    report.dual_detail = active
        .iter()
        .copied()
        .filter(|&j| !in_pair(j) && sol.dual[j] <= zero)
        .collect();
    if logical < lp.n_vars() && report.dual_detail.is_empty() {
        // Optimal face of positive dimension without any tight row left to
        // blame; report every active row.
        report.dual_detail = active.clone();
        if report.dual_detail.is_empty() {
            report.dual_detail.push(0);
        }
    }
    report.dual_degenerate = !report.dual_detail.is_empty();
    report
}
