//! Group Dantzig selector for the projection directions:
//!
//!   minimize_u  max_m ||u_m||_1
//!   subject to  || (H_1 u_1 - e_j, ..., H_M u_M - e_j)_r ||_2 <= tau   for every row r.
//!
//! Feasibility is decided through the penalized form
//!
//!   P(u) = sum_m (u_m^T H_m u_m / 2 - u_mj) + tau sum_r ||u_r||_2,
//!
//! which is bounded below exactly when the constraint set is non-empty and whose
//! minimizer satisfies the constraints. The default method then solves the exact
//! problem on growing row/column working sets with an interior-point method; the
//! ADMM method runs operator splitting on the full problem instead.

mod admm;
mod ipm;
mod working_set;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::block::block_minimize;
use crate::error::SolverError;

#[derive(Debug, Clone, Copy)]
pub struct DantzigProblem<'a> {
    pub h: &'a [DMatrix<f64>],
    /// 0-based coordinate j of e_j.
    pub target: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DantzigMethod {
    #[default]
    WorkingSet,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DantzigOptions {
    pub method: DantzigMethod,
    /// Allowed excess of any row norm over tau in the returned point.
    pub feas_tol: f64,
    /// Stopping tolerance on the objective (ADMM) or duality gap (working set).
    pub obj_tol: f64,
    /// ADMM iteration cap.
    pub max_iter: usize,
    pub rho: f64,
    /// Penalized-form solutions with larger l1 norm are treated as infeasible.
    pub l1_cap: f64,
    pub max_penalized_sweeps: usize,
}

impl Default for DantzigOptions {
    fn default() -> Self {
        DantzigOptions {
            method: DantzigMethod::WorkingSet,
            feas_tol: 1e-6,
            obj_tol: 1e-6,
            max_iter: 5000,
            rho: 1.0,
            l1_cap: 1e4,
            max_penalized_sweeps: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DantzigSolution {
    pub u: Vec<DVector<f64>>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
    /// State to seed the solve at the next (smaller) tau for the same target.
    pub warm: WarmStart,
}

/// Solver state carried along a decreasing tau path.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    /// Minimizer of the penalized form.
    pub penalized: Vec<DVector<f64>>,
    /// Support of the exact solution.
    pub columns: Vec<usize>,
    /// Tight constraint rows of the exact solution.
    pub rows: Vec<usize>,
}

impl<'a> DantzigProblem<'a> {
    fn validate(&self) -> Result<usize, SolverError> {
        let m = self.h.len();
        if m == 0 {
            return Err(SolverError::InvalidInput("no studies".into()));
        }
        let p = self.h[0].nrows();
        if self.h.iter().any(|h| h.shape() != (p, p)) {
            return Err(SolverError::InvalidInput("H blocks must be square with equal size".into()));
        }
        if self.target >= p {
            return Err(SolverError::InvalidInput(format!("target {} out of range for p = {p}", self.target)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(SolverError::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        for (b, h) in self.h.iter().enumerate() {
            for j in 0..p {
                if h[(j, j)] < 0.0 || !h[(j, j)].is_finite() {
                    return Err(SolverError::NotPsd(format!("study {b}, diagonal entry {j} = {:.3e}", h[(j, j)])));
                }
            }
        }
        Ok(p)
    }

    fn infeasible(&self, reason: impl Into<String>) -> SolverError {
        SolverError::InfeasibleTau { tau: self.tau, target: self.target, reason: reason.into() }
    }
}

/// max_m ||u_m||_1.
pub fn dantzig_objective(u: &[DVector<f64>]) -> f64 {
    u.iter().map(|v| v.lp_norm(1)).fold(0.0, f64::max)
}

/// Row norms of (H_m u_m - e_j) stacked across studies.
pub fn row_norms(h: &[DMatrix<f64>], target: usize, u: &[DVector<f64>]) -> Vec<f64> {
    let p = h[0].nrows();
    let mut sq = vec![0.0; p];
    for (hm, um) in h.iter().zip(u) {
        let r = hm * um;
        for i in 0..p {
            let v = r[i] - if i == target { 1.0 } else { 0.0 };
            sq[i] += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Largest excess of a row norm over tau (0 when feasible).
pub fn dantzig_violation(h: &[DMatrix<f64>], target: usize, tau: f64, u: &[DVector<f64>]) -> f64 {
    row_norms(h, target, u).into_iter().map(|r| (r - tau).max(0.0)).fold(0.0, f64::max)
}

/// Minimize the penalized form by exact block coordinate descent over rows.
pub(crate) fn penalized_form(
    problem: &DantzigProblem<'_>,
    opts: &DantzigOptions,
    warm: Option<&[DVector<f64>]>,
) -> Result<Vec<DVector<f64>>, SolverError> {
    let h = problem.h;
    let m = h.len();
    let p = h[0].nrows();
    let j = problem.target;
    let tau = problem.tau;
    let mut u: Vec<DVector<f64>> = match warm {
        Some(w) if w.len() == m && w.iter().all(|v| v.len() == p) => w.to_vec(),
        _ => vec![DVector::zeros(p); m],
    };
    let mut hu: Vec<DVector<f64>> = (0..m).map(|s| &h[s] * &u[s]).collect();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut out = vec![0.0; m];
    let tol = 1e-10;

    let mut update = |r: usize, u: &mut Vec<DVector<f64>>, hu: &mut Vec<DVector<f64>>| -> Result<f64, SolverError> {
        for s in 0..m {
            let hrr = h[s][(r, r)];
            a[s] = hrr;
            b[s] = if r == j { 1.0 } else { 0.0 } - hu[s][r] + hrr * u[s][r];
        }
        block_minimize(&a, &b, tau, &mut out).map_err(|_| problem.infeasible("penalized form is unbounded"))?;
        let mut worst = 0.0_f64;
        for s in 0..m {
            let delta = out[s] - u[s][r];
            if delta != 0.0 {
                hu[s].axpy(delta, &h[s].column(r), 1.0);
                u[s][r] = out[s];
                worst = worst.max(delta.abs() * a[s].sqrt());
            }
        }
        Ok(worst)
    };

    let mut sweeps = 0usize;
    loop {
        let mut worst = 0.0_f64;
        for r in 0..p {
            worst = worst.max(update(r, &mut u, &mut hu)?);
        }
        sweeps += 1;
        if worst < tol {
            return Ok(u);
        }
        let active: Vec<usize> = (0..p).filter(|&r| (0..m).any(|s| u[s][r] != 0.0)).collect();
        loop {
            let mut w_act = 0.0_f64;
            for &r in &active {
                w_act = w_act.max(update(r, &mut u, &mut hu)?);
            }
            sweeps += 1;
            if dantzig_objective(&u) > opts.l1_cap {
                return Err(problem.infeasible(format!("penalized solution exceeds l1 cap {:.1e}", opts.l1_cap)));
            }
            if w_act < tol || sweeps > opts.max_penalized_sweeps {
                break;
            }
        }
        if sweeps > opts.max_penalized_sweeps {
            return Err(problem.infeasible(format!(
                "penalized form did not settle in {} sweeps",
                opts.max_penalized_sweeps
            )));
        }
    }
}

pub fn group_dantzig(
    problem: &DantzigProblem<'_>,
    opts: &DantzigOptions,
    warm: Option<&WarmStart>,
) -> Result<DantzigSolution, SolverError> {
    let p = problem.validate()?;
    let m = problem.h.len();
    // u = 0 leaves only row j, with norm sqrt(M).
    if problem.tau >= (m as f64).sqrt() {
        let zero = vec![DVector::zeros(p); m];
        return Ok(DantzigSolution {
            u: zero.clone(),
            objective: 0.0,
            max_violation: 0.0,
            iterations: 0,
            warm: WarmStart { penalized: zero, ..Default::default() },
        });
    }
    let pen = penalized_form(problem, opts, warm.map(|w| w.penalized.as_slice()))?;
    let mut sol = match opts.method {
        DantzigMethod::WorkingSet => working_set::solve(problem, opts, &pen, warm)?,
        DantzigMethod::Admm => admm::solve(problem, opts, &pen)?,
    };
    sol.warm.penalized = pen;
    Ok(sol)
}
