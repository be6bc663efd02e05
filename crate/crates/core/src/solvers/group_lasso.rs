//! Weighted multi-study quadratic with a group penalty across studies:
//!
//! minimize  sum_m w_m (b_m^T H_m b_m - 2 b_m^T xi_m) + lambda sum_{j>=1} ||(b_1j, ..., b_Mj)||_2
//!
//! solved by exact block coordinate descent over coordinates j.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::block::block_minimize;
use crate::error::SolverError;

#[derive(Debug, Clone, Copy)]
pub struct GroupLassoProblem<'a> {
    pub h: &'a [DMatrix<f64>],
    pub xi: &'a [DVector<f64>],
    pub weights: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLassoSpec {
    pub lambda: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub kkt_tol: f64,
}

impl GroupLassoSpec {
    pub fn new(lambda: f64) -> Self {
        GroupLassoSpec {
            lambda,
            tol: 1e-10,
            max_sweeps: 20_000,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupLassoFit {
    pub beta: Vec<DVector<f64>>,
    pub objective: f64,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub trace: Vec<f64>,
}

impl<'a> GroupLassoProblem<'a> {
    fn validate(&self) -> Result<usize, SolverError> {
        let m = self.h.len();
        if m == 0 || self.xi.len() != m || self.weights.len() != m {
            return Err(SolverError::InvalidInput("mismatched number of studies".into()));
        }
        let p = self.xi[0].len();
        for s in 0..m {
            if self.h[s].shape() != (p, p) || self.xi[s].len() != p {
                return Err(SolverError::InvalidInput(format!("study {s} has inconsistent dimensions")));
            }
            if !(self.weights[s] >= 0.0) {
                return Err(SolverError::InvalidInput(format!("negative weight for study {s}")));
            }
            for j in 0..p {
                let d = self.h[s][(j, j)];
                if d < 0.0 || !d.is_finite() {
                    return Err(SolverError::NotPsd(format!("study {s}, diagonal entry {j} = {d:.3e}")));
                }
            }
        }
        Ok(p)
    }

    pub fn objective(&self, beta: &[DVector<f64>], lambda: f64) -> f64 {
        let mut obj = self.smooth_objective(beta);
        let p = beta[0].len();
        for j in 1..p {
            obj += lambda * beta.iter().map(|b| b[j] * b[j]).sum::<f64>().sqrt();
        }
        obj
    }

    /// The weighted quadratic without the penalty.
    pub fn smooth_objective(&self, beta: &[DVector<f64>]) -> f64 {
        beta.iter()
            .enumerate()
            .map(|(m, b)| self.weights[m] * (b.dot(&(&self.h[m] * b)) - 2.0 * b.dot(&self.xi[m])))
            .sum()
    }

    /// Worst KKT violation at `beta`.
    pub fn kkt_violation(&self, beta: &[DVector<f64>], lambda: f64) -> f64 {
        let m = self.h.len();
        let p = beta[0].len();
        let grads: Vec<DVector<f64>> = (0..m)
            .map(|s| (&self.h[s] * &beta[s] - &self.xi[s]) * (2.0 * self.weights[s]))
            .collect();
        let mut worst = grads.iter().map(|g| g[0].abs()).fold(0.0, f64::max);
        for j in 1..p {
            let nrm = beta.iter().map(|b| b[j] * b[j]).sum::<f64>().sqrt();
            let v = if nrm > 0.0 {
                (0..m)
                    .map(|s| {
                        let r = grads[s][j] + lambda * beta[s][j] / nrm;
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt()
            } else {
                (grads.iter().map(|g| g[j] * g[j]).sum::<f64>().sqrt() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Proximal map of kappa * ||.||_2: (1 - kappa/||v||)_+ v.
pub fn block_soft_threshold(v: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= kappa || norm == 0.0 {
        return DVector::zeros(v.len());
    }
    v * (1.0 - kappa / norm)
}

pub fn group_lasso_quad(
    problem: &GroupLassoProblem<'_>,
    spec: &GroupLassoSpec,
    warm: Option<&[DVector<f64>]>,
) -> Result<GroupLassoFit, SolverError> {
    let p = problem.validate()?;
    let m = problem.h.len();
    if !(spec.lambda >= 0.0) {
        return Err(SolverError::InvalidInput(format!("lambda must be non-negative, got {}", spec.lambda)));
    }
    let mut beta: Vec<DVector<f64>> = match warm {
        Some(w) if w.len() == m && w.iter().all(|b| b.len() == p) => w.to_vec(),
        _ => vec![DVector::zeros(p); m],
    };
    let mut hb: Vec<DVector<f64>> = (0..m).map(|s| &problem.h[s] * &beta[s]).collect();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut out = vec![0.0; m];
    let mut trace = Vec::new();
    let mut prev = problem.objective(&beta, spec.lambda);
    let scale = prev.abs().max(1.0);
    let mut last_change = f64::INFINITY;

    for sweep in 1..=spec.max_sweeps {
        let mut worst = 0.0_f64;
        for j in 0..p {
            for s in 0..m {
                let hjj = problem.h[s][(j, j)];
                let w2 = 2.0 * problem.weights[s];
                a[s] = w2 * hjj;
                b[s] = w2 * (problem.xi[s][j] - hb[s][j] + hjj * beta[s][j]);
            }
            let kappa = if j == 0 { 0.0 } else { spec.lambda };
            block_minimize(&a, &b, kappa, &mut out)?;
            for s in 0..m {
                let delta = out[s] - beta[s][j];
                if delta != 0.0 {
                    hb[s].axpy(delta, &problem.h[s].column(j), 1.0);
                    beta[s][j] = out[s];
                    worst = worst.max(delta.abs());
                }
            }
        }
        let obj: f64 = (0..m)
            .map(|s| problem.weights[s] * (beta[s].dot(&hb[s]) - 2.0 * beta[s].dot(&problem.xi[s])))
            .sum::<f64>()
            + spec.lambda
                * (1..p)
                    .map(|j| beta.iter().map(|v| v[j] * v[j]).sum::<f64>().sqrt())
                    .sum::<f64>();
        trace.push(obj);
        if obj > prev + 1e-9 * scale {
            // Exact block minimization cannot increase a convex objective.
            return Err(SolverError::NotPsd(format!(
                "objective increased by {:.3e} in sweep {sweep}",
                obj - prev
            )));
        }
        prev = obj;
        last_change = worst;
        if worst < spec.tol {
            let viol = problem.kkt_violation(&beta, spec.lambda);
            if viol > spec.kkt_tol {
                return Err(SolverError::KktViolation { violation: viol, tolerance: spec.kkt_tol });
            }
            return Ok(GroupLassoFit { beta, objective: obj, sweeps: sweep, trace });
        }
    }
    Err(SolverError::NonConvergence { iterations: spec.max_sweeps, last_change })
}
