//! l1-penalized GLM fit with an unpenalized intercept (column 0).
//!
//! Proximal Newton: each outer step solves the weighted least-squares lasso
//! around the current fit by coordinate descent, then backtracks on the true
//! objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::glm::LinkFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSpec {
    pub lambda: f64,
    pub family: LinkFamily,
    /// Convergence tolerance on the sup-norm of the coefficient update.
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed KKT violation at exit.
    pub kkt_tol: f64,
}

impl LassoSpec {
    pub fn new(family: LinkFamily, lambda: f64) -> Self {
        LassoSpec {
            lambda,
            family,
            tol: 1e-9,
            max_iter: 200,
            kkt_tol: 1e-6,
        }
    }
}

/// Mean loss plus the l1 penalty on coordinates 1..p.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, spec: &LassoSpec) -> f64 {
    let theta = x * beta;
    objective_from_theta(&theta, y, beta, spec)
}

fn objective_from_theta(theta: &DVector<f64>, y: &DVector<f64>, beta: &DVector<f64>, spec: &LassoSpec) -> f64 {
    let n = theta.len() as f64;
    let loss: f64 = theta.iter().zip(y.iter()).map(|(&t, &yy)| spec.family.loss(t, yy)).sum::<f64>() / n;
    loss + spec.lambda * beta.iter().skip(1).map(|b| b.abs()).sum::<f64>()
}

/// Largest KKT violation of `beta`.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, spec: &LassoSpec) -> f64 {
    let theta = x * beta;
    let resid = DVector::from_iterator(y.len(), theta.iter().zip(y.iter()).map(|(&t, &yy)| spec.family.mean(t) - yy));
    let grad = x.tr_mul(&resid) / x.nrows() as f64;
    let mut worst = grad[0].abs();
    for j in 1..beta.len() {
        let v = if beta[j] != 0.0 {
            (grad[j] + spec.lambda * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - spec.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Weighted least-squares lasso by cyclic coordinate descent. `resid` holds
/// z - X beta on entry and is kept in sync.
fn weighted_cd(
    x: &DMatrix<f64>,
    w: &[f64],
    beta: &mut DVector<f64>,
    resid: &mut [f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) {
    let n = x.nrows();
    let p = x.ncols();
    let inv_n = 1.0 / n as f64;
    let curv: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>() * inv_n)
        .collect();

    let update = |j: usize, beta: &mut DVector<f64>, resid: &mut [f64]| -> f64 {
        let a = curv[j];
        if a <= 0.0 {
            return 0.0;
        }
        let col = x.column(j);
        let mut g = 0.0;
        for i in 0..n {
            g += w[i] * col[i] * resid[i];
        }
        g = g * inv_n + a * beta[j];
        let new = if j == 0 { g / a } else { soft(g, lambda) / a };
        let delta = new - beta[j];
        if delta != 0.0 {
            for i in 0..n {
                resid[i] -= col[i] * delta;
            }
            beta[j] = new;
        }
        delta.abs() * a.sqrt()
    };

    for _ in 0..max_sweeps {
        let mut worst = 0.0_f64;
        for j in 0..p {
            worst = worst.max(update(j, beta, resid));
        }
        if worst < tol {
            return;
        }
        // Iterate on the active set until it settles, then re-check everything.
        let active: Vec<usize> = (0..p).filter(|&j| j == 0 || beta[j] != 0.0).collect();
        for _ in 0..max_sweeps {
            let mut w_act = 0.0_f64;
            for &j in &active {
                w_act = w_act.max(update(j, beta, resid));
            }
            if w_act < tol {
                break;
            }
        }
    }
}

/// Fit the l1-penalized GLM on (`x`, `y`). `warm` seeds the iterations.
pub fn lasso_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &LassoSpec,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>, SolverError> {
    let (n, p) = x.shape();
    if n == 0 || y.len() != n {
        return Err(SolverError::InvalidInput(format!("x is {n}x{p}, y has {} entries", y.len())));
    }
    if !(spec.lambda >= 0.0) {
        return Err(SolverError::InvalidInput(format!("lambda must be non-negative, got {}", spec.lambda)));
    }
    let mut beta = match warm {
        Some(b) if b.len() == p => b.clone(),
        _ => DVector::zeros(p),
    };
    let inner_tol = spec.tol * 0.1;
    let mut theta = x * &beta;
    let mut obj = objective_from_theta(&theta, y, &beta, spec);
    let mut last_change = f64::INFINITY;
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];

    for _ in 0..spec.max_iter {
        for i in 0..n {
            let v = spec.family.eval(theta[i]);
            let wi = v.ddphi.max(1e-8);
            w[i] = wi;
            resid[i] = (y[i] - v.dphi) / wi;
        }
        let mut cand = beta.clone();
        weighted_cd(x, &w, &mut cand, &mut resid, spec.lambda, inner_tol, 10_000);

        let dir = &cand - &beta;
        let dir_theta = x * &dir;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &beta + &dir * step;
            let trial_theta = &theta + &dir_theta * step;
            let trial_obj = objective_from_theta(&trial_theta, y, &trial, spec);
            if trial_obj <= obj + 1e-13 * obj.abs().max(1.0) {
                beta = trial;
                theta = trial_theta;
                obj = trial_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        last_change = dir.amax() * if accepted { step } else { 0.0 };
        if !accepted || last_change < spec.tol {
            let viol = lasso_kkt_violation(x, y, &beta, spec);
            if viol <= spec.kkt_tol {
                return Ok(beta);
            }
            if !accepted {
                return Err(SolverError::KktViolation { violation: viol, tolerance: spec.kkt_tol });
            }
        }
    }
    let viol = lasso_kkt_violation(x, y, &beta, spec);
    if viol <= spec.kkt_tol {
        return Ok(beta);
    }
    Err(SolverError::NonConvergence { iterations: spec.max_iter, last_change })
}
