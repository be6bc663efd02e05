//! ADMM on the splitting z = H u - e, w = u. The u-step is a ridge-type solve
//! with a cached Cholesky factor of H_m^2 + I, the w-step the proximal map of
//! max_m ||w_m||_1 and the z-step a row-wise projection onto the tau-ball.

use nalgebra::{DMatrix, DVector};

use super::{dantzig_objective, dantzig_violation, DantzigOptions, DantzigProblem, DantzigSolution, WarmStart};
use crate::error::SolverError;

/// Soft-threshold level that maps `sorted_abs` (descending) onto the l1 ball of
/// radius `t`; zero when the vector is already inside.
fn ball_threshold(sorted_abs: &[f64], total: f64, t: f64) -> f64 {
    if total <= t {
        return 0.0;
    }
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (k, &a) in sorted_abs.iter().enumerate() {
        prefix += a;
        let cand = (prefix - t) / (k + 1) as f64;
        if a > cand {
            theta = cand;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// argmin_w max_m ||w_m||_1 + 1/(2 kappa) sum_m ||w_m - v_m||^2.
pub(crate) fn prox_max_l1(v: &[DVector<f64>], kappa: f64) -> Vec<DVector<f64>> {
    let sorted: Vec<Vec<f64>> = v
        .iter()
        .map(|vm| {
            let mut a: Vec<f64> = vm.iter().map(|x| x.abs()).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            a
        })
        .collect();
    let totals: Vec<f64> = sorted.iter().map(|a| a.iter().sum()).collect();
    let linf: f64 = sorted.iter().map(|a| a.first().copied().unwrap_or(0.0)).sum();
    if linf <= kappa {
        return v.iter().map(|vm| DVector::zeros(vm.len())).collect();
    }
    let excess = |t: f64| -> f64 {
        sorted.iter().zip(&totals).map(|(a, &tot)| ball_threshold(a, tot, t)).sum::<f64>() - kappa
    };
    let mut lo = 0.0;
    let mut hi = totals.iter().cloned().fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter()
        .zip(sorted.iter().zip(&totals))
        .map(|(vm, (a, &tot))| {
            let th = ball_threshold(a, tot, t);
            vm.map(|x| x.signum() * (x.abs() - th).max(0.0))
        })
        .collect()
}

pub(super) fn solve(
    problem: &DantzigProblem<'_>,
    opts: &DantzigOptions,
    pen: &[DVector<f64>],
) -> Result<DantzigSolution, SolverError> {
    let h = problem.h;
    let m = h.len();
    let p = h[0].nrows();
    let j = problem.target;
    let tau = problem.tau;
    let rho = opts.rho;

    let factors: Vec<_> = h
        .iter()
        .map(|hm| {
            let a = hm * hm + DMatrix::identity(p, p);
            a.cholesky().ok_or_else(|| SolverError::NotPsd("H^2 + I is not positive definite".into()))
        })
        .collect::<Result<_, _>>()?;

    let e = {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        e
    };
    let project = |q: &mut [DVector<f64>]| {
        for r in 0..p {
            let nrm = q.iter().map(|v| v[r] * v[r]).sum::<f64>().sqrt();
            if nrm > tau {
                let f = tau / nrm;
                q.iter_mut().for_each(|v| v[r] *= f);
            }
        }
    };

    let mut u: Vec<DVector<f64>> = pen.to_vec();
    let mut w = u.clone();
    let mut z: Vec<DVector<f64>> = (0..m).map(|s| &h[s] * &u[s] - &e).collect();
    project(&mut z);
    let mut y1 = vec![DVector::zeros(p); m];
    let mut y2 = vec![DVector::zeros(p); m];
    let mut prev_obj = dantzig_objective(&w);

    for it in 1..=opts.max_iter {
        for s in 0..m {
            let rhs = &h[s] * (&e + &z[s] - &y1[s]) + &w[s] - &y2[s];
            u[s] = factors[s].solve(&rhs);
        }
        let v: Vec<DVector<f64>> = (0..m).map(|s| &u[s] + &y2[s]).collect();
        w = prox_max_l1(&v, 1.0 / rho);
        let hu: Vec<DVector<f64>> = (0..m).map(|s| &h[s] * &u[s] - &e).collect();
        let mut q: Vec<DVector<f64>> = (0..m).map(|s| &hu[s] + &y1[s]).collect();
        project(&mut q);
        z = q;
        let mut primal = 0.0_f64;
        for s in 0..m {
            let r1 = &hu[s] - &z[s];
            let r2 = &u[s] - &w[s];
            primal = primal.max(r1.amax()).max(r2.amax());
            y1[s] += r1;
            y2[s] += r2;
        }
        if it % 10 == 0 {
            let obj = dantzig_objective(&w);
            let violation = dantzig_violation(h, j, tau, &w);
            if violation <= opts.feas_tol && primal <= opts.feas_tol && (obj - prev_obj).abs() <= opts.obj_tol {
                return Ok(DantzigSolution {
                    u: w,
                    objective: obj,
                    max_violation: violation,
                    iterations: it,
                    warm: WarmStart::default(),
                });
            }
            prev_obj = obj;
        }
    }
    let violation = dantzig_violation(h, j, tau, &w);
    Err(SolverError::NonConvergence { iterations: opts.max_iter, last_change: violation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_satisfies_optimality_by_perturbation() {
        let v = vec![DVector::from_vec(vec![1.0, -0.4, 0.2]), DVector::from_vec(vec![0.3, 0.9, -1.5])];
        let kappa = 0.7;
        let w = prox_max_l1(&v, kappa);
        let f = |w: &[DVector<f64>]| {
            dantzig_objective(w) + w.iter().zip(&v).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / (2.0 * kappa)
        };
        let base = f(&w);
        for s in 0..2 {
            for i in 0..3 {
                for d in [1e-4, -1e-4] {
                    let mut t = w.clone();
                    t[s][i] += d;
                    assert!(f(&t) >= base - 1e-12);
                }
            }
        }
    }
}
