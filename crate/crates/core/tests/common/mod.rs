//! Reference implementations shared by the integration test targets.
#![allow(dead_code)]

use dsilt::federation::{BroadcastCoefficients, OneShotSummary, Payload, Round1Summary, Round2Summary};
use dsilt::inference::t_max;
use dsilt::dist::normal_sf;
use dsilt::solvers::{block_soft_threshold, GroupLassoProblem};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_psd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p + 1, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() / (p as f64 + 1.0) + DMatrix::identity(p, p) * 0.05
}

/// Accelerated proximal gradient on the same objective, intercept unpenalized.
pub fn prox_gradient_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    let lip = 0.25 * x.norm_squared() / n;
    let step = 1.0 / lip;
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut z = beta.clone();
    let mut t = 1.0_f64;
    for _ in 0..200_000 {
        let theta = x * &z;
        let r = DVector::from_iterator(
            y.len(),
            theta.iter().zip(y.iter()).map(|(&t, &yy)| 1.0 / (1.0 + (-t).exp()) - yy),
        );
        let g = x.tr_mul(&r) / n;
        let mut next = &z - g * step;
        for j in 1..p {
            let v = next[j];
            next[j] = v.signum() * (v.abs() - step * lambda).max(0.0);
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &beta) * ((t - 1.0) / t_next);
        let done = (&next - &beta).amax() < 1e-14;
        beta = next;
        t = t_next;
        if done {
            break;
        }
    }
    beta
}

/// Proximal gradient on the stacked problem: the group prox is exact, so this
/// converges to the minimizer independently of block coordinate descent.
pub fn prox_gradient_group(problem: &GroupLassoProblem<'_>, lambda: f64) -> Vec<DVector<f64>> {
    let m = problem.h.len();
    let p = problem.xi[0].len();
    let lip = (0..m)
        .map(|s| 2.0 * problem.weights[s] * problem.h[s].symmetric_eigenvalues().max())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut beta = vec![DVector::zeros(p); m];
    for _ in 0..500_000 {
        let mut next: Vec<DVector<f64>> = (0..m)
            .map(|s| {
                let g = (&problem.h[s] * &beta[s] - &problem.xi[s]) * (2.0 * problem.weights[s]);
                &beta[s] - g * step
            })
            .collect();
        for j in 1..p {
            let v = DVector::from_fn(m, |s, _| next[s][j]);
            let out = block_soft_threshold(&v, step * lambda);
            for s in 0..m {
                next[s][j] = out[s];
            }
        }
        let change = (0..m).map(|s| (&next[s] - &beta[s]).amax()).fold(0.0, f64::max);
        beta = next;
        if change < 1e-13 {
            break;
        }
    }
    beta
}

/// Brute force for diagonal blocks: zero off-target entries are optimal, so the
/// search reduces to the target entries of each study. Two studies only.
pub fn grid_oracle(d1: f64, d2: f64, tau: f64) -> f64 {
    let step = 1e-3;
    let mut best = f64::INFINITY;
    let lo = |d: f64| ((1.0 - tau) / d).max(0.0);
    let hi = |d: f64| (1.0 + tau) / d;
    let mut a = lo(d1) - step;
    while a <= hi(d1) + step {
        let ra = (d1 * a - 1.0).powi(2);
        if ra <= tau * tau {
            let mut b = lo(d2) - step;
            while b <= hi(d2) + step {
                if ra + (d2 * b - 1.0).powi(2) <= tau * tau {
                    best = best.min(a.abs().max(b.abs()));
                }
                b += step;
            }
        }
        a += step;
    }
    best
}

/// Smallest grid point t in [0, t_q] (step 1e-4) with 2 q Phi_bar(t) <= alpha max(R(t), 1).
pub fn grid_threshold(scores: &[f64], alpha: f64) -> (f64, Vec<usize>) {
    let q = scores.len();
    let tq = t_max(q);
    let steps = (tq / 1e-4).floor() as usize;
    let mut t_hat = (2.0 * (q as f64).ln()).sqrt();
    for i in 0..=steps {
        let t = i as f64 * 1e-4;
        let r = scores.iter().filter(|&&s| s >= t).count();
        if 2.0 * q as f64 * normal_sf(t) <= alpha * r.max(1) as f64 {
            t_hat = t;
            break;
        }
    }
    let rejected = (0..q).filter(|&i| scores[i] >= t_hat).collect();
    (t_hat, rejected)
}

pub fn random_scores(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    let signals = rng.gen_range(0..q / 3 + 1);
    (0..q)
        .map(|i| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let shift = if i < signals { rng.gen_range(1.0..5.0) } else { 0.0 };
            (z + shift).abs()
        })
        .collect()
}

pub fn sample_payloads() -> Vec<Payload> {
    vec![
        Payload::Probe,
        Payload::Round1(Round1Summary {
            study_id: 2,
            fold_id: 1,
            n_used: 150,
            xi_hat: dvector![0.1, -2.5e-300, 1.0 / 3.0],
            h_hat: dmatrix![1.0, 0.2, 0.3; 0.2, 5e-17, -0.0; 0.3, -0.0, 7.0],
        }),
        Payload::Broadcast(BroadcastCoefficients { fold_id: 0, beta_blocks: vec![dvector![1.0, 2.0], dvector![-3.0, f64::MIN_POSITIVE]] }),
        Payload::Round2(Round2Summary {
            study_id: 0,
            fold_id: 0,
            n_used: 7,
            xi_tilde: dvector![0.5, 0.25],
            h_tilde: dmatrix![1.0, 0.1; 0.2, 1.0],
            j_tilde: dmatrix![0.3, 0.0; 0.0, 0.4],
        }),
        Payload::OneShot(OneShotSummary { study_id: 1, n_used: 9, beta_breve: dvector![0.0, 1.5], sigma_sq: dvector![0.0, 2.0] }),
    ]
}
