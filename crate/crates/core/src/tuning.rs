//! Selection of the local penalties, the integrative penalty and the
//! debiasing radius.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{chi2_sf, normal_sf};
use crate::error::{InferenceError, Result};
use crate::federation::messages::Round1Summary;
use crate::glm::{mean_loss, shuffled_folds, Dataset, LinkFamily};
use crate::solvers::{group_lasso_quad, lasso_fit, GroupLassoProblem, GroupLassoSpec, GroupLassoFit, LassoSpec};

/// `count` log-spaced points from `lo` to `hi`, ascending.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    }
}

/// Multipliers applied to each theoretical rate, plus the number of calibration points H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrids {
    pub lambda_m_mult: Vec<f64>,
    pub lambda_mult: Vec<f64>,
    pub tau_mult: Vec<f64>,
    pub h_points: usize,
    /// GIC penalty per degree of freedom; `None` uses log(N)/N.
    pub gamma: Option<f64>,
}

impl Default for TuningGrids {
    fn default() -> Self {
        TuningGrids {
            lambda_m_mult: log_spaced(0.1, 10.0, 10),
            lambda_mult: log_spaced(0.1, 10.0, 10),
            // Points at or below the rate are dropped: with n_m/K < p the
            // program is infeasible or very slow there.
            tau_mult: log_spaced(0.1, 10.0, 10).into_iter().filter(|&c| c > 1.0).collect(),
            h_points: 10,
            gamma: None,
        }
    }
}

impl TuningGrids {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("lambda_m", &self.lambda_m_mult), ("lambda", &self.lambda_mult), ("tau", &self.tau_mult)] {
            if g.is_empty() || g.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
                return Err(InferenceError::Tuning(format!("{name} grid must be non-empty and positive")).into());
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(InferenceError::Tuning(format!("{name} grid must be strictly ascending")).into());
            }
        }
        if self.h_points == 0 {
            return Err(InferenceError::Tuning("H must be positive".into()).into());
        }
        Ok(())
    }
}

/// sqrt(log p / n_m)
pub fn lambda_m_rate(p: usize, n_m: usize) -> f64 {
    ((p as f64).ln() / n_m as f64).sqrt()
}

/// sqrt(M + log p) / (sqrt(n) M)
pub fn lambda_rate(m: usize, p: usize, n: f64) -> f64 {
    ((m as f64 + (p as f64).ln()) / n).sqrt() / m as f64
}

/// sqrt(M + log p) / sqrt(n)
pub fn tau_rate(m: usize, p: usize, n: f64) -> f64 {
    ((m as f64 + (p as f64).ln()) / n).sqrt()
}

pub fn scaled(mults: &[f64], rate: f64) -> Vec<f64> {
    mults.iter().map(|c| c * rate).collect()
}

const CV_FOLDS: usize = 5;

/// Held-out loss for each grid value under 5-fold CV, or `None` where a fit failed.
pub fn cv_scores(data: &Dataset, seed: u64, grid: &[f64], family: LinkFamily) -> Vec<Option<f64>> {
    let folds = shuffled_folds(data.n(), CV_FOLDS, seed);
    let mut total = vec![Some(0.0); grid.len()];
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let (xt, yt) = data.subset(&train);
        let (xv, yv) = data.subset(test);
        let mut warm: Option<DVector<f64>> = None;
        for &i in &order {
            match lasso_fit(&xt, &yt, &LassoSpec::new(family, grid[i]), warm.as_ref()) {
                Ok(beta) => {
                    if let Some(t) = total[i].as_mut() {
                        *t += mean_loss(family, &xv, &yv, &beta) * test.len() as f64;
                    }
                    warm = Some(beta);
                }
                Err(_) => total[i] = None,
            }
        }
    }
    total.into_iter().map(|t| t.map(|v| v / data.n() as f64)).collect()
}

/// Penalty minimizing the 5-fold held-out loss; ties go to the larger penalty.
pub fn cv_lambda_local(data: &Dataset, seed: u64, grid: &[f64], family: LinkFamily) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let scores = cv_scores(data, seed, grid, family);
    let mut best: Option<(f64, f64)> = None;
    for (&lam, score) in grid.iter().zip(&scores) {
        if let Some(s) = *score {
            let better = match best {
                None => true,
                Some((bl, bs)) => s < bs || (s == bs && lam > bl),
            };
            if better {
                best = Some((lam, s));
            }
        }
    }
    best.map(|b| b.0).ok_or_else(|| {
        InferenceError::Tuning(format!("local LASSO failed for every penalty in study {}", data.study_id)).into()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GicEntry {
    pub lambda: f64,
    pub deviance: f64,
    pub df: Option<f64>,
    pub gic: Option<f64>,
    pub selected: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GicReport {
    pub gamma: f64,
    pub entries: Vec<GicEntry>,
}

/// Weights |I_{-k}^(m)| / |I_{-k}| and the pooled size.
pub fn summary_weights(summaries: &[Round1Summary]) -> (Vec<f64>, usize) {
    let total: usize = summaries.iter().map(|s| s.n_used).sum();
    (summaries.iter().map(|s| s.n_used as f64 / total as f64).collect(), total)
}

/// Group indices with a non-zero block; the intercept is always kept.
pub fn active_groups(beta: &[DVector<f64>]) -> Vec<usize> {
    let p = beta[0].len();
    (0..p).filter(|&j| j == 0 || beta.iter().any(|b| b[j] != 0.0)).collect()
}

/// trace(A^{-1} D) with D the deviance Hessian and A = D + penalty Hessian,
/// both restricted to the active groups. `None` if A is singular.
pub fn degrees_of_freedom(problem: &GroupLassoProblem<'_>, beta: &[DVector<f64>], lambda: f64) -> Option<f64> {
    let m = beta.len();
    let active = active_groups(beta);
    let s = active.len();
    let dim = m * s;
    let idx = |mm: usize, a: usize| mm * s + a;
    let mut d = DMatrix::<f64>::zeros(dim, dim);
    for mm in 0..m {
        let w2 = 2.0 * problem.weights[mm];
        for (a, &ja) in active.iter().enumerate() {
            for (b, &jb) in active.iter().enumerate() {
                d[(idx(mm, a), idx(mm, b))] = w2 * problem.h[mm][(ja, jb)];
            }
        }
    }
    let mut a_mat = d.clone();
    for (a, &j) in active.iter().enumerate() {
        if j == 0 {
            continue;
        }
        let bj: Vec<f64> = beta.iter().map(|b| b[j]).collect();
        let norm = bj.iter().map(|v| v * v).sum::<f64>().sqrt();
        for m1 in 0..m {
            for m2 in 0..m {
                let ident = if m1 == m2 { 1.0 / norm } else { 0.0 };
                a_mat[(idx(m1, a), idx(m2, a))] += lambda * (ident - bj[m1] * bj[m2] / norm.powi(3));
            }
        }
    }
    let sol = a_mat.lu().solve(&d)?;
    let tr = sol.trace();
    tr.is_finite().then_some(tr)
}

/// Fits along the grid (largest penalty first, warm-started) and picks the
/// GIC minimizer. Ties go to the smaller penalty.
pub fn gic_select(summaries: &[Round1Summary], grid: &[f64], gamma: Option<f64>) -> Result<(f64, GicReport)> {
    if grid.is_empty() {
        return Err(InferenceError::Tuning("empty integrative penalty grid".into()).into());
    }
    let (weights, total) = summary_weights(summaries);
    let h: Vec<DMatrix<f64>> = summaries.iter().map(|s| s.h_hat.clone()).collect();
    let xi: Vec<DVector<f64>> = summaries.iter().map(|s| s.xi_hat.clone()).collect();
    let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &weights };
    let gamma = gamma.unwrap_or_else(|| (total as f64).ln() / total as f64);

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut entries: Vec<Option<GicEntry>> = vec![None; grid.len()];
    let mut warm: Option<GroupLassoFit> = None;
    for &i in &order {
        let lambda = grid[i];
        let fit = group_lasso_quad(&problem, &GroupLassoSpec::new(lambda), warm.as_ref().map(|f| f.beta.as_slice()))?;
        let deviance = problem.smooth_objective(&fit.beta);
        let df = degrees_of_freedom(&problem, &fit.beta, lambda);
        entries[i] = Some(GicEntry {
            lambda,
            deviance,
            df,
            gic: df.map(|d| deviance + gamma * d),
            selected: false,
            note: df.is_none().then(|| "penalized Hessian singular on the active set".to_string()),
        });
        warm = Some(fit);
    }
    let mut entries: Vec<GicEntry> = entries.into_iter().map(Option::unwrap).collect();
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        if let Some(g) = e.gic {
            let better = match best {
                None => true,
                Some(b) => {
                    let bg = entries[b].gic.unwrap();
                    g < bg || (g == bg && e.lambda < entries[b].lambda)
                }
            };
            if better {
                best = Some(i);
            }
        }
    }
    let best = best.ok_or_else(|| InferenceError::Tuning("every integrative penalty was skipped".into()))?;
    entries[best].selected = true;
    Ok((grid[best], GicReport { gamma, entries }))
}

/// Split-sign aggregate: K^{-1} sum_k (-1)^{1{k > K/2}} c_k, with folds
/// numbered from 1.
pub fn null_combination(per_fold: &[f64]) -> f64 {
    let k = per_fold.len();
    let half = k / 2;
    per_fold.iter().enumerate().map(|(i, &c)| if i < half { c } else { -c }).sum::<f64>() / k as f64
}

/// x_h = Phi_bar(sqrt(2 log q)) h / H for h = 1..H.
pub fn calibration_points(q: usize, h_points: usize) -> Vec<f64> {
    let top = normal_sf((2.0 * (q as f64).ln()).sqrt());
    (1..=h_points).map(|h| top * h as f64 / h_points as f64).collect()
}

/// Distance between the null-statistic rejection count and its
/// nominal value 2 q x_h, averaged over the calibration points.
pub fn tau_distance(zeta_null: &[f64], df: usize, h_points: usize) -> f64 {
    let q = zeta_null.len();
    let tails: Vec<f64> = zeta_null.iter().map(|&z| chi2_sf(z, df)).collect();
    let xs = calibration_points(q, h_points);
    xs.iter()
        .map(|&x| {
            let r = tails.iter().filter(|&&f| f <= 2.0 * x).count() as f64;
            (r / (2.0 * q as f64 * x) - 1.0).powi(2)
        })
        .sum::<f64>()
        / h_points as f64
}

/// Index of the candidate with the smallest distance; infeasible candidates
/// (`None`) are skipped and ties go to the earlier (smaller) candidate.
pub fn tau_select(null_stats: &[Option<Vec<f64>>], df: usize, h_points: usize) -> Result<(usize, Vec<Option<f64>>)> {
    let mut dist = Vec::with_capacity(null_stats.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in null_stats.iter().enumerate() {
        let d = match z {
            Some(z) => {
                if z.len() < 3 {
                    return Err(InferenceError::InsufficientHypotheses { needed: 3, got: z.len() }.into());
                }
                Some(tau_distance(z, df, h_points))
            }
            None => None,
        };
        if let Some(d) = d {
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        dist.push(d);
    }
    let (i, _) = best.ok_or_else(|| {
        InferenceError::Tuning("every tau candidate is infeasible; enlarge the tau grid".into())
    })?;
    Ok((i, dist))
}
