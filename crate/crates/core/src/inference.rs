//! Debiased group estimates, the chi-square group statistic, its normal
//! quantile transform and the FDR threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{chi2_sf, normal_isf, normal_sf};
use crate::error::{InferenceError, Result, SolverError};
use crate::federation::messages::Round2Summary;
use crate::solvers::{group_dantzig, DantzigOptions, DantzigProblem, WarmStart};
use crate::tuning::null_combination;

/// Smallest tail probability fed to the inverse normal.
pub const SATURATION_TAIL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestResult {
    pub j: usize,
    pub zeta: f64,
    pub n_score: f64,
    /// The chi-square tail underflowed and `n_score` was clamped.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestingOutcome {
    pub threshold: f64,
    /// Positions (into the score slice) with score >= threshold, ascending.
    pub rejected: Vec<usize>,
    /// No t in [0, t_q] qualified and sqrt(2 log q) was used.
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedEstimate {
    pub j: usize,
    pub beta_breve: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    /// u_hats[k][m]
    pub u_hats: Vec<Vec<DVector<f64>>>,
}

/// sum_m n_m (beta_m)^2 / sigma_m^2
pub fn zeta_statistic(beta: &[f64], sigma_sq: &[f64], n: &[usize]) -> f64 {
    beta.iter().zip(sigma_sq).zip(n).map(|((b, s), &nm)| nm as f64 * b * b / s).sum()
}

/// Phi_bar^{-1}(F_bar_{chi2_df}(zeta) / 2), clamped when the tail underflows.
pub fn normal_score(zeta: f64, df: usize) -> (f64, bool) {
    let tail = chi2_sf(zeta, df) / 2.0;
    if tail < SATURATION_TAIL {
        (normal_isf(SATURATION_TAIL), true)
    } else {
        (normal_isf(tail), false)
    }
}

pub fn group_statistic(est: &DebiasedEstimate, n: &[usize]) -> GroupTestResult {
    let zeta = zeta_statistic(&est.beta_breve, &est.sigma_sq, n);
    let (n_score, saturated) = normal_score(zeta, est.beta_breve.len());
    GroupTestResult { j: est.j, zeta, n_score, saturated }
}

/// Single-hypothesis rule: reject when N_j >= Phi_bar^{-1}(alpha / 2).
pub fn single_test(n_score: f64, alpha: f64) -> bool {
    n_score >= normal_isf(alpha / 2.0)
}

/// sqrt(2 log q - 2 log log q)
pub fn t_max(q: usize) -> f64 {
    let lq = (q as f64).ln();
    (2.0 * lq - 2.0 * lq.ln()).sqrt()
}

/// t_hat = inf{0 <= t <= t_q : 2 q Phi_bar(t) / max(R(t), 1) <= alpha}, with
/// R(t) = #{N_j >= t}; falls back to sqrt(2 log q) when the set is empty.
///
/// R is constant on each interval between consecutive distinct scores, where
/// the ratio decreases in t, so the infimum over an interval (a, b] is the
/// point where 2 q Phi_bar(t) = alpha max(R, 1), clamped to the interval.
pub fn fdr_threshold(scores: &[f64], alpha: f64) -> Result<TestingOutcome, InferenceError> {
    let q = scores.len();
    if q < 3 {
        return Err(InferenceError::InsufficientHypotheses { needed: 3, got: q });
    }
    if !(alpha > 0.0) || alpha.is_nan() {
        return Err(InferenceError::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(bad) = scores.iter().find(|s| !(**s >= 0.0)) {
        return Err(InferenceError::InvalidInput(format!("scores must be non-negative, got {bad}")));
    }
    let qf = q as f64;
    let tq = t_max(q);
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let count_at_least = |t: f64| q - sorted.partition_point(|&s| s < t);
    let passes = |t: f64, r: usize| 2.0 * qf * normal_sf(t) <= alpha * r.max(1) as f64;

    let mut found = None;
    if passes(0.0, count_at_least(0.0)) {
        found = Some(0.0);
    } else {
        let mut ends: Vec<f64> = sorted.iter().copied().filter(|&s| s > 0.0 && s <= tq).collect();
        ends.dedup();
        ends.push(tq);
        let mut lo = 0.0;
        for &hi in &ends {
            if hi <= lo {
                continue;
            }
            let r = count_at_least(hi);
            if passes(hi, r) {
                let exact = normal_isf(alpha * r.max(1) as f64 / (2.0 * qf));
                found = Some(exact.clamp(lo, hi));
                break;
            }
            lo = hi;
        }
    }
    let (threshold, capped) = match found {
        Some(t) => (t, false),
        None => ((2.0 * qf.ln()).sqrt(), true),
    };
    let rejected = (0..q).filter(|&i| scores[i] >= threshold).collect();
    Ok(TestingOutcome { threshold, rejected, capped })
}

/// (FDP, power) of a rejection set. Power is 0 when there are no alternatives.
pub fn fdp_power(rejected: &[usize], nulls: &[usize], alts: &[usize]) -> Result<(f64, f64), InferenceError> {
    use std::collections::HashSet;
    let null: HashSet<usize> = nulls.iter().copied().collect();
    let alt: HashSet<usize> = alts.iter().copied().collect();
    if let Some(&i) = null.intersection(&alt).min() {
        return Err(InferenceError::OverlappingTruth(i));
    }
    let mut false_rej = 0usize;
    let mut true_rej = 0usize;
    for &r in rejected {
        if null.contains(&r) {
            false_rej += 1;
        } else if alt.contains(&r) {
            true_rej += 1;
        } else {
            return Err(InferenceError::UnknownIndex(r));
        }
    }
    let fdp = false_rej as f64 / rejected.len().max(1) as f64;
    let power = if alt.is_empty() { 0.0 } else { true_rej as f64 / alt.len() as f64 };
    Ok((fdp, power))
}

/// Per-fold quantities shared by every coordinate: H_tilde, J_tilde and the
/// score residual xi_tilde - H_tilde beta_tilde.
#[derive(Debug, Clone)]
pub struct DebiasInputs {
    beta_tilde: Vec<Vec<DVector<f64>>>,
    h: Vec<Vec<DMatrix<f64>>>,
    j: Vec<Vec<DMatrix<f64>>>,
    residual: Vec<Vec<DVector<f64>>>,
}

impl DebiasInputs {
    /// `beta_tilde[k][m]` and `round2[k][m]` for K folds and M studies.
    pub fn new(beta_tilde: &[Vec<DVector<f64>>], round2: &[Vec<Round2Summary>]) -> Result<Self, InferenceError> {
        let k = beta_tilde.len();
        if k == 0 || round2.len() != k {
            return Err(InferenceError::InvalidInput("need matching per-fold estimates and summaries".into()));
        }
        let m = beta_tilde[0].len();
        let p = beta_tilde[0].first().map_or(0, |b| b.len());
        for kk in 0..k {
            if beta_tilde[kk].len() != m || round2[kk].len() != m {
                return Err(InferenceError::InvalidInput(format!("fold {kk} does not have {m} studies")));
            }
            for (b, s) in beta_tilde[kk].iter().zip(&round2[kk]) {
                if b.len() != p || s.xi_tilde.len() != p || s.h_tilde.shape() != (p, p) || s.j_tilde.shape() != (p, p)
                {
                    return Err(InferenceError::InvalidInput(format!("fold {kk} has inconsistent dimensions")));
                }
            }
        }
        let h = round2.iter().map(|f| f.iter().map(|s| s.h_tilde.clone()).collect()).collect();
        let j = round2.iter().map(|f| f.iter().map(|s| s.j_tilde.clone()).collect()).collect();
        let residual = round2
            .iter()
            .zip(beta_tilde)
            .map(|(f, b)| f.iter().zip(b).map(|(s, bb)| &s.xi_tilde - &s.h_tilde * bb).collect())
            .collect();
        Ok(DebiasInputs { beta_tilde: beta_tilde.to_vec(), h, j, residual })
    }

    pub fn folds(&self) -> usize {
        self.h.len()
    }

    pub fn studies(&self) -> usize {
        self.h[0].len()
    }

    pub fn p(&self) -> usize {
        self.residual[0][0].len()
    }

    /// Corrected estimate and variance term of coordinate j for one fold and
    /// direction u: (beta_j + u^T r, u^T J u), per study.
    pub fn fold_terms(&self, k: usize, j: usize, u: &[DVector<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut corrected = Vec::with_capacity(u.len());
        let mut variance = Vec::with_capacity(u.len());
        for (m, um) in u.iter().enumerate() {
            let support: Vec<usize> = (0..um.len()).filter(|&i| um[i] != 0.0).collect();
            let r = &self.residual[k][m];
            let jm = &self.j[k][m];
            corrected.push(self.beta_tilde[k][m][j] + support.iter().map(|&i| um[i] * r[i]).sum::<f64>());
            let mut v = 0.0;
            for &a in &support {
                for &b in &support {
                    v += um[a] * jm[(a, b)] * um[b];
                }
            }
            variance.push(v);
        }
        (corrected, variance)
    }
}

/// Everything the fold-wise debiasing produced for one coordinate and radius.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTerms {
    pub j: usize,
    /// corrected[k][m]
    pub corrected: Vec<Vec<f64>>,
    /// variance[k][m]
    pub variance: Vec<Vec<f64>>,
    /// u[k][m]
    pub u: Vec<Vec<DVector<f64>>>,
}

impl FoldTerms {
    fn fold_mean(rows: &[Vec<f64>], m: usize) -> f64 {
        rows.iter().map(|r| r[m]).sum::<f64>() / rows.len() as f64
    }

    pub fn sigma_sq(&self) -> Vec<f64> {
        (0..self.variance[0].len()).map(|m| Self::fold_mean(&self.variance, m)).collect()
    }

    pub fn beta_breve(&self) -> Vec<f64> {
        (0..self.corrected[0].len()).map(|m| Self::fold_mean(&self.corrected, m)).collect()
    }

    /// Sign-split combination centred at zero whatever the truth.
    pub fn beta_null(&self) -> Vec<f64> {
        (0..self.corrected[0].len())
            .map(|m| null_combination(&self.corrected.iter().map(|r| r[m]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn estimate(&self) -> Result<DebiasedEstimate, InferenceError> {
        let sigma_sq = self.sigma_sq();
        if let Some((m, &v)) = sigma_sq.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(InferenceError::DegenerateVariance { coordinate: self.j, study: m, value: v });
        }
        Ok(DebiasedEstimate { j: self.j, beta_breve: self.beta_breve(), sigma_sq, u_hats: self.u.clone() })
    }
}

fn solve_fold(
    inputs: &DebiasInputs,
    k: usize,
    j: usize,
    tau: f64,
    opts: &DantzigOptions,
    warm: Option<&WarmStart>,
) -> Result<(Vec<DVector<f64>>, WarmStart), SolverError> {
    let problem = DantzigProblem { h: &inputs.h[k], target: j, tau };
    let sol = group_dantzig(&problem, opts, warm)?;
    Ok((sol.u, sol.warm))
}

/// Debiasing of coordinate j at one radius.
pub fn debias(inputs: &DebiasInputs, j: usize, tau: f64, opts: &DantzigOptions) -> Result<DebiasedEstimate> {
    let mut terms = FoldTerms { j, corrected: vec![], variance: vec![], u: vec![] };
    for k in 0..inputs.folds() {
        let (u, _) = solve_fold(inputs, k, j, tau, opts, None)?;
        let (c, v) = inputs.fold_terms(k, j, &u);
        terms.corrected.push(c);
        terms.variance.push(v);
        terms.u.push(u);
    }
    Ok(terms.estimate()?)
}

/// Fold terms of coordinate j for each radius in `taus` (any order). Radii
/// are solved from largest to smallest with warm starts; a failure at one
/// radius marks it and every smaller radius as `None`, since the feasible
/// sets are nested.
pub fn debias_path(inputs: &DebiasInputs, j: usize, taus: &[f64], opts: &DantzigOptions) -> Vec<Option<FoldTerms>> {
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[b].total_cmp(&taus[a]));
    let mut out: Vec<Option<FoldTerms>> = vec![None; taus.len()];
    let mut warm: Vec<Option<WarmStart>> = vec![None; inputs.folds()];
    'taus: for &i in &order {
        let mut terms = FoldTerms { j, corrected: vec![], variance: vec![], u: vec![] };
        for k in 0..inputs.folds() {
            match solve_fold(inputs, k, j, taus[i], opts, warm[k].as_ref()) {
                Ok((u, w)) => {
                    let (c, v) = inputs.fold_terms(k, j, &u);
                    terms.corrected.push(c);
                    terms.variance.push(v);
                    terms.u.push(u);
                    warm[k] = Some(w);
                }
                Err(_) => break 'taus,
            }
        }
        out[i] = Some(terms);
    }
    out
}
