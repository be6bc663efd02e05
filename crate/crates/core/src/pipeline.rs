//! The integrative procedure and its two baselines, sharing the statistic,
//! transform and threshold code.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InferenceError, Result};
use crate::federation::messages::{OneShotSummary, Payload, Round2Summary};
use crate::federation::nodes::{ac_fit, held_out_moments};
use crate::federation::protocol::{
    check_datasets, local_penalty, receive, run_protocol, send, study_partition, DataComputer, ProtocolConfig,
};
use crate::federation::transport::{Slot, Transport};
use crate::federation::BroadcastCoefficients;
use crate::glm::{mean_loss, Dataset};
use crate::inference::{
    debias_path, fdr_threshold, group_statistic, zeta_statistic, DebiasInputs, DebiasedEstimate, GroupTestResult,
    TestingOutcome,
};
use crate::solvers::{lasso_fit, DantzigOptions, LassoSpec};
use crate::tuning::{lambda_rate, scaled, tau_rate, tau_select};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dsilt,
    OneShot,
    Ilma,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dsilt => "dsilt",
            Method::OneShot => "oneshot",
            Method::Ilma => "ilma",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dsilt" => Ok(Method::Dsilt),
            "oneshot" | "one-shot" => Ok(Method::OneShot),
            "ilma" => Ok(Method::Ilma),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub protocol: ProtocolConfig,
    pub alpha: f64,
    pub dantzig: DantzigOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { protocol: ProtocolConfig::default(), alpha: 0.1, dantzig: DantzigOptions::default() }
    }
}

/// Outcome of the radius search for one debiasing problem family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub taus: Vec<f64>,
    /// Distance d(tau); `None` where some coordinate was infeasible.
    pub distance: Vec<Option<f64>>,
    pub selected: usize,
}

impl TauReport {
    pub fn tau(&self) -> f64 {
        self.taus[self.selected]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub estimation_s: f64,
    pub debias_s: f64,
    pub testing_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.estimation_s + self.debias_s + self.testing_s
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub method: Method,
    /// One entry per tested coordinate 1..p.
    pub tests: Vec<GroupTestResult>,
    /// Rejections are coordinates (1..p), not positions.
    pub outcome: TestingOutcome,
    /// One report for the integrative methods, one per study for one-shot.
    pub tau: Vec<TauReport>,
    pub lambda_local: Vec<f64>,
    pub lambda: Option<f64>,
    pub timings: StageTimings,
}

/// Debiasing of every coordinate 1..p with the radius chosen by the
/// null-statistic calibration (chi-square with `df` degrees of freedom).
pub fn select_and_debias(
    inputs: &DebiasInputs,
    taus: &[f64],
    n: &[usize],
    df: usize,
    h_points: usize,
    opts: &DantzigOptions,
) -> Result<(Vec<DebiasedEstimate>, TauReport)> {
    let p = inputs.p();
    let paths: Vec<_> = (1..p).into_par_iter().map(|j| debias_path(inputs, j, taus, opts)).collect();
    let null_stats: Vec<Option<Vec<f64>>> = (0..taus.len())
        .map(|i| {
            paths
                .iter()
                .map(|path| {
                    let terms = path[i].as_ref()?;
                    let sigma = terms.sigma_sq();
                    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                        return None;
                    }
                    Some(zeta_statistic(&terms.beta_null(), &sigma, n))
                })
                .collect()
        })
        .collect();
    let (best, distance) = tau_select(&null_stats, df, h_points)?;
    let estimates = paths
        .iter()
        .map(|path| path[best].as_ref().expect("selected radius is feasible").estimate())
        .collect::<Result<Vec<_>, InferenceError>>()?;
    Ok((estimates, TauReport { taus: taus.to_vec(), distance, selected: best }))
}

/// Statistics and the FDR rule; identical for every method.
pub fn test_all(estimates: &[DebiasedEstimate], n: &[usize], alpha: f64) -> Result<(Vec<GroupTestResult>, TestingOutcome)> {
    let tests: Vec<GroupTestResult> = estimates.iter().map(|e| group_statistic(e, n)).collect();
    let scores: Vec<f64> = tests.iter().map(|t| t.n_score).collect();
    let mut outcome = fdr_threshold(&scores, alpha)?;
    outcome.rejected = outcome.rejected.iter().map(|&i| tests[i].j).collect();
    Ok((tests, outcome))
}

fn integrative_taus(config: &PipelineConfig, m: usize, p: usize, n: &[usize]) -> Vec<f64> {
    let n_bar = n.iter().sum::<usize>() as f64 / n.len() as f64;
    scaled(&config.protocol.grids.tau_mult, tau_rate(m, p, n_bar))
}

fn finish_integrative(
    method: Method,
    config: &PipelineConfig,
    beta_tilde: &[Vec<DVector<f64>>],
    round2: &[Vec<Round2Summary>],
    n: &[usize],
    lambda_local: Vec<f64>,
    lambda: f64,
    estimation_s: f64,
) -> Result<PipelineResult> {
    let m = n.len();
    let inputs = DebiasInputs::new(beta_tilde, round2)?;
    let taus = integrative_taus(config, m, inputs.p(), n);
    let t = Instant::now();
    let (estimates, report) =
        select_and_debias(&inputs, &taus, n, m, config.protocol.grids.h_points, &config.dantzig)?;
    let debias_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (tests, outcome) = test_all(&estimates, n, config.alpha)?;
    Ok(PipelineResult {
        method,
        tests,
        outcome,
        tau: vec![report],
        lambda_local,
        lambda: Some(lambda),
        timings: StageTimings { estimation_s, debias_s, testing_s: t.elapsed().as_secs_f64() },
    })
}

/// The integrative procedure over a transport: summaries only cross nodes.
pub fn dsilt_pipeline(datasets: &[Dataset], config: &PipelineConfig, transport: &dyn Transport) -> Result<PipelineResult> {
    let t = Instant::now();
    let out = run_protocol(datasets, &config.protocol, transport)?;
    let est = t.elapsed().as_secs_f64();
    finish_integrative(Method::Dsilt, config, &out.beta_tilde, &out.round2, &out.n, out.lambda_local, out.lambda, est)
}

/// Pooled individual-level analysis: the same estimator with all data at one
/// site, so the integrative penalty is chosen by held-out loss on the outer
/// folds instead of GIC.
pub fn ilma_pipeline(datasets: &[Dataset], config: &PipelineConfig) -> Result<PipelineResult> {
    let t = Instant::now();
    let p = check_datasets(datasets)?;
    let pc = &config.protocol;
    let dcs: Vec<DataComputer<'_>> =
        datasets.par_iter().map(|d| DataComputer::new(d, pc)).collect::<Result<_>>()?;
    let r1: Vec<Vec<_>> = (0..pc.k)
        .into_par_iter()
        .map(|k| dcs.iter().map(|dc| dc.round1(k)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n: Vec<usize> = dcs.iter().map(DataComputer::n).collect();

    let lambda = match pc.integrative_penalty {
        Some(l) => l,
        None => {
            let n_bar = n.iter().sum::<usize>() as f64 / n.len() as f64;
            let grid = scaled(&pc.grids.lambda_mult, lambda_rate(n.len(), p, n_bar));
            pooled_holdout_penalty(datasets, &dcs, &r1, &grid, pc.family)?
        }
    };
    let beta_tilde: Vec<Vec<DVector<f64>>> =
        r1.par_iter().map(|fold| ac_fit(fold, lambda, None).map(|f| f.beta)).collect::<Result<_>>()?;
    let round2: Vec<Vec<Round2Summary>> = beta_tilde
        .iter()
        .enumerate()
        .map(|(k, beta)| {
            let b = BroadcastCoefficients { fold_id: k, beta_blocks: beta.clone() };
            dcs.iter().map(|dc| dc.round2(&b)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let est = t.elapsed().as_secs_f64();
    let lambda_local = dcs.iter().map(DataComputer::lambda).collect();
    finish_integrative(Method::Ilma, config, &beta_tilde, &round2, &n, lambda_local, lambda, est)
}

/// Penalty minimizing the pooled loss of each fold's fit on its held-out
/// fold, summed over folds and studies. Ties go to the smaller penalty.
fn pooled_holdout_penalty(
    datasets: &[Dataset],
    dcs: &[DataComputer<'_>],
    r1: &[Vec<crate::federation::Round1Summary>],
    grid: &[f64],
    family: crate::glm::LinkFamily,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut loss = vec![None; grid.len()];
    let mut warm: Vec<Option<Vec<DVector<f64>>>> = vec![None; r1.len()];
    for &i in &order {
        let mut total = 0.0;
        let mut ok = true;
        for (k, fold) in r1.iter().enumerate() {
            match ac_fit(fold, grid[i], warm[k].as_deref()) {
                Ok(fit) => {
                    for (d, dc) in datasets.iter().zip(dcs) {
                        let (x, y) = d.subset(&dc.partition().outer[k]);
                        total += mean_loss(family, &x, &y, &fit.beta[d.study_id]) * x.nrows() as f64;
                    }
                    warm[k] = Some(fit.beta);
                }
                Err(_) => ok = false,
            }
        }
        if ok {
            loss[i] = Some(total);
        }
    }
    let mut best: Option<usize> = None;
    for i in 0..grid.len() {
        if let Some(l) = loss[i] {
            if best.map_or(true, |b| l < loss[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    best.map(|b| grid[b])
        .ok_or_else(|| InferenceError::Tuning("every integrative penalty failed".into()).into())
}

/// Local debiasing per study; only debiased coordinates and their variances
/// are sent to the AC.
pub fn one_shot_pipeline(
    datasets: &[Dataset],
    config: &PipelineConfig,
    transport: &dyn Transport,
) -> Result<PipelineResult> {
    let p = check_datasets(datasets)?;
    let pc = &config.protocol;
    let mut timings = StageTimings::default();
    let mut reports = Vec::with_capacity(datasets.len());
    let mut lambda_local = Vec::with_capacity(datasets.len());

    for d in datasets {
        let t = Instant::now();
        let partition = study_partition(d, pc)?;
        let lambda_m = local_penalty(d, pc)?;
        let spec = LassoSpec::new(pc.family, lambda_m);
        let mut beta_hat = Vec::with_capacity(pc.k);
        let mut local = Vec::with_capacity(pc.k);
        for k in 0..pc.k {
            let (x, y) = d.subset(&partition.complement(k));
            let b = lasso_fit(&x, &y, &spec, beta_hat.last().map(|v: &Vec<DVector<f64>>| &v[0]))?;
            local.push(vec![held_out_moments(d, &partition, k, &b, pc.family)?]);
            beta_hat.push(vec![b]);
        }
        timings.estimation_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let inputs = DebiasInputs::new(&beta_hat, &local)?;
        let taus = scaled(&pc.grids.tau_mult, tau_rate(1, p, d.n() as f64));
        let (estimates, report) = select_and_debias(&inputs, &taus, &[d.n()], 1, pc.grids.h_points, &config.dantzig)?;
        timings.debias_s += t.elapsed().as_secs_f64();

        let summary = OneShotSummary {
            study_id: d.study_id,
            n_used: d.n(),
            beta_breve: DVector::from_iterator(p, std::iter::once(0.0).chain(estimates.iter().map(|e| e.beta_breve[0]))),
            sigma_sq: DVector::from_iterator(p, std::iter::once(0.0).chain(estimates.iter().map(|e| e.sigma_sq[0]))),
        };
        send(transport, Slot::OneShot { study: d.study_id }, Payload::OneShot(summary))?;
        reports.push(report);
        lambda_local.push(lambda_m);
    }

    let t = Instant::now();
    let mut received = Vec::with_capacity(datasets.len());
    for m in 0..datasets.len() {
        match receive(transport, Slot::OneShot { study: m })? {
            Payload::OneShot(s) if s.study_id == m && s.beta_breve.len() == p => received.push(s),
            other => {
                return Err(crate::error::ProtocolError::Unexpected(format!(
                    "one-shot slot {m} holds a {:?} message",
                    other.round()
                ))
                .into())
            }
        }
    }
    let n: Vec<usize> = received.iter().map(|s| s.n_used).collect();
    let estimates: Vec<DebiasedEstimate> = (1..p)
        .map(|j| DebiasedEstimate {
            j,
            beta_breve: received.iter().map(|s| s.beta_breve[j]).collect(),
            sigma_sq: received.iter().map(|s| s.sigma_sq[j]).collect(),
            u_hats: Vec::new(),
        })
        .collect();
    let (tests, outcome) = test_all(&estimates, &n, config.alpha)?;
    timings.testing_s = t.elapsed().as_secs_f64();
    Ok(PipelineResult { method: Method::OneShot, tests, outcome, tau: reports, lambda_local, lambda: None, timings })
}
