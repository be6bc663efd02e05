//! Orchestration of the three communication rounds.
//!
//! DCs run round 1 for every fold, the AC fits each fold and broadcasts, DCs
//! run round 2. Each phase finishes for all nodes before the next starts.

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::messages::{BroadcastCoefficients, MessageEnvelope, Payload, Round1Summary, Round2Summary};
use super::nodes::{ac_fit, check_round1, dc_round1, dc_round2};
use super::transport::{Slot, Transport};
use super::wire::{deserialize, serialize};
use crate::error::{Error, ProtocolError, Result};
use crate::glm::{make_partition, Dataset, FoldPartition, LinkFamily};
use crate::simgen::{substream, StreamPurpose};
use crate::tuning::{cv_lambda_local, gic_select, lambda_m_rate, lambda_rate, scaled, GicReport, TuningGrids};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub family: LinkFamily,
    pub k: usize,
    pub k_inner: usize,
    /// Source of the fold partitions and CV splits.
    pub seed: u64,
    pub grids: TuningGrids,
    /// Fixed local penalties, one per study; tuned by CV when absent.
    pub local_penalty: Option<Vec<f64>>,
    /// Fixed integrative penalty; tuned by GIC when absent.
    pub integrative_penalty: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            family: LinkFamily::Logistic,
            k: 2,
            k_inner: 5,
            seed: 0,
            grids: TuningGrids::default(),
            local_penalty: None,
            integrative_penalty: None,
        }
    }
}

/// Seed for one study and purpose, derived from the protocol seed.
pub fn study_seed(seed: u64, study: usize, purpose: StreamPurpose) -> u64 {
    substream(seed, 0, study as u64, purpose).next_u64()
}

pub fn study_partition(data: &Dataset, config: &ProtocolConfig) -> Result<FoldPartition> {
    let seed = study_seed(config.seed, data.study_id, StreamPurpose::Partition);
    Ok(make_partition(data.n(), config.k, config.k_inner, seed)?)
}

/// Local penalty for one study: the configured value or the CV choice.
pub fn local_penalty(data: &Dataset, config: &ProtocolConfig) -> Result<f64> {
    if let Some(fixed) = &config.local_penalty {
        return fixed.get(data.study_id).copied().ok_or_else(|| {
            Error::Config(format!("no local penalty configured for study {}", data.study_id))
        });
    }
    let grid = scaled(&config.grids.lambda_m_mult, lambda_m_rate(data.p(), data.n()));
    let seed = study_seed(config.seed, data.study_id, StreamPurpose::Tuning);
    cv_lambda_local(data, seed, &grid, config.family)
}

/// A data computer. The dataset is private; only summaries leave.
pub struct DataComputer<'a> {
    data: &'a Dataset,
    partition: FoldPartition,
    family: LinkFamily,
    lambda: f64,
}

impl<'a> DataComputer<'a> {
    pub fn new(data: &'a Dataset, config: &ProtocolConfig) -> Result<Self> {
        Ok(DataComputer {
            data,
            partition: study_partition(data, config)?,
            family: config.family,
            lambda: local_penalty(data, config)?,
        })
    }

    pub fn study_id(&self) -> usize {
        self.data.study_id
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn partition(&self) -> &FoldPartition {
        &self.partition
    }

    pub fn round1(&self, k: usize) -> Result<Round1Summary> {
        dc_round1(self.data, &self.partition, k, self.lambda, self.family)
    }

    pub fn round2(&self, broadcast: &BroadcastCoefficients) -> Result<Round2Summary> {
        dc_round2(self.data, &self.partition, broadcast.fold_id, broadcast, self.family)
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    pub lambda_local: Vec<f64>,
    pub lambda: f64,
    pub gic: Option<GicReport>,
    /// beta_tilde[k][m]
    pub beta_tilde: Vec<Vec<DVector<f64>>>,
    /// round2[k][m]
    pub round2: Vec<Vec<Round2Summary>>,
    pub n: Vec<usize>,
}

fn node_failure(study: Option<usize>, fold: usize) -> impl FnOnce(Error) -> Error {
    move |e| ProtocolError::NodeFailure { study, fold, source: Box::new(e) }.into()
}

pub fn send(transport: &dyn Transport, slot: Slot, payload: Payload) -> Result<()> {
    transport.put(slot, serialize(&MessageEnvelope::new(payload)))?;
    Ok(())
}

pub fn receive(transport: &dyn Transport, slot: Slot) -> Result<Payload> {
    let frame = transport.get(slot)?;
    Ok(deserialize(&frame)?.payload)
}

fn unexpected(slot: Slot, got: &Payload) -> Error {
    ProtocolError::Unexpected(format!("slot {slot} holds a {:?} message", got.round())).into()
}

pub fn check_datasets(datasets: &[Dataset]) -> Result<usize> {
    let p = datasets.first().map(Dataset::p).ok_or_else(|| Error::Config("no studies".into()))?;
    for (m, d) in datasets.iter().enumerate() {
        if d.study_id != m {
            return Err(Error::Config(format!("dataset {m} has study_id {}", d.study_id)));
        }
        if d.p() != p {
            return Err(Error::Config(format!("study {m} has p = {}, study 0 has {p}", d.p())));
        }
    }
    Ok(p)
}

/// Integrative penalty from the fold-0 summaries (GIC) unless fixed.
pub fn integrative_penalty(r1_fold0: &[Round1Summary], config: &ProtocolConfig) -> Result<(f64, Option<GicReport>)> {
    if let Some(l) = config.integrative_penalty {
        return Ok((l, None));
    }
    let m = r1_fold0.len();
    let p = r1_fold0[0].xi_hat.len();
    // n_m of the full studies; each summary covers (K-1)/K of a study.
    let n_bar: f64 =
        r1_fold0.iter().map(|s| s.n_used as f64).sum::<f64>() / m as f64 * config.k as f64 / (config.k - 1) as f64;
    let grid = scaled(&config.grids.lambda_mult, lambda_rate(m, p, n_bar));
    let (lambda, report) = gic_select(r1_fold0, &grid, config.grids.gamma)?;
    Ok((lambda, Some(report)))
}

/// Runs both rounds over `transport` and returns what the AC holds at the end.
pub fn run_protocol(datasets: &[Dataset], config: &ProtocolConfig, transport: &dyn Transport) -> Result<ProtocolOutput> {
    check_datasets(datasets)?;
    let m_count = datasets.len();
    let k_count = config.k;

    let dcs: Vec<DataComputer<'_>> = datasets
        .par_iter()
        .map(|d| DataComputer::new(d, config).map_err(node_failure(Some(d.study_id), 0)))
        .collect::<Result<_>>()?;

    // Round 1.
    dcs.par_iter()
        .flat_map_iter(|dc| (0..k_count).map(move |k| (dc, k)))
        .try_for_each(|(dc, k)| {
            let s = dc.round1(k).map_err(node_failure(Some(dc.study_id()), k))?;
            send(transport, Slot::Round1 { study: dc.study_id(), fold: k }, Payload::Round1(s))
                .map_err(node_failure(Some(dc.study_id()), k))
        })?;

    // Collection and integration at the AC.
    let mut r1: Vec<Vec<Round1Summary>> = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let mut fold = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let slot = Slot::Round1 { study: m, fold: k };
            match receive(transport, slot).map_err(node_failure(Some(m), k))? {
                Payload::Round1(s) => fold.push(s),
                other => return Err(node_failure(Some(m), k)(unexpected(slot, &other))),
            }
        }
        check_round1(&fold, k).map_err(node_failure(None, k))?;
        r1.push(fold);
    }
    let (lambda, gic) = integrative_penalty(&r1[0], config).map_err(node_failure(None, 0))?;
    let fits: Vec<Vec<DVector<f64>>> = r1
        .par_iter()
        .enumerate()
        .map(|(k, fold)| ac_fit(fold, lambda, None).map(|f| f.beta).map_err(node_failure(None, k)))
        .collect::<Result<_>>()?;
    for (k, beta) in fits.iter().enumerate() {
        let b = BroadcastCoefficients { fold_id: k, beta_blocks: beta.clone() };
        send(transport, Slot::Broadcast { fold: k }, Payload::Broadcast(b)).map_err(node_failure(None, k))?;
    }

    // Round 2.
    dcs.par_iter()
        .flat_map_iter(|dc| (0..k_count).map(move |k| (dc, k)))
        .try_for_each(|(dc, k)| {
            let fail = || node_failure(Some(dc.study_id()), k);
            let slot = Slot::Broadcast { fold: k };
            let b = match receive(transport, slot).map_err(fail())? {
                Payload::Broadcast(b) => b,
                other => return Err(fail()(unexpected(slot, &other))),
            };
            let s = dc.round2(&b).map_err(fail())?;
            send(transport, Slot::Round2 { study: dc.study_id(), fold: k }, Payload::Round2(s)).map_err(fail())
        })?;

    let mut round2 = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let mut fold = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let slot = Slot::Round2 { study: m, fold: k };
            match receive(transport, slot).map_err(node_failure(Some(m), k))? {
                Payload::Round2(s) if s.study_id == m && s.fold_id == k => fold.push(s),
                other => return Err(node_failure(Some(m), k)(unexpected(slot, &other))),
            }
        }
        round2.push(fold);
    }

    Ok(ProtocolOutput {
        lambda_local: dcs.iter().map(DataComputer::lambda).collect(),
        lambda,
        gic,
        beta_tilde: fits,
        round2,
        n: dcs.iter().map(DataComputer::n).collect(),
    })
}
