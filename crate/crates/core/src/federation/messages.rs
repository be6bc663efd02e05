//! Payload types allowed to cross a node boundary.
//!
//! Every type here carries aggregates only (vectors of length p and p x p
//! matrices). Individual rows never appear in a message.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Marker for types that may be sent between nodes.
pub trait BoundaryPayload: Clone + Send + Sync + 'static {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Probe,
    R1,
    Broadcast,
    R2,
    OneShot,
}

/// Cross-fitted moments of the adjusted pairs over I_{-k}.
#[derive(Debug, Clone, PartialEq)]
pub struct Round1Summary {
    pub study_id: usize,
    pub fold_id: usize,
    pub n_used: usize,
    pub xi_hat: DVector<f64>,
    pub h_hat: DMatrix<f64>,
}

/// Moments on the held-out fold I_k at the broadcast coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Round2Summary {
    pub study_id: usize,
    pub fold_id: usize,
    pub n_used: usize,
    pub xi_tilde: DVector<f64>,
    pub h_tilde: DMatrix<f64>,
    pub j_tilde: DMatrix<f64>,
}

/// Integrative estimate for fold k, one block per study.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastCoefficients {
    pub fold_id: usize,
    pub beta_blocks: Vec<DVector<f64>>,
}

/// What a study sends in the one-shot baseline: debiased coordinates and
/// their variances, O(p) numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct OneShotSummary {
    pub study_id: usize,
    pub n_used: usize,
    pub beta_breve: DVector<f64>,
    pub sigma_sq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Probe,
    Round1(Round1Summary),
    Broadcast(BroadcastCoefficients),
    Round2(Round2Summary),
    OneShot(OneShotSummary),
}

impl Payload {
    pub fn round(&self) -> Round {
        match self {
            Payload::Probe => Round::Probe,
            Payload::Round1(_) => Round::R1,
            Payload::Broadcast(_) => Round::Broadcast,
            Payload::Round2(_) => Round::R2,
            Payload::OneShot(_) => Round::OneShot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub protocol_version: u32,
    pub payload: Payload,
}

impl MessageEnvelope {
    pub fn new(payload: Payload) -> Self {
        MessageEnvelope { protocol_version: PROTOCOL_VERSION, payload }
    }

    pub fn round(&self) -> Round {
        self.payload.round()
    }
}

impl BoundaryPayload for Round1Summary {}
impl BoundaryPayload for Round2Summary {}
impl BoundaryPayload for BroadcastCoefficients {}
impl BoundaryPayload for OneShotSummary {}
impl BoundaryPayload for Payload {}
impl BoundaryPayload for MessageEnvelope {}
