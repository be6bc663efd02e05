//! Simulated multi-study designs, coefficients and outcomes.
//!
//! Random streams: every draw comes from a ChaCha8 generator keyed by the
//! experiment seed with stream id `replication << 24 | study << 8 | purpose`,
//! so any (replication, study) pair can be regenerated on its own.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::GlmError;
use crate::glm::{Dataset, LinkFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Design {
    /// Gaussian columns with corr(X_i, X_j) = rho^|i-j|.
    Ar1 { rho: f64 },
    /// Binary observations of a two-state hidden Markov chain.
    Hmm { switch_prob: f64, flip_prob: f64 },
}

impl Design {
    pub fn ar1() -> Self {
        Design::Ar1 { rho: 0.5 }
    }

    pub fn hmm() -> Self {
        Design::Hmm { switch_prob: 0.2, flip_prob: 0.2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Design::Ar1 { .. } => "ar1",
            Design::Hmm { .. } => "hmm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub design: Design,
    pub family: LinkFamily,
    /// Number of studies M.
    pub studies: usize,
    /// Observations per study.
    pub n: usize,
    /// Dimension including the intercept.
    pub p: usize,
    /// Number of non-null coordinates.
    pub s: usize,
    /// Signal strength.
    pub mu: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), GlmError> {
        if self.studies == 0 {
            return Err(GlmError::InvalidData("need at least one study".into()));
        }
        if self.p < 2 {
            return Err(GlmError::InvalidData("p must include the intercept and one covariate".into()));
        }
        if self.s > self.p - 1 {
            return Err(GlmError::InvalidData(format!("s = {} exceeds p - 1 = {}", self.s, self.p - 1)));
        }
        if self.n == 0 {
            return Err(GlmError::InvalidData("n must be positive".into()));
        }
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(GlmError::InvalidData(format!("mu must be finite and non-negative, got {}", self.mu)));
        }
        match self.design {
            Design::Ar1 { rho } if !(rho.abs() < 1.0) => {
                Err(GlmError::InvalidData(format!("AR(1) coefficient must lie in (-1, 1), got {rho}")))
            }
            Design::Hmm { switch_prob, flip_prob }
                if !(0.0..=1.0).contains(&switch_prob) || !(0.0..=1.0).contains(&flip_prob) =>
            {
                Err(GlmError::InvalidData("HMM probabilities must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamPurpose {
    Design = 1,
    Coefficients = 2,
    Outcomes = 3,
    Partition = 4,
    Tuning = 5,
}

/// Generator for one (replication, study, purpose) sub-stream.
pub fn substream(seed: u64, replication: u64, study: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replication << 24) | ((study & 0xFFFF) << 8) | purpose as u64);
    rng
}

/// True coefficients per study; the alternative set is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta: Vec<DVector<f64>>,
    /// 0-based coordinates with a non-zero coefficient in some study.
    pub support: Vec<usize>,
}

impl GroundTruth {
    /// Null coordinates among the tested set 1..p.
    pub fn nulls(&self, p: usize) -> Vec<usize> {
        (1..p).filter(|j| !self.support.contains(j)).collect()
    }
}

pub fn gen_design(spec: &ScenarioSpec, replication: u64) -> Vec<DMatrix<f64>> {
    (0..spec.studies)
        .map(|m| {
            let mut rng = substream(spec.seed, replication, m as u64, StreamPurpose::Design);
            let mut x = DMatrix::<f64>::zeros(spec.n, spec.p);
            for i in 0..spec.n {
                x[(i, 0)] = 1.0;
                match spec.design {
                    Design::Ar1 { rho } => {
                        let innov = (1.0 - rho * rho).sqrt();
                        let mut prev: f64 = rng.sample(StandardNormal);
                        x[(i, 1)] = prev;
                        for c in 2..spec.p {
                            let z: f64 = rng.sample(StandardNormal);
                            prev = rho * prev + innov * z;
                            x[(i, c)] = prev;
                        }
                    }
                    Design::Hmm { switch_prob, flip_prob } => {
                        let mut state = rng.gen_bool(0.5);
                        for c in 1..spec.p {
                            if c > 1 && rng.gen_bool(switch_prob) {
                                state = !state;
                            }
                            let obs = if rng.gen_bool(flip_prob) { !state } else { state };
                            x[(i, c)] = if obs { 1.0 } else { 0.0 };
                        }
                    }
                }
            }
            x
        })
        .collect()
}

/// beta_j^(m) = mu (nu_j^(m) + 1) psi_j on coordinates 1..=s, with psi_j = +-1
/// shared across studies and nu_j^(m) ~ N(0, (mu/2)^2).
pub fn gen_coefficients(spec: &ScenarioSpec, replication: u64) -> GroundTruth {
    let mut shared = substream(spec.seed, replication, 0xFFFF, StreamPurpose::Coefficients);
    let psi: Vec<f64> = (0..spec.s).map(|_| if shared.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let beta = (0..spec.studies)
        .map(|m| {
            let mut rng = substream(spec.seed, replication, m as u64, StreamPurpose::Coefficients);
            let mut b = DVector::zeros(spec.p);
            for (i, &sign) in psi.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let nu = 0.5 * spec.mu * z;
                b[1 + i] = spec.mu * (nu + 1.0) * sign;
            }
            b
        })
        .collect();
    let support = if spec.mu > 0.0 { (1..=spec.s).collect() } else { Vec::new() };
    GroundTruth { beta, support }
}

pub fn gen_outcomes(
    spec: &ScenarioSpec,
    replication: u64,
    x: &[DMatrix<f64>],
    truth: &GroundTruth,
) -> Vec<DVector<f64>> {
    x.iter()
        .zip(&truth.beta)
        .enumerate()
        .map(|(m, (xm, bm))| {
            let mut rng = substream(spec.seed, replication, m as u64, StreamPurpose::Outcomes);
            let theta = xm * bm;
            DVector::from_iterator(
                theta.len(),
                theta.iter().map(|&t| match spec.family {
                    LinkFamily::Logistic => {
                        let prob = spec.family.mean(t);
                        if Bernoulli::new(prob).unwrap().sample(&mut rng) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    LinkFamily::Gaussian => t + rng.sample::<f64, _>(StandardNormal),
                }),
            )
        })
        .collect()
}

/// Datasets and truth for one replication.
pub fn generate(spec: &ScenarioSpec, replication: u64) -> Result<(Vec<Dataset>, GroundTruth), GlmError> {
    spec.validate()?;
    let x = gen_design(spec, replication);
    let truth = gen_coefficients(spec, replication);
    let y = gen_outcomes(spec, replication, &x, &truth);
    let data = x
        .into_iter()
        .zip(y)
        .enumerate()
        .map(|(m, (xm, ym))| Dataset::new(m, xm, ym))
        .collect::<Result<_, _>>()?;
    Ok((data, truth))
}
