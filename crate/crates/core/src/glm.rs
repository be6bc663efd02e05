//! Link functions, adjusted regression pairs, datasets and sample splitting.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GlmError;

/// Smallest admissible second derivative of the link when forming adjusted pairs.
pub const WEIGHT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkFamily {
    #[default]
    Logistic,
    Gaussian,
}

/// phi, its first and second derivative at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkValues {
    pub phi: f64,
    pub dphi: f64,
    pub ddphi: f64,
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LinkFamily {
    pub fn eval(self, theta: f64) -> LinkValues {
        match self {
            LinkFamily::Logistic => {
                let phi = if theta > 0.0 {
                    theta + (-theta).exp().ln_1p()
                } else {
                    theta.exp().ln_1p()
                };
                // e^{-|x|} / (1 + e^{-|x|})^2 keeps precision in both tails.
                let e = (-theta.abs()).exp();
                LinkValues {
                    phi,
                    dphi: expit(theta),
                    ddphi: e / ((1.0 + e) * (1.0 + e)),
                }
            }
            LinkFamily::Gaussian => LinkValues {
                phi: 0.5 * theta * theta,
                dphi: theta,
                ddphi: 1.0,
            },
        }
    }

    /// Mean function phi'(theta).
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            LinkFamily::Logistic => expit(theta),
            LinkFamily::Gaussian => theta,
        }
    }

    /// Per-observation negative log-likelihood up to terms free of theta.
    pub fn loss(self, theta: f64, y: f64) -> f64 {
        self.eval(theta).phi - y * theta
    }
}

/// Checked evaluation of (phi, phi', phi'') at `theta`.
pub fn link_eval(family: LinkFamily, theta: f64) -> Result<LinkValues, GlmError> {
    if !theta.is_finite() {
        return Err(GlmError::Domain(theta));
    }
    Ok(family.eval(theta))
}

/// Adjusted pair (X_beta, Y_beta) for one observation.
pub fn adjusted_pair(
    family: LinkFamily,
    x: &DVector<f64>,
    y: f64,
    beta: &DVector<f64>,
) -> Result<(DVector<f64>, f64), GlmError> {
    let theta = x.dot(beta);
    let v = family.eval(theta);
    if !(v.ddphi >= WEIGHT_FLOOR) {
        return Err(GlmError::WeightUnderflow {
            theta,
            weight: v.ddphi,
            floor: WEIGHT_FLOOR,
        });
    }
    let root = v.ddphi.sqrt();
    Ok((x * root, (y - v.dphi + v.ddphi * theta) / root))
}

/// One study's individual-level data. Column 0 of `x` is the intercept.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub study_id: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(study_id: usize, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self, GlmError> {
        if x.nrows() != y.len() {
            return Err(GlmError::InvalidData(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() < 2 {
            return Err(GlmError::InvalidData("need an intercept and at least one covariate".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(GlmError::InvalidData("first column must be the intercept (all ones)".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(GlmError::InvalidData("non-finite entries".into()));
        }
        Ok(Dataset { study_id, x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the rows listed in `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        (x, y)
    }
}

/// Outer folds I_k and, for each k, inner folds of the complement I_{-k}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    pub n: usize,
    pub outer: Vec<Vec<usize>>,
    pub inner: Vec<Vec<Vec<usize>>>,
}

impl FoldPartition {
    pub fn k(&self) -> usize {
        self.outer.len()
    }

    pub fn k_inner(&self) -> usize {
        self.inner.first().map_or(0, Vec::len)
    }

    /// Sorted indices of I_{-k}.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .outer
            .iter()
            .enumerate()
            .filter(|&(kk, _)| kk != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Indices of I_{-k} outside the inner fold `kp`, used to fit the local estimator.
    pub fn inner_training(&self, k: usize, kp: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.inner[k]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != kp)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

fn deal(indices: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(indices.len() / parts + 1); parts];
    for (pos, &i) in indices.iter().enumerate() {
        out[pos % parts].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// `parts` folds of 0..n by seeded shuffle and round-robin deal.
pub fn shuffled_folds(n: usize, parts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    deal(&idx, parts)
}

/// Seeded shuffle followed by round-robin assignment, for the outer folds and
/// then independently within each complement.
pub fn make_partition(n: usize, k: usize, k_inner: usize, seed: u64) -> Result<FoldPartition, GlmError> {
    if k < 2 || k % 2 != 0 {
        return Err(GlmError::Partition(format!("K must be even and at least 2, got {k}")));
    }
    if k_inner < 2 {
        return Err(GlmError::Partition(format!("K' must be at least 2, got {k_inner}")));
    }
    if n < k * k_inner {
        return Err(GlmError::Partition(format!(
            "study size {n} is smaller than K*K' = {}",
            k * k_inner
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let outer = deal(&idx, k);

    let mut inner = Vec::with_capacity(k);
    for kk in 0..k {
        let mut comp: Vec<usize> = outer
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != kk)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        comp.sort_unstable();
        comp.shuffle(&mut rng);
        inner.push(deal(&comp, k_inner));
    }
    Ok(FoldPartition { n, outer, inner })
}

/// Empirical moments of the adjusted pairs over a set of rows:
/// xi = mean X_b Y_b, h = mean X_b X_b^T.
pub fn adjusted_moments(
    family: LinkFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), GlmError> {
    let n = x.nrows();
    let theta = x * beta;
    let mut scaled = x.clone();
    let mut resp = DVector::zeros(n);
    for i in 0..n {
        let v = family.eval(theta[i]);
        if !(v.ddphi >= WEIGHT_FLOOR) {
            return Err(GlmError::WeightUnderflow {
                theta: theta[i],
                weight: v.ddphi,
                floor: WEIGHT_FLOOR,
            });
        }
        scaled.row_mut(i).scale_mut(v.ddphi.sqrt());
        // X_b Y_b = X (Y - phi' + phi'' theta)
        resp[i] = y[i] - v.dphi + v.ddphi * theta[i];
    }
    let inv = 1.0 / n as f64;
    let xi = x.tr_mul(&resp) * inv;
    let h = scaled.tr_mul(&scaled) * inv;
    Ok((xi, h))
}

/// Mean of X X^T (Y - phi'(X^T beta))^2 over the rows of `x`.
pub fn score_outer_product(
    family: LinkFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
) -> DMatrix<f64> {
    let theta = x * beta;
    let mut scaled = x.clone();
    for i in 0..x.nrows() {
        let r = y[i] - family.mean(theta[i]);
        scaled.row_mut(i).scale_mut(r.abs());
    }
    scaled.tr_mul(&scaled) / x.nrows() as f64
}

/// Mean loss of `beta` on the given rows.
pub fn mean_loss(family: LinkFamily, x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let theta = x * beta;
    theta.iter().zip(y.iter()).map(|(&t, &yy)| family.loss(t, yy)).sum::<f64>() / x.nrows() as f64
}
