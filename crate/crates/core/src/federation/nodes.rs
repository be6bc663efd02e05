//! Node-side computations for the data computers (DC) and the analysis
//! computer (AC).

use nalgebra::{DMatrix, DVector};

use super::messages::{BroadcastCoefficients, Round1Summary, Round2Summary};
use crate::error::{ProtocolError, Result};
use crate::glm::{adjusted_moments, score_outer_product, Dataset, FoldPartition, LinkFamily};
use crate::solvers::{group_lasso_quad, lasso_fit, GroupLassoFit, GroupLassoProblem, GroupLassoSpec, LassoSpec};
use crate::tuning::summary_weights;

fn check_partition(data: &Dataset, partition: &FoldPartition, k: usize) -> Result<()> {
    if partition.n != data.n() {
        return Err(ProtocolError::Dimension(format!(
            "partition covers {} rows, study {} has {}",
            partition.n,
            data.study_id,
            data.n()
        ))
        .into());
    }
    if k >= partition.k() {
        return Err(ProtocolError::Dimension(format!("fold {k} out of range")).into());
    }
    Ok(())
}

/// Round-1 moments for fold k: each inner cell I_{-k,k'} is weighted by a
/// LASSO fit on I_{-k} without that cell, and the K' cell averages are
/// averaged.
pub fn dc_round1(
    data: &Dataset,
    partition: &FoldPartition,
    k: usize,
    lambda_m: f64,
    family: LinkFamily,
) -> Result<Round1Summary> {
    check_partition(data, partition, k)?;
    let p = data.p();
    let mut xi = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    let spec = LassoSpec::new(family, lambda_m);
    let mut warm: Option<DVector<f64>> = None;
    let k_inner = partition.k_inner();
    for kp in 0..k_inner {
        let (xt, yt) = data.subset(&partition.inner_training(k, kp));
        let beta = lasso_fit(&xt, &yt, &spec, warm.as_ref())?;
        let (xe, ye) = data.subset(&partition.inner[k][kp]);
        let (xi_c, h_c) = adjusted_moments(family, &xe, &ye, &beta)?;
        xi += xi_c;
        h += h_c;
        warm = Some(beta);
    }
    let scale = 1.0 / k_inner as f64;
    Ok(Round1Summary {
        study_id: data.study_id,
        fold_id: k,
        n_used: partition.n - partition.outer[k].len(),
        xi_hat: xi * scale,
        h_hat: h * scale,
    })
}

/// Round-2 moments on the held-out fold I_k at the broadcast coefficients.
pub fn dc_round2(
    data: &Dataset,
    partition: &FoldPartition,
    k: usize,
    broadcast: &BroadcastCoefficients,
    family: LinkFamily,
) -> Result<Round2Summary> {
    check_partition(data, partition, k)?;
    if broadcast.fold_id != k {
        return Err(ProtocolError::Unexpected(format!(
            "broadcast for fold {} delivered to fold {k}",
            broadcast.fold_id
        ))
        .into());
    }
    let beta = broadcast.beta_blocks.get(data.study_id).ok_or_else(|| {
        ProtocolError::Dimension(format!("broadcast has no block for study {}", data.study_id))
    })?;
    held_out_moments(data, partition, k, beta, family)
}

/// xi, H and J on I_k at a coefficient vector fitted without I_k.
pub fn held_out_moments(
    data: &Dataset,
    partition: &FoldPartition,
    k: usize,
    beta: &DVector<f64>,
    family: LinkFamily,
) -> Result<Round2Summary> {
    check_partition(data, partition, k)?;
    if beta.len() != data.p() {
        return Err(ProtocolError::Dimension(format!("block has length {}, expected {}", beta.len(), data.p())).into());
    }
    let (x, y) = data.subset(&partition.outer[k]);
    let (xi, h) = adjusted_moments(family, &x, &y, beta)?;
    let j = score_outer_product(family, &x, &y, beta);
    Ok(Round2Summary {
        study_id: data.study_id,
        fold_id: k,
        n_used: x.nrows(),
        xi_tilde: xi,
        h_tilde: h,
        j_tilde: j,
    })
}

/// Checks that the M summaries belong to one fold, are in study order and share p.
pub fn check_round1(summaries: &[Round1Summary], fold: usize) -> Result<usize> {
    let p = summaries.first().map(|s| s.xi_hat.len()).ok_or_else(|| ProtocolError::Missing("round-1 summaries".into()))?;
    for (m, s) in summaries.iter().enumerate() {
        if s.fold_id != fold || s.study_id != m {
            return Err(ProtocolError::Unexpected(format!(
                "expected study {m} fold {fold}, got study {} fold {}",
                s.study_id, s.fold_id
            ))
            .into());
        }
        if s.xi_hat.len() != p || s.h_hat.shape() != (p, p) {
            return Err(ProtocolError::Dimension(format!("study {m} summary does not have dimension {p}")).into());
        }
        if s.n_used == 0 {
            return Err(ProtocolError::Dimension(format!("study {m} reports n_used = 0")).into());
        }
    }
    Ok(p)
}

/// The integrative fit for one fold from the M round-1 summaries.
pub fn ac_fit(summaries: &[Round1Summary], lambda: f64, warm: Option<&[DVector<f64>]>) -> Result<GroupLassoFit> {
    let fold = summaries.first().map_or(0, |s| s.fold_id);
    check_round1(summaries, fold)?;
    let (weights, _) = summary_weights(summaries);
    let h: Vec<DMatrix<f64>> = summaries.iter().map(|s| s.h_hat.clone()).collect();
    let xi: Vec<DVector<f64>> = summaries.iter().map(|s| s.xi_hat.clone()).collect();
    let problem = GroupLassoProblem { h: &h, xi: &xi, weights: &weights };
    Ok(group_lasso_quad(&problem, &GroupLassoSpec::new(lambda), warm)?)
}

pub fn ac_integrate(summaries: &[Round1Summary], lambda: f64) -> Result<BroadcastCoefficients> {
    let fit = ac_fit(summaries, lambda, None)?;
    Ok(BroadcastCoefficients { fold_id: summaries[0].fold_id, beta_blocks: fit.beta })
}
