//! Measurements logged during training and the closed-form bound
//! calculators.

mod bounds;
mod optimum;
mod record;

pub use bounds::{
    bound_direct, bound_ffalora, e2_uniform_limit, e2_uniform_limit_quoted, generalization_bounds, BoundInputs,
    GeneralizationBounds,
};
pub use optimum::{compute_w_star, compute_w_star_from, excess_risk, minimize, ConvexObjective, Minimum, Objective, W_STAR_TOL};
pub use record::{metrics_csv_bytes, read_metrics_csv, write_metrics_csv, MetricsRecord, Participant, METRICS_COLUMNS};

use crate::error::{Error, Result};
use crate::linalg::{rank_from_singular_values, svd, Matrix};

/// Numerical rank of an aggregated update and the share of its squared
/// singular mass beyond `r_target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTrace {
    pub rank: usize,
    pub tail_mass: f64,
}

/// Rank and tail mass `Σ_{j>r} s_j² / Σ_j s_j²` of `update`.
///
/// Singular values at or below the default rank tolerance count as zero, so
/// an update of rank `≤ r_target` has tail mass exactly 0. The zero matrix
/// has rank 0 and tail mass 0.
pub fn rank_trace(update: &Matrix, r_target: usize) -> Result<RankTrace> {
    let s = svd(update)?.singular_values;
    let rank = rank_from_singular_values(update.rows(), update.cols(), &s, None);
    let kept: Vec<f64> = s.iter().take(rank).map(|x| x * x).collect();
    let total: f64 = kept.iter().sum();
    let tail = kept.iter().skip(r_target).fold(0.0, |acc, x| acc + x);
    let tail_mass = if total > 0.0 { tail / total } else { 0.0 };
    Ok(RankTrace { rank, tail_mass })
}

pub fn svd_tail_mass(update: &Matrix, r_target: usize) -> Result<f64> {
    Ok(rank_trace(update, r_target)?.tail_mass)
}

/// Unweighted mean of per-class F1 over all `C` classes; a class with no
/// true positives contributes 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::contract("macro_f1 with zero classes"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::contract(format!("class index outside 0..{num_classes}")));
        }
        pred_count[p] += 1;
        true_count[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let f1_sum: f64 = (0..num_classes)
        .map(|c| {
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / (pred_count[c] + true_count[c]) as f64
            }
        })
        .sum();
    Ok(f1_sum / num_classes as f64)
}

/// One aggregation of a run, as seen by [`norm_bound_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormAuditPoint {
    /// `‖W_agg‖₂` after the aggregation.
    pub weight_norm: f64,
    /// Local iterations run so far.
    pub local_steps: usize,
    /// Running maximum of gradient spectral norms.
    pub grad_bound: f64,
}

/// `‖W_agg‖₂ ≤ B₀ + η · steps · D` at each point, with a relative slack of
/// `1e-12` for rounding.
pub fn norm_bound_audit(points: &[NormAuditPoint], eta: f64, b0: f64) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            let bound = b0 + eta * p.local_steps as f64 * p.grad_bound;
            p.weight_norm <= bound * (1.0 + 1e-12) + 1e-15
        })
        .collect()
}
