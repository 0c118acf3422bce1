//! Allocation and embedding quality measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::round_coupling;
use crate::model::{compute_affinity, AffinityParams, Dataset, EmbeddingMatrix, PureMatching};
use crate::sinkhorn::{extend_with_slack, solve_ot, StopRule};
use crate::trainer::cross_entropy_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    /// Micro-averaged F1, which equals accuracy for single-label assignments.
    pub micro: f64,
    pub macro_avg: f64,
    pub per_item: Vec<f64>,
}

/// Per-item F1 from the `m`-class confusion matrix. Items that appear in
/// neither matching count as perfectly recovered.
pub fn f1_scores(truth: &PureMatching, pred: &PureMatching, m: usize) -> Result<F1Scores> {
    if truth.len() != pred.len() {
        return Err(Error::shape("predicted matching", truth.len(), pred.len()));
    }
    if let Some(&j) = truth.as_slice().iter().chain(pred.as_slice()).find(|&&j| j >= m) {
        return Err(Error::IndexOutOfRange { index: j, len: m });
    }
    let mut tp = vec![0usize; m];
    let mut fp = vec![0usize; m];
    let mut fn_ = vec![0usize; m];
    for (&t, &p) in truth.as_slice().iter().zip(pred.as_slice()) {
        if t == p {
            tp[t] += 1;
        } else {
            fn_[t] += 1;
            fp[p] += 1;
        }
    }
    let per_item: Vec<f64> = (0..m)
        .map(|j| {
            let denom = 2 * tp[j] + fp[j] + fn_[j];
            if denom == 0 {
                1.0
            } else {
                2.0 * tp[j] as f64 / denom as f64
            }
        })
        .collect();
    let micro = if truth.is_empty() {
        1.0
    } else {
        tp.iter().sum::<usize>() as f64 / truth.len() as f64
    };
    let macro_avg = per_item.iter().sum::<f64>() / m.max(1) as f64;
    Ok(F1Scores {
        micro,
        macro_avg,
        per_item,
    })
}

/// Average Euclidean distance between matching rows. Rows are compared in
/// order; no permutation alignment is attempted.
pub fn mean_embedding_distance(learned: &EmbeddingMatrix, truth: &EmbeddingMatrix) -> Result<f64> {
    if learned.rows() != truth.rows() || learned.dim() != truth.dim() {
        return Err(Error::shape(
            "embedding distance",
            format!("{}x{}", truth.rows(), truth.dim()),
            format!("{}x{}", learned.rows(), learned.dim()),
        ));
    }
    if learned.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..learned.rows())
        .map(|j| {
            let diff = &learned.row(j) - &truth.row(j);
            diff.dot(&diff).sqrt()
        })
        .sum();
    Ok(total / learned.rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_item_f1: Vec<f64>,
    pub mean_embed_dist: Option<f64>,
    pub cross_entropy: f64,
}

/// Recovers a matching from learned item embeddings and compares it to the
/// dataset's observed matching.
///
/// The coupling is computed with a converged Sinkhorn solve and rounded to a
/// pure matching by the capacity-constrained assignment solver.
pub fn evaluate(
    dataset: &Dataset,
    items: &EmbeddingMatrix,
    users: &EmbeddingMatrix,
    params: AffinityParams,
) -> Result<EvalReport> {
    let scores = compute_affinity(users, items, &dataset.distances, params.alpha)?;
    let inst = extend_with_slack(scores.view(), &dataset.capacities, params.epsilon)?;
    let solved = solve_ot(&inst, StopRule::converged())?;
    let coupling = solved.user_coupling();
    let recovered = round_coupling(&coupling, &dataset.capacities)?;
    let f1 = f1_scores(&dataset.matching, &recovered, dataset.n_items())?;
    let mean_embed_dist = dataset
        .items_truth
        .as_ref()
        .map(|truth| mean_embedding_distance(items, truth))
        .transpose()?;
    Ok(EvalReport {
        f1_micro: f1.micro,
        f1_macro: f1.macro_avg,
        per_item_f1: f1.per_item,
        mean_embed_dist,
        cross_entropy: cross_entropy_loss(&dataset.matching, &coupling)?,
    })
}
