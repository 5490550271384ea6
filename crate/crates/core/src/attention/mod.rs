//! Minimal multi-layer, multi-head transformer with a hand-written backward
//! pass, attention-trace capture and the max-effective-rank capacity measure.

mod backward;
pub mod checkpoint;
mod forward;
mod model;

pub use backward::{backward, backward_from, Gradients};
pub use forward::{forward, forward_cached, ForwardCache};
pub use model::{
    clip_spectral, HeadParams, LayerParams, LipschitzBudget, ModelParams, ModelSpec,
    DEFAULT_TEMPERATURE_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Execution};
use crate::spectral;

/// Row-wise softmax of `m / temperature`, stabilized by subtracting each row max.
pub fn softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix> {
    softmax_rows_with_floor(m, temperature, DEFAULT_TEMPERATURE_FLOOR)
}

pub fn softmax_rows_with_floor(m: &Matrix, temperature: f64, floor: f64) -> Result<Matrix> {
    if !(temperature >= floor) {
        return Err(Error::domain(format!(
            "temperature {temperature} below floor {floor}"
        )));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// `softmax_rows(Q Kᵀ / s)` with `s` the spec's logit divisor.
pub fn attention_matrix(q: &Matrix, k: &Matrix, spec: &ModelSpec) -> Result<Matrix> {
    if q.shape() != k.shape() || q.cols() != spec.d_k {
        return Err(Error::shape(format!(
            "Q {:?} and K {:?} must both be n x {}",
            q.shape(),
            k.shape(),
            spec.d_k
        )));
    }
    let logits = q.matmul_t(k)?;
    let a = softmax_rows_with_floor(&logits, spec.logit_scale(), spec.temperature_floor)?;
    audit(&a);
    Ok(a)
}

#[cfg(any(test, feature = "audit"))]
fn audit(a: &Matrix) {
    // Non-finite logits are reported as divergence by the caller.
    if !a.is_finite() {
        return;
    }
    let report = crate::bounds::verify_chain(a);
    assert!(
        report.passed(),
        "attention matrix violates the norm chain: {report:?}"
    );
}

#[cfg(not(any(test, feature = "audit")))]
#[inline(always)]
fn audit(_: &Matrix) {}

/// Attention matrices recorded in one forward pass, indexed `[layer][head]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Matrix>>,
}

impl AttentionTrace {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, heads)| heads.iter().enumerate().map(move |(h, a)| (l, h, a)))
    }

    /// Each matrix is nonnegative with rows summing to 1 within `tol`.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.iter().all(|(_, _, a)| a.is_row_stochastic(tol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub input: usize,
    pub layer: usize,
    pub head: usize,
    pub effective_rank: f64,
}

/// Maximum effective rank over layers, heads and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub dataset: String,
    pub capacity: f64,
    pub entries: Vec<CapacityEntry>,
    /// `per_layer_max[l]` is the max over heads and inputs at layer `l`.
    pub per_layer_max: Vec<f64>,
}

pub fn capacity(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &[Matrix],
    dataset_id: &str,
    exec: Execution,
) -> Result<CapacityReport> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let per_input = par::map_range(exec, dataset.len(), |i| -> Result<Vec<CapacityEntry>> {
        let (_, trace) = forward(params, spec, &dataset[i])?;
        trace
            .iter()
            .map(|(layer, head, a)| {
                Ok(CapacityEntry {
                    input: i,
                    layer,
                    head,
                    effective_rank: spectral::spectral_summary(a)?.effective_rank,
                })
            })
            .collect()
    });
    let mut entries = Vec::with_capacity(dataset.len() * spec.num_layers * spec.num_heads);
    for e in per_input {
        entries.extend(e?);
    }
    let mut per_layer_max = vec![f64::NEG_INFINITY; spec.num_layers];
    for e in &entries {
        per_layer_max[e.layer] = per_layer_max[e.layer].max(e.effective_rank);
    }
    let capacity = per_layer_max.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(CapacityReport {
        dataset: dataset_id.to_string(),
        capacity,
        entries,
        per_layer_max,
    })
}

#[cfg(test)]
mod tests;
