//! The in-context hypernetwork: support pairs in, linear voxel encoder out.

mod config;
mod forward;
mod params;

use rayon::prelude::*;

pub use config::{default_d_ff, ModelConfig};
pub use forward::{attention_scale, embed_context};
pub use params::{init_params, ModelParams, ParamLayout, TensorSpec};

use crate::data::{SupportSet, TaskBatch};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Tasks per gradient chunk. Chunk sums are combined in index order, so the
/// batch gradient does not depend on how many threads run.
const GRAD_CHUNK: usize = 4;

/// Emitted linear encoder weights for one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperWeights(pub Vec<f64>);

impl HyperWeights {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major `[V x E]` weights, one row per voxel or task.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of {dim}", values.len())));
        }
        Ok(WeightMatrix { dim, values })
    }

    pub fn from_rows(rows: &[HyperWeights]) -> Result<Self> {
        let dim = rows.first().map(HyperWeights::dim).unwrap_or(0);
        if rows.iter().any(|r| r.dim() != dim) {
            return Err(Error::Shape("weight rows have different lengths".into()));
        }
        Self::new(dim, rows.iter().flat_map(|r| r.0.iter().copied()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Attention logit for one query/key pair: `ln(c) q.k / sqrt(d_k)` with
/// scaling, `q.k / sqrt(d_k)` without. `c` is the number of attended keys and
/// may be any real `>= 1`.
pub fn scaled_attention_logits(q: &[f64], k: &[f64], context_len: f64, logit_scaling: bool) -> f64 {
    assert_eq!(q.len(), k.len(), "query and key lengths differ");
    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
    let base = dot / (q.len() as f64).sqrt();
    if logit_scaling {
        context_len.ln() * base
    } else {
        base
    }
}

/// Emits the encoder weights for one support set.
pub fn forward<T: Scalar>(params: &ModelParams<T>, support: &SupportSet) -> Result<HyperWeights> {
    let (omega, _) = forward::forward_light(params, support)?;
    Ok(HyperWeights(omega.iter().map(|v| v.to_f64()).collect()))
}

/// [`forward`] for every task of a batch.
pub fn forward_batch<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch) -> Result<WeightMatrix> {
    let rows = batch
        .tasks()
        .par_iter()
        .map(|t| forward(params, &t.support))
        .collect::<Result<Vec<_>>>()?;
    WeightMatrix::from_rows(&rows)
}

/// Encoder weights for many support sets (no uniform-size requirement).
pub fn forward_many<T: Scalar>(params: &ModelParams<T>, supports: &[SupportSet]) -> Result<WeightMatrix> {
    let rows = supports
        .par_iter()
        .map(|s| forward(params, s))
        .collect::<Result<Vec<_>>>()?;
    WeightMatrix::from_rows(&rows)
}

/// Linear readout `<x, omega>`.
pub fn predict(omega: &HyperWeights, x: &[f64]) -> Result<f64> {
    if omega.dim() != x.len() {
        return Err(Error::Shape(format!(
            "embedding has length {} but weights have length {}",
            x.len(),
            omega.dim()
        )));
    }
    Ok(omega.0.iter().zip(x).map(|(w, v)| w * v).sum())
}

fn query_responses(batch: &TaskBatch) -> Result<Vec<&[f64]>> {
    batch
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.query
                .responses()
                .ok_or_else(|| Error::Contract(format!("task {i} has no query responses")))
        })
        .collect()
}

/// Mean squared query error over all tasks and queries.
pub fn loss<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch) -> Result<f64> {
    let targets = query_responses(batch)?;
    let weights = forward_batch(params, batch)?;
    let mut total = 0.0;
    for (t, (task, y)) in batch.tasks().iter().zip(targets).enumerate() {
        let omega = HyperWeights(weights.row(t).to_vec());
        for (j, &target) in y.iter().enumerate() {
            let r = predict(&omega, task.query.embedding(j))? - target;
            total += r * r;
        }
    }
    Ok(total / (batch.len() * batch.query_size()) as f64)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch) -> Result<(f64, ModelParams<T>)> {
    let targets = query_responses(batch)?;
    let norm = (batch.len() * batch.query_size()) as f64;
    let work: Vec<(usize, &crate::data::Task)> = batch.tasks().iter().enumerate().collect();
    let partials = work
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| -> Result<(f64, Vec<T>)> {
            let mut g = vec![T::ZERO; params.len()];
            let mut sq = 0.0;
            for &(t, task) in chunk {
                let (omega, cache) = forward::forward_cached(params, &task.support)?;
                let e = omega.len();
                let mut d_omega = vec![0.0f64; e];
                for (j, &target) in targets[t].iter().enumerate() {
                    let x = task.query.embedding(j);
                    let pred: f64 = omega.iter().zip(x).map(|(w, v)| w.to_f64() * v).sum();
                    let r = pred - target;
                    sq += r * r;
                    for (dw, &xv) in d_omega.iter_mut().zip(x) {
                        *dw += 2.0 * r * xv / norm;
                    }
                }
                let d_omega: Vec<T> = d_omega.into_iter().map(T::from_f64).collect();
                forward::backward(params, &cache, &d_omega, &mut g);
            }
            Ok((sq, g))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for (sq, g) in partials {
        total += sq;
        for (acc, v) in grads.as_mut_slice().iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((total / norm, grads))
}

pub fn grad<T: Scalar>(params: &ModelParams<T>, batch: &TaskBatch) -> Result<ModelParams<T>> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

/// Final-layer attention of the readout tokens over all tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub heads: usize,
    pub readout_tokens: usize,
    /// Attended tokens `p + K`.
    pub tokens: usize,
    /// `[heads x readout_tokens x tokens]`; each distribution sums to 1.
    pub weights: Vec<f64>,
    /// Head- and readout-averaged attention on the `p` context tokens,
    /// renormalised to sum to 1.
    pub ranking: Vec<f64>,
}

impl AttentionTrace {
    pub fn distribution(&self, head: usize, readout: usize) -> &[f64] {
        let start = (head * self.readout_tokens + readout) * self.tokens;
        &self.weights[start..start + self.tokens]
    }
}

pub fn attention_trace<T: Scalar>(params: &ModelParams<T>, support: &SupportSet) -> Result<AttentionTrace> {
    let (_, probs) = forward::forward_light(params, support)?;
    let cfg = params.config();
    let (heads, k) = (cfg.heads, cfg.readout_tokens);
    let p = support.len();
    let n = p + k;
    let mut weights = Vec::with_capacity(heads * k * n);
    let mut ranking = vec![0.0; p];
    for h in 0..heads {
        for r in 0..k {
            let row = &probs[h * n * n + (p + r) * n..h * n * n + (p + r + 1) * n];
            weights.extend(row.iter().map(|v| v.to_f64()));
            for (acc, v) in ranking.iter_mut().zip(&row[..p]) {
                *acc += v.to_f64();
            }
        }
    }
    let mass: f64 = ranking.iter().sum();
    if mass > 0.0 {
        ranking.iter_mut().for_each(|v| *v /= mass);
    } else {
        ranking.iter_mut().for_each(|v| *v = 1.0 / p as f64);
    }
    Ok(AttentionTrace {
        heads,
        readout_tokens: k,
        tokens: n,
        weights,
        ranking,
    })
}

#[cfg(test)]
mod tests;
