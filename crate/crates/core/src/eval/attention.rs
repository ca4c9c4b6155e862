use crate::data::{support_from_indices, SupportSet, VoxelDataset};
use crate::error::{Error, Result};
use crate::model::{attention_trace, ModelParams};
use crate::tensor::Scalar;

/// One support item with its attention score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedItem {
    /// Position in the support set.
    pub index: usize,
    pub score: f64,
}

/// Sorts scores descending with ties to the lower index and keeps `k`.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<RankedItem>> {
    if k > scores.len() {
        return Err(Error::Config(format!("k = {k} exceeds the support size {}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|index| RankedItem { index, score: scores[index] })
        .collect())
}

/// Support items with the most final-layer attention from the readout tokens.
pub fn top_attention_images<T: Scalar>(params: &ModelParams<T>, support: &SupportSet, k: usize) -> Result<Vec<RankedItem>> {
    top_k(&attention_trace(params, support)?.ranking, k)
}

/// ROI-level ranking: per-voxel ranking scores averaged over `voxels` (all
/// sharing the support stimuli) before taking the top `k`. Returned indices
/// are positions in `support`.
pub fn top_attention_group<T: Scalar>(
    params: &ModelParams<T>,
    ds: &VoxelDataset,
    voxels: &[usize],
    support: &[usize],
    k: usize,
) -> Result<Vec<RankedItem>> {
    if voxels.is_empty() {
        return Err(Error::EmptyResult("no voxels selected for attention ranking".into()));
    }
    let mut acc = vec![0.0; support.len()];
    for &v in voxels {
        let trace = attention_trace(params, &support_from_indices(ds, v, support)?)?;
        for (a, r) in acc.iter_mut().zip(&trace.ranking) {
            *a += r;
        }
    }
    acc.iter_mut().for_each(|a| *a /= voxels.len() as f64);
    top_k(&acc, k)
}
