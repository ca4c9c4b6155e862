use rand::Rng;

use super::dataset::VoxelDataset;
use crate::error::{Error, Result};

/// The `p` (embedding, response) pairs that condition the hypernetwork for one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    embeddings: Vec<f64>,
    responses: Vec<f64>,
    dim: usize,
}

impl SupportSet {
    pub fn new(embeddings: Vec<f64>, responses: Vec<f64>, dim: usize) -> Result<Self> {
        check_pairs(&embeddings, Some(&responses), dim)?;
        if responses.is_empty() {
            return Err(Error::Shape("support set needs at least one pair".into()));
        }
        Ok(SupportSet {
            embeddings,
            responses,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// Reordered copy; row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> SupportSet {
        assert_eq!(order.len(), self.len());
        let mut embeddings = Vec::with_capacity(self.embeddings.len());
        for &i in order {
            embeddings.extend_from_slice(self.embedding(i));
        }
        SupportSet {
            embeddings,
            responses: order.iter().map(|&i| self.responses[i]).collect(),
            dim: self.dim,
        }
    }
}

/// Held-out stimuli for one task. Responses are absent at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    embeddings: Vec<f64>,
    responses: Option<Vec<f64>>,
    dim: usize,
}

impl QuerySet {
    pub fn new(embeddings: Vec<f64>, responses: Option<Vec<f64>>, dim: usize) -> Result<Self> {
        check_pairs(&embeddings, responses.as_deref(), dim)?;
        Ok(QuerySet {
            embeddings,
            responses,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_pairs(embeddings: &[f64], responses: Option<&[f64]>, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Shape("embedding dimension must be positive".into()));
    }
    if embeddings.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "{} embedding values do not form rows of length {dim}",
            embeddings.len()
        )));
    }
    if let Some(r) = responses {
        if r.len() * dim != embeddings.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows but {} responses",
                embeddings.len() / dim,
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite response".into()));
        }
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub support: SupportSet,
    pub query: QuerySet,
}

/// Tasks sharing one context size `p` and one query count `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    tasks: Vec<Task>,
}

impl TaskBatch {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::Shape("task batch is empty".into()))?;
        let (p, q, e) = (first.support.len(), first.query.len(), first.support.dim());
        for (i, t) in tasks.iter().enumerate() {
            if t.support.len() != p || t.query.len() != q {
                return Err(Error::Shape(format!(
                    "ragged batch: task {i} has (p={}, q={}) but task 0 has (p={p}, q={q})",
                    t.support.len(),
                    t.query.len()
                )));
            }
            if t.support.dim() != e || t.query.dim() != e {
                return Err(Error::Shape(format!("task {i} has a different embedding dimension")));
            }
        }
        Ok(TaskBatch { tasks })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn context_size(&self) -> usize {
        self.tasks[0].support.len()
    }

    pub fn query_size(&self) -> usize {
        self.tasks[0].query.len()
    }

    pub fn into_tasks(self) -> Vec<Task> {
        self.tasks
    }
}

/// Draws `p + q` distinct stimuli uniformly without replacement; the first
/// `p` form the support and the rest the query.
pub fn sample_indices<R: Rng + ?Sized>(
    num_stimuli: usize,
    p: usize,
    q: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if p == 0 || q == 0 {
        return Err(Error::Config(format!("context and query sizes must be positive (p={p}, q={q})")));
    }
    if p + q > num_stimuli {
        return Err(Error::InsufficientStimuli {
            needed: p + q,
            available: num_stimuli,
        });
    }
    let mut idx = rand::seq::index::sample(rng, num_stimuli, p + q).into_vec();
    let query = idx.split_off(p);
    Ok((idx, query))
}

pub fn support_from_indices(ds: &VoxelDataset, voxel: usize, indices: &[usize]) -> Result<SupportSet> {
    let (emb, resp) = gather(ds, voxel, indices)?;
    SupportSet::new(emb, resp, ds.embedding_dim())
}

pub fn query_from_indices(ds: &VoxelDataset, voxel: usize, indices: &[usize]) -> Result<QuerySet> {
    let (emb, resp) = gather(ds, voxel, indices)?;
    QuerySet::new(emb, Some(resp), ds.embedding_dim())
}

fn gather(ds: &VoxelDataset, voxel: usize, indices: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if voxel >= ds.num_voxels() {
        return Err(Error::Shape(format!("voxel {voxel} out of range (V={})", ds.num_voxels())));
    }
    let betas = ds.voxel_betas(voxel);
    let mut emb = Vec::with_capacity(indices.len() * ds.embedding_dim());
    let mut resp = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= ds.num_stimuli() {
            return Err(Error::Shape(format!("stimulus {i} out of range (S={})", ds.num_stimuli())));
        }
        emb.extend(ds.embedding(i).iter().map(|&v| f64::from(v)));
        resp.push(f64::from(betas[i]));
    }
    Ok((emb, resp))
}

/// One in-context task for `voxel`: disjoint support and query stimuli.
pub fn sample_task<R: Rng + ?Sized>(
    ds: &VoxelDataset,
    voxel: usize,
    p: usize,
    q: usize,
    rng: &mut R,
) -> Result<(SupportSet, QuerySet)> {
    let (s_idx, q_idx) = sample_indices(ds.num_stimuli(), p, q, rng)?;
    Ok((
        support_from_indices(ds, voxel, &s_idx)?,
        query_from_indices(ds, voxel, &q_idx)?,
    ))
}
