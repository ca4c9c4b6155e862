use rand::seq::index::sample;
use rayon::prelude::*;

use crate::baselines::{ridge_cv_multi, RidgeGrid};
use crate::data::{support_from_indices, VoxelDataset};
use crate::error::{Error, Result};
use crate::model::{forward_many, ModelParams, WeightMatrix};
use crate::tensor::{stream_rng, Scalar};

use super::metrics::{explained_variance, pearson};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub p: usize,
    pub mean_ev: f64,
    /// Population standard deviation over all (repeat, voxel) EVs.
    pub std_ev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCurve {
    pub points: Vec<CurvePoint>,
}

impl ScalingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,mean_ev,std_ev\n");
        for pt in &self.points {
            out.push_str(&format!("{},{},{}\n", pt.p, pt.mean_ev, pt.std_ev));
        }
        out
    }
}

/// Stimuli that may be drawn into support sets: everything outside `test`.
pub fn support_pool(num_stimuli: usize, test: &[usize]) -> Result<Vec<usize>> {
    let mut is_test = vec![false; num_stimuli];
    for &t in test {
        if t >= num_stimuli {
            return Err(Error::Shape(format!("test stimulus {t} out of range (S={num_stimuli})")));
        }
        is_test[t] = true;
    }
    Ok((0..num_stimuli).filter(|&i| !is_test[i]).collect())
}

/// Support stimuli for context size `p` in repeat `r`. Depends only on
/// `(seed, p, r)` so duplicated sizes reproduce each other.
pub fn draw_support(pool: &[usize], p: usize, repeat: usize, seed: u64) -> Result<Vec<usize>> {
    if p == 0 || p > pool.len() {
        return Err(Error::InsufficientStimuli {
            needed: p,
            available: pool.len(),
        });
    }
    let mut rng = stream_rng(seed, ((p as u64) << 32) | repeat as u64);
    let mut idx: Vec<usize> = sample(&mut rng, pool.len(), p).into_iter().map(|i| pool[i]).collect();
    idx.sort_unstable();
    Ok(idx)
}

/// The `p` pool stimuli whose embeddings have the highest cosine similarity
/// with `target`, returned in ascending index order. Ties go to the lower index.
pub fn support_by_similarity(ds: &VoxelDataset, pool: &[usize], target: &[f64], p: usize) -> Result<Vec<usize>> {
    if target.len() != ds.embedding_dim() {
        return Err(Error::Shape(format!(
            "target has dimension {}, embeddings have {}",
            target.len(),
            ds.embedding_dim()
        )));
    }
    if p == 0 || p > pool.len() {
        return Err(Error::InsufficientStimuli {
            needed: p,
            available: pool.len(),
        });
    }
    let tn = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored = Vec::with_capacity(pool.len());
    for &s in pool {
        if s >= ds.num_stimuli() {
            return Err(Error::Shape(format!("stimulus {s} out of range (S={})", ds.num_stimuli())));
        }
        let x = ds.embedding(s);
        let dot: f64 = x.iter().zip(target).map(|(&a, b)| f64::from(a) * b).sum();
        let xn = x.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
        let cos = if xn == 0.0 || tn == 0.0 { 0.0 } else { dot / (xn * tn) };
        scored.push((cos, s));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = scored[..p].iter().map(|&(_, s)| s).collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Predictions `[V x |test|]` of per-voxel weights on the test stimuli.
fn test_predictions(ds: &VoxelDataset, weights: &WeightMatrix, test: &[usize]) -> Vec<Vec<f64>> {
    (0..weights.rows())
        .map(|v| {
            let w = weights.row(v);
            test.iter()
                .map(|&s| ds.embedding(s).iter().zip(w).map(|(&x, &b)| f64::from(x) * b).sum())
                .collect()
        })
        .collect()
}

/// Per-voxel EV and Pearson r of `weights` on the test stimuli.
pub fn score_weights(ds: &VoxelDataset, weights: &WeightMatrix, test: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.rows() != ds.num_voxels() {
        return Err(Error::Shape(format!(
            "{} weight rows for {} voxels",
            weights.rows(),
            ds.num_voxels()
        )));
    }
    let preds = test_predictions(ds, weights, test);
    let scores = preds
        .par_iter()
        .enumerate()
        .map(|(v, yhat)| {
            let betas = ds.voxel_betas(v);
            let y: Vec<f64> = test.iter().map(|&s| f64::from(betas[s])).collect();
            let ev = explained_variance(&y, yhat).map_err(|e| match e {
                Error::Degenerate(_) => Error::DegenerateVoxel { voxel: v },
                other => other,
            })?;
            // a constant prediction has no defined correlation; report 0
            let r = pearson(&y, yhat).unwrap_or(0.0);
            Ok((ev, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.into_iter().unzip())
}

/// Emitted weights for every voxel given the same support stimuli.
pub fn model_weights<T: Scalar>(params: &ModelParams<T>, ds: &VoxelDataset, support: &[usize]) -> Result<WeightMatrix> {
    let supports = (0..ds.num_voxels())
        .map(|v| support_from_indices(ds, v, support))
        .collect::<Result<Vec<_>>>()?;
    forward_many(params, &supports)
}

/// Cross-validated ridge weights for every voxel on the given support stimuli.
pub fn ridge_weights(ds: &VoxelDataset, support: &[usize], grid: &RidgeGrid, seed: u64) -> Result<(WeightMatrix, Vec<f64>)> {
    let e = ds.embedding_dim();
    let x: Vec<f64> = support
        .iter()
        .flat_map(|&s| ds.embedding(s).iter().map(|&v| f64::from(v)))
        .collect();
    let ys: Vec<Vec<f64>> = (0..ds.num_voxels())
        .map(|v| {
            let b = ds.voxel_betas(v);
            support.iter().map(|&s| f64::from(b[s])).collect()
        })
        .collect();
    let fits = ridge_cv_multi(&x, &ys, e, grid, seed)?;
    let lambdas = fits.iter().map(|f| f.lambda).collect();
    let values = fits.into_iter().flat_map(|f| f.weights).collect();
    Ok((WeightMatrix::new(e, values)?, lambdas))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean test EV of the model as a function of support size. For each size
/// and repeat one support set is drawn from the non-test stimuli and shared
/// by all voxels.
pub fn scaling_curve<T: Scalar>(
    params: &ModelParams<T>,
    ds: &VoxelDataset,
    sizes: &[usize],
    repeats: usize,
    test: &[usize],
    seed: u64,
) -> Result<ScalingCurve> {
    if repeats == 0 || sizes.is_empty() {
        return Err(Error::Config("scaling curve needs at least one size and one repeat".into()));
    }
    let max = sizes.iter().copied().max().unwrap_or(0);
    if max + test.len() > ds.num_stimuli() {
        return Err(Error::InsufficientStimuli {
            needed: max + test.len(),
            available: ds.num_stimuli(),
        });
    }
    let pool = support_pool(ds.num_stimuli(), test)?;
    let points = sizes
        .iter()
        .map(|&p| {
            let mut evs = Vec::with_capacity(repeats * ds.num_voxels());
            for r in 0..repeats {
                let support = draw_support(&pool, p, r, seed)?;
                let weights = model_weights(params, ds, &support)?;
                evs.extend(score_weights(ds, &weights, test)?.0);
            }
            let (mean_ev, std_ev) = mean_std(&evs);
            Ok(CurvePoint { p, mean_ev, std_ev })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> VoxelDataset {
        let emb = vec![1.0, 0.0, 0.0, 1.0, 0.9, 0.1, -1.0, 0.0, 2.0, 0.0];
        VoxelDataset::new("t", 2, emb, vec![0.0; 5], None, None).unwrap()
    }

    #[test]
    fn similarity_support_picks_aligned_stimuli() {
        let ds = dataset();
        let pool = [0, 1, 2, 3, 4];
        // stimuli 0 and 4 tie at cosine 1; both precede the 0.99 of stimulus 2
        assert_eq!(support_by_similarity(&ds, &pool, &[1.0, 0.0], 2).unwrap(), vec![0, 4]);
        assert_eq!(support_by_similarity(&ds, &pool, &[3.0, 0.0], 3).unwrap(), vec![0, 2, 4]);
        assert_eq!(support_by_similarity(&ds, &[1, 3], &[1.0, 0.0], 1).unwrap(), vec![1]);
    }

    #[test]
    fn similarity_support_rejects_bad_requests() {
        let ds = dataset();
        assert!(support_by_similarity(&ds, &[0, 1], &[1.0, 0.0], 3).is_err());
        assert!(support_by_similarity(&ds, &[0, 1], &[1.0], 1).is_err());
        assert!(support_by_similarity(&ds, &[9], &[1.0, 0.0], 1).is_err());
    }
}
