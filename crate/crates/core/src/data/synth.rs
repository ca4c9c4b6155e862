//! Synthetic voxels with planted linear response functions.
//!
//! Each task draws a weight vector `w`, standard-normal embeddings `x` and
//! responses `x . w + noise`. With `category_count > 0` the weights cluster
//! around a fixed set of unit prototypes derived from the config seed, so a
//! generator and an evaluator built from the same config share categories.

use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{RoiLabels, VoxelDataset};
use super::task::{QuerySet, SupportSet};
use crate::error::{Error, Result};
use crate::tensor::stream_rng;

const PROTOTYPE_STREAM: u64 = 0x9e07_0000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Fixed(f64),
    /// Per-task standard deviation drawn uniformly from `[lo, hi]`.
    Range { lo: f64, hi: f64 },
}

impl NoiseLevel {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLevel::Fixed(s) => s,
            NoiseLevel::Range { lo, hi } if hi > lo => rng.random_range(lo..=hi),
            NoiseLevel::Range { lo, .. } => lo,
        }
    }
}

impl std::fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseLevel::Fixed(s) => write!(f, "{s}"),
            NoiseLevel::Range { lo, hi } => write!(f, "{lo}..{hi}"),
        }
    }
}

impl std::str::FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid noise level {s:?} (expected `x` or `lo..hi`)"));
        match s.split_once("..") {
            Some((lo, hi)) => Ok(NoiseLevel::Range {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
            }),
            None => Ok(NoiseLevel::Fixed(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub noise: NoiseLevel,
    pub weight_norm: f64,
    /// Length of the stream returned by [`synth_tasks`].
    pub num_tasks: usize,
    /// 0 draws unstructured weights.
    pub category_count: usize,
    /// Expected norm of the perturbation added to a unit prototype before
    /// renormalisation.
    pub prototype_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 16,
            noise: NoiseLevel::Fixed(1.0),
            weight_norm: 1.0,
            num_tasks: 1000,
            category_count: 0,
            prototype_noise: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("synthetic embedding dimension must be positive".into()));
        }
        if !(self.weight_norm > 0.0 && self.weight_norm.is_finite()) {
            return Err(Error::Config("weight_norm must be positive".into()));
        }
        match self.noise {
            NoiseLevel::Fixed(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::Config("noise std must be nonnegative".into()))
            }
            NoiseLevel::Range { lo, hi } if !(lo >= 0.0 && hi >= lo && hi.is_finite()) => {
                Err(Error::Config(format!("noise range {lo}..{hi} is invalid")))
            }
            _ if !(self.prototype_noise >= 0.0 && self.prototype_noise.is_finite()) => {
                Err(Error::Config("prototype_noise must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Unit-norm category prototypes; a pure function of `(seed, dim, category_count)`.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, PROTOTYPE_STREAM);
        (0..self.category_count)
            .map(|_| normalized(gaussian(&mut rng, self.dim)))
            .collect()
    }

    fn draw_weights<R: Rng + ?Sized>(&self, prototypes: &[Vec<f64>], rng: &mut R) -> (Vec<f64>, Option<usize>) {
        let (w, cat) = if prototypes.is_empty() {
            (normalized(gaussian(rng, self.dim)), None)
        } else {
            let c = rng.random_range(0..prototypes.len());
            let scale = self.prototype_noise / (self.dim as f64).sqrt();
            let w: Vec<f64> = prototypes[c]
                .iter()
                .map(|&p| p + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (normalized(w), Some(c))
        };
        (w.into_iter().map(|v| v * self.weight_norm).collect(), cat)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// One synthetic task with its planted weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub support: SupportSet,
    pub query: QuerySet,
    pub weights: Vec<f64>,
    pub noise_std: f64,
    pub category: Option<usize>,
}

/// Stream of `cfg.num_tasks` synthetic tasks of context size `p` and `q` queries.
pub fn synth_tasks<'a, R: Rng + ?Sized>(
    cfg: &'a SynthConfig,
    p: usize,
    q: usize,
    rng: &'a mut R,
) -> Result<impl Iterator<Item = SynthTask> + 'a> {
    cfg.validate()?;
    if p == 0 || q == 0 {
        return Err(Error::Config(format!("p and q must be positive (p={p}, q={q})")));
    }
    let prototypes = cfg.prototypes();
    Ok((0..cfg.num_tasks).map(move |_| draw_task(cfg, &prototypes, p, q, rng)))
}

/// Single draw from the synthetic task distribution; `prototypes` must come
/// from `cfg.prototypes()`.
pub fn draw_task<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    prototypes: &[Vec<f64>],
    p: usize,
    q: usize,
    rng: &mut R,
) -> SynthTask {
    let (weights, category) = cfg.draw_weights(prototypes, rng);
    let noise_std = cfg.noise.sample(rng);
    let e = cfg.dim;
    let mut draw = |n: usize| {
        let x = gaussian(rng, n * e);
        let y: Vec<f64> = x
            .chunks_exact(e)
            .map(|row| {
                let signal: f64 = row.iter().zip(&weights).map(|(a, b)| a * b).sum();
                signal + noise_std * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (x, y)
    };
    let (sx, sy) = draw(p);
    let (qx, qy) = draw(q);
    SynthTask {
        support: SupportSet::new(sx, sy, e).expect("synthetic support is well formed"),
        query: QuerySet::new(qx, Some(qy), e).expect("synthetic query is well formed"),
        weights,
        noise_std,
        category,
    }
}

/// A synthetic subject: shared stimuli, one planted voxel per row.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: VoxelDataset,
    pub weights: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub categories: Option<Vec<usize>>,
}

/// Builds a dataset whose voxels all respond to the same `num_stimuli`
/// standard-normal embeddings. With categories, the ROI legend is
/// `cat0..cat{k-1}` and each voxel is labelled with its planted category.
/// ncsnr is the planted signal-to-noise ratio (capped at 1e6 for noiseless voxels).
pub fn synth_dataset<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    subject_id: &str,
    num_stimuli: usize,
    num_voxels: usize,
    rng: &mut R,
) -> Result<SynthDataset> {
    cfg.validate()?;
    if num_stimuli == 0 || num_voxels == 0 {
        return Err(Error::Config("synthetic dataset needs stimuli and voxels".into()));
    }
    let e = cfg.dim;
    let prototypes = cfg.prototypes();
    let x = gaussian(rng, num_stimuli * e);
    let embeddings: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let mut betas = Vec::with_capacity(num_stimuli * num_voxels);
    let mut weights = Vec::with_capacity(num_voxels);
    let mut noise_std = Vec::with_capacity(num_voxels);
    let mut cats = Vec::with_capacity(num_voxels);
    let mut ncsnr = Vec::with_capacity(num_voxels);
    for _ in 0..num_voxels {
        let (w, cat) = cfg.draw_weights(&prototypes, rng);
        let sigma = cfg.noise.sample(rng);
        for s in 0..num_stimuli {
            // responses use the stored (f32) embeddings so the plant is exact
            let signal: f64 = embeddings[s * e..(s + 1) * e]
                .iter()
                .zip(&w)
                .map(|(&a, b)| f64::from(a) * b)
                .sum();
            let noise: f64 = rng.sample(StandardNormal);
            betas.push((signal + sigma * noise) as f32);
        }
        let snr = if sigma > 0.0 { (cfg.weight_norm / sigma).min(1e6) } else { 1e6 };
        ncsnr.push(snr as f32);
        weights.push(w);
        noise_std.push(sigma);
        cats.push(cat);
    }
    let categories = if cfg.category_count > 0 {
        Some(cats.into_iter().map(|c| c.unwrap_or(0)).collect::<Vec<_>>())
    } else {
        None
    };
    let roi = categories.as_ref().map(|c| RoiLabels {
        labels: c.iter().map(|&v| v as u16).collect(),
        legend: (0..cfg.category_count).map(|i| format!("cat{i}")).collect(),
    });
    let dataset = VoxelDataset::new(subject_id, e, embeddings, betas, Some(ncsnr), roi)?;
    Ok(SynthDataset {
        dataset,
        weights,
        noise_std,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// Least squares by normal equations with Gaussian elimination; test-only oracle.
    fn lstsq(x: &[f64], y: &[f64], e: usize) -> Vec<f64> {
        let p = y.len();
        let mut a = vec![0.0; e * (e + 1)];
        for i in 0..p {
            let row = &x[i * e..(i + 1) * e];
            for r in 0..e {
                for c in 0..e {
                    a[r * (e + 1) + c] += row[r] * row[c];
                }
                a[r * (e + 1) + e] += row[r] * y[i];
            }
        }
        for col in 0..e {
            let piv = (col..e)
                .max_by(|&i, &j| a[i * (e + 1) + col].abs().total_cmp(&a[j * (e + 1) + col].abs()))
                .unwrap();
            for k in 0..=e {
                a.swap(col * (e + 1) + k, piv * (e + 1) + k);
            }
            for r in 0..e {
                if r != col {
                    let f = a[r * (e + 1) + col] / a[col * (e + 1) + col];
                    for k in 0..=e {
                        a[r * (e + 1) + k] -= f * a[col * (e + 1) + k];
                    }
                }
            }
        }
        (0..e).map(|r| a[r * (e + 1) + e] / a[r * (e + 1) + r]).collect()
    }

    #[test]
    fn noiseless_tasks_are_exactly_recoverable() {
        let cfg = SynthConfig { dim: 6, noise: NoiseLevel::Fixed(0.0), num_tasks: 20, ..Default::default() };
        let mut rng = stream_rng(1, 0);
        for task in synth_tasks(&cfg, 12, 3, &mut rng).unwrap() {
            let w = lstsq(task.support.embeddings(), task.support.responses(), 6);
            for (a, b) in w.iter().zip(&task.weights) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
            }
            let norm: f64 = task.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn response_variance_decomposes() {
        let cfg = SynthConfig { dim: 16, noise: NoiseLevel::Fixed(1.0), num_tasks: 1000, ..Default::default() };
        let mut rng = stream_rng(2, 0);
        let ys: Vec<f64> = synth_tasks(&cfg, 100, 1, &mut rng)
            .unwrap()
            .flat_map(|t| t.support.responses().to_vec())
            .collect();
        assert_eq!(ys.len(), 100_000);
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        assert!((var - 2.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn categories_cluster_around_prototypes() {
        let cfg = SynthConfig { dim: 16, category_count: 5, num_tasks: 200, ..Default::default() };
        let protos = cfg.prototypes();
        assert_eq!(protos, cfg.prototypes());
        let mut rng = stream_rng(3, 0);
        for task in synth_tasks(&cfg, 1, 1, &mut rng).unwrap() {
            let close: Vec<usize> = protos
                .iter()
                .enumerate()
                .filter(|(_, p)| cosine(p, &task.weights) > 0.8)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(close, vec![task.category.unwrap()]);
        }
    }

    #[test]
    fn noise_ranges() {
        let cfg = SynthConfig { noise: NoiseLevel::Range { lo: 0.5, hi: 0.7 }, num_tasks: 50, ..Default::default() };
        let mut rng = stream_rng(4, 0);
        for t in synth_tasks(&cfg, 2, 1, &mut rng).unwrap() {
            assert!((0.5..=0.7).contains(&t.noise_std));
        }
        let bad = SynthConfig { noise: NoiseLevel::Range { lo: 0.7, hi: 0.5 }, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { weight_norm: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!("0.1..2".parse::<NoiseLevel>().unwrap(), NoiseLevel::Range { lo: 0.1, hi: 2.0 });
    }

    #[test]
    fn synthetic_dataset_shapes() {
        let cfg = SynthConfig { dim: 4, category_count: 3, ..Default::default() };
        let sd = synth_dataset(&cfg, "syn", 30, 7, &mut stream_rng(5, 0)).unwrap();
        assert_eq!(sd.dataset.num_voxels(), 7);
        assert_eq!(sd.dataset.num_stimuli(), 30);
        assert_eq!(sd.dataset.roi().unwrap().legend.len(), 3);
        assert_eq!(sd.weights.len(), 7);
    }
}
