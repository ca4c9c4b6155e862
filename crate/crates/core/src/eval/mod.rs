//! Metrics, scaling curves, attention rankings, prompt queries and reports.

mod attention;
mod export;
mod metrics;
mod prompts;
mod scaling;

use rayon::prelude::*;

pub use attention::{top_attention_group, top_attention_images, top_k, RankedItem};
pub use export::{export_weights, format_weights, parse_weights, read_weights, WeightTable};
pub use metrics::{explained_variance, pearson};
pub use prompts::{
    decode_prompts, encode_prompts, load_prompts, predicted_categories, prompt_classification, query_embedding,
    write_prompts, FractionTable, PromptBank, PromptRule, PROMPT_MAGIC,
};
pub use scaling::{
    draw_support, model_weights, ridge_weights, score_weights, scaling_curve, support_by_similarity, support_pool, CurvePoint, ScalingCurve,
};

use crate::baselines::{
    format_baseline_table, ols_fit, reference_fit, BaselineRow, Method, ReferenceConfig, RidgeGrid,
};
use crate::data::VoxelDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, WeightMatrix};
use crate::tensor::Scalar;

/// Per-voxel scores of one method at one support size, averaged over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    /// `model`, `ridge`, `ols` or `reference`.
    pub method: String,
    pub p: usize,
    pub ev: Vec<f64>,
    pub pearson: Vec<f64>,
    /// Cross-validated penalty per voxel (first repeat), ridge only.
    pub lambdas: Option<Vec<f64>>,
}

impl MethodScores {
    pub fn label(&self) -> String {
        format!("{}-{}", self.method, self.p)
    }

    pub fn mean_ev(&self) -> f64 {
        self.ev.iter().sum::<f64>() / self.ev.len() as f64
    }
}

/// Everything one evaluation run produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// `key=value` header lines.
    pub meta: Vec<(String, String)>,
    pub voxel_ids: Vec<usize>,
    /// ROI name per voxel, when the dataset carries labels.
    pub rois: Option<Vec<String>>,
    pub scores: Vec<MethodScores>,
    pub curve: Option<ScalingCurve>,
    pub prompt_table: Option<FractionTable>,
    /// Labelled attention rankings.
    pub attention: Vec<(String, Vec<RankedItem>)>,
}

impl EvalReport {
    /// Unweighted mean EV per (method label, ROI) with the voxel count.
    pub fn roi_means(&self) -> Vec<(String, String, f64, usize)> {
        let Some(rois) = &self.rois else {
            return Vec::new();
        };
        let mut names: Vec<&String> = Vec::new();
        for r in rois {
            if !names.contains(&r) {
                names.push(r);
            }
        }
        let mut out = Vec::new();
        for s in &self.scores {
            for name in &names {
                let evs: Vec<f64> = rois
                    .iter()
                    .zip(&s.ev)
                    .filter(|(r, _)| r == name)
                    .map(|(_, &e)| e)
                    .collect();
                out.push((s.label(), name.to_string(), evs.iter().sum::<f64>() / evs.len() as f64, evs.len()));
            }
        }
        out
    }

    /// Baseline-table rows for every method, in `voxel_id,method,lambda_star,ev_test` form.
    pub fn baseline_rows(&self) -> Vec<BaselineRow> {
        let mut rows = Vec::new();
        for s in &self.scores {
            for (i, &ev) in s.ev.iter().enumerate() {
                rows.push(BaselineRow {
                    voxel_id: self.voxel_ids[i],
                    method: s.label(),
                    lambda_star: s.lambdas.as_ref().map(|l| l[i]),
                    ev_test: ev,
                });
            }
        }
        rows
    }

    /// Sectioned text: `[report]` key=value lines, then comma-separated tables.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[report]\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("{k}={v}\n"));
        }
        for s in &self.scores {
            out.push_str(&format!("mean_ev.{}={}\n", s.label(), s.mean_ev()));
        }
        if let Some(curve) = &self.curve {
            out.push_str("\n[curve]\n");
            out.push_str(&curve.to_csv());
        }
        let means = self.roi_means();
        if !means.is_empty() {
            out.push_str("\n[roi_means]\nmethod,roi,mean_ev,voxels\n");
            for (m, r, ev, n) in means {
                out.push_str(&format!("{m},{r},{ev},{n}\n"));
            }
        }
        if !self.scores.is_empty() {
            out.push_str("\n[voxels]\nvoxel_id,roi,method,ev,pearson\n");
            for s in &self.scores {
                for i in 0..s.ev.len() {
                    let roi = self.rois.as_ref().map_or("NA", |r| r[i].as_str());
                    out.push_str(&format!(
                        "{},{roi},{},{},{}\n",
                        self.voxel_ids[i],
                        s.label(),
                        s.ev[i],
                        s.pearson[i]
                    ));
                }
            }
            out.push_str("\n[baselines]\n");
            out.push_str(&format_baseline_table(&self.baseline_rows()));
        }
        if let Some(t) = &self.prompt_table {
            out.push_str("\n[prompt_table]\n");
            out.push_str(&t.to_csv());
        }
        for (label, items) in &self.attention {
            out.push_str(&format!("\n[attention {label}]\nrank,index,score\n"));
            for (rank, it) in items.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", rank + 1, it.index, it.score));
            }
        }
        out
    }
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Support sizes for the model curve.
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub baselines: Vec<Method>,
    /// Support sizes at which baselines are fitted; defaults to `sizes`.
    pub baseline_sizes: Option<Vec<usize>>,
    pub grid: RidgeGrid,
    pub reference: ReferenceConfig,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            sizes: vec![100],
            repeats: 1,
            baselines: Vec::new(),
            baseline_sizes: None,
            grid: RidgeGrid::default(),
            reference: ReferenceConfig::default(),
            seed: 0,
        }
    }
}

fn baseline_weights(
    method: Method,
    ds: &VoxelDataset,
    support: &[usize],
    pc: &ProtocolConfig,
) -> Result<(WeightMatrix, Option<Vec<f64>>)> {
    let e = ds.embedding_dim();
    let x: Vec<f64> = support
        .iter()
        .flat_map(|&s| ds.embedding(s).iter().map(|&v| f64::from(v)))
        .collect();
    let per_voxel = |fit: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync)| -> Result<WeightMatrix> {
        let rows = (0..ds.num_voxels())
            .into_par_iter()
            .map(|v| {
                let b = ds.voxel_betas(v);
                let y: Vec<f64> = support.iter().map(|&s| f64::from(b[s])).collect();
                fit(&y)
            })
            .collect::<Result<Vec<_>>>()?;
        WeightMatrix::new(e, rows.concat())
    };
    match method {
        Method::Ridge => {
            let (w, l) = ridge_weights(ds, support, &pc.grid, pc.seed)?;
            Ok((w, Some(l)))
        }
        Method::Ols => Ok((per_voxel(&|y| ols_fit(&x, y, e))?, None)),
        Method::Reference => Ok((per_voxel(&|y| reference_fit(&x, y, e, &pc.reference))?, None)),
    }
}

fn accumulate(target: &mut MethodScores, ev: &[f64], r: &[f64]) {
    for (a, b) in target.ev.iter_mut().zip(ev) {
        *a += b;
    }
    for (a, b) in target.pearson.iter_mut().zip(r) {
        *a += b;
    }
}

/// Model and baseline evaluation on held-out test stimuli.
///
/// For every size and repeat, one support set is drawn from the non-test
/// stimuli (shared by all voxels and by every method at that size); each
/// method fits on it and is scored by EV and Pearson r on `test`. The model
/// curve uses the same draws as [`scaling_curve`].
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    ds: &VoxelDataset,
    test: &[usize],
    pc: &ProtocolConfig,
) -> Result<EvalReport> {
    if pc.repeats == 0 || pc.sizes.is_empty() {
        return Err(Error::Config("evaluation needs at least one size and one repeat".into()));
    }
    if test.len() < 2 {
        return Err(Error::InsufficientStimuli {
            needed: 2,
            available: test.len(),
        });
    }
    let baseline_sizes = pc.baseline_sizes.clone().unwrap_or_else(|| pc.sizes.clone());
    let max = pc.sizes.iter().chain(&baseline_sizes).copied().max().unwrap_or(0);
    if max + test.len() > ds.num_stimuli() {
        return Err(Error::InsufficientStimuli {
            needed: max + test.len(),
            available: ds.num_stimuli(),
        });
    }
    let pool = support_pool(ds.num_stimuli(), test)?;
    let v = ds.num_voxels();
    let blank = |method: &str, p: usize| MethodScores {
        method: method.to_string(),
        p,
        ev: vec![0.0; v],
        pearson: vec![0.0; v],
        lambdas: None,
    };

    let mut scores = Vec::new();
    let mut points = Vec::new();
    for &p in &pc.sizes {
        let mut s = blank("model", p);
        let mut all = Vec::with_capacity(pc.repeats * v);
        for r in 0..pc.repeats {
            let support = draw_support(&pool, p, r, pc.seed)?;
            let (ev, pr) = score_weights(ds, &model_weights(params, ds, &support)?, test)?;
            accumulate(&mut s, &ev, &pr);
            all.extend(ev);
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        points.push(CurvePoint { p, mean_ev: mean, std_ev: std });
        scores.push(s);
    }
    for &method in &pc.baselines {
        for &p in &baseline_sizes {
            let mut s = blank(&method.to_string(), p);
            for r in 0..pc.repeats {
                let support = draw_support(&pool, p, r, pc.seed)?;
                let (w, lambdas) = baseline_weights(method, ds, &support, pc)?;
                let (ev, pr) = score_weights(ds, &w, test)?;
                accumulate(&mut s, &ev, &pr);
                if r == 0 {
                    s.lambdas = lambdas;
                }
            }
            scores.push(s);
        }
    }
    for s in &mut scores {
        let k = pc.repeats as f64;
        s.ev.iter_mut().for_each(|e| *e /= k);
        s.pearson.iter_mut().for_each(|e| *e /= k);
    }

    let rois = ds.roi().map(|r| (0..v).map(|i| r.name_of(i).to_string()).collect());
    let meta = vec![
        ("subject_id".to_string(), ds.subject_id().to_string()),
        ("voxels".to_string(), v.to_string()),
        ("stimuli".to_string(), ds.num_stimuli().to_string()),
        ("test_stimuli".to_string(), test.len().to_string()),
        ("repeats".to_string(), pc.repeats.to_string()),
        ("seed".to_string(), pc.seed.to_string()),
    ];
    Ok(EvalReport {
        meta,
        voxel_ids: (0..v).collect(),
        rois,
        scores,
        curve: Some(ScalingCurve { points }),
        prompt_table: None,
        attention: Vec::new(),
    })
}
