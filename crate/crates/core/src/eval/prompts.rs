//! Text-prompt queries against emitted voxel weights.
//!
//! Prompt files (`VXPB`) use the shared container layout: magic, `u32`
//! version, `u64` manifest length, manifest with `categories=a,b,c`, `E=<dim>`
//! and `counts=n_a,n_b,n_c`, then one `f32` block `[n_c x E]` per category in
//! manifest order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::container::{decode_header, encode_header, parse_usize, put_f32s, required, Cursor};
use crate::data::RoiLabels;
use crate::error::{Error, Result};
use crate::model::WeightMatrix;

pub const PROMPT_MAGIC: &[u8; 4] = b"VXPB";
const PROMPT_VERSION: u32 = 1;

/// Precomputed text embeddings grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    categories: Vec<String>,
    dim: usize,
    /// Per category, row-major `[n_prompts x dim]`.
    prompts: Vec<Vec<f32>>,
}

impl PromptBank {
    pub fn new(categories: Vec<String>, dim: usize, prompts: Vec<Vec<f32>>) -> Result<Self> {
        if categories.is_empty() || categories.len() != prompts.len() {
            return Err(Error::Config("prompt bank needs one prompt block per category".into()));
        }
        if dim == 0 {
            return Err(Error::Config("prompt embeddings need a positive dimension".into()));
        }
        for (name, block) in categories.iter().zip(&prompts) {
            if name.is_empty() || name.contains(',') || name.contains('\n') {
                return Err(Error::Config(format!("invalid category name {name:?}")));
            }
            if block.is_empty() || block.len() % dim != 0 {
                return Err(Error::Shape(format!("category {name} has {} values for dimension {dim}", block.len())));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("category {name} has non-finite embeddings")));
            }
        }
        Ok(PromptBank { categories, dim, prompts })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prompt_count(&self, category: usize) -> usize {
        self.prompts[category].len() / self.dim
    }

    pub fn prompt(&self, category: usize, i: usize) -> &[f32] {
        &self.prompts[category][i * self.dim..(i + 1) * self.dim]
    }

    /// Selector embedding of one category under `rule`.
    pub fn selector(&self, category: usize, rule: PromptRule) -> Vec<f64> {
        match rule {
            PromptRule::First => self.prompt(category, 0).iter().map(|&v| f64::from(v)).collect(),
            PromptRule::Mean => {
                let n = self.prompt_count(category);
                let mut acc = vec![0.0; self.dim];
                for i in 0..n {
                    for (a, &v) in acc.iter_mut().zip(self.prompt(category, i)) {
                        *a += f64::from(v);
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n as f64);
                acc
            }
        }
    }
}

pub fn encode_prompts(bank: &PromptBank) -> Vec<u8> {
    let counts: Vec<String> = (0..bank.categories.len()).map(|c| bank.prompt_count(c).to_string()).collect();
    let entries = vec![
        ("categories".to_string(), bank.categories.join(",")),
        ("E".to_string(), bank.dim.to_string()),
        ("counts".to_string(), counts.join(",")),
    ];
    let mut out = encode_header(PROMPT_MAGIC, PROMPT_VERSION, &entries);
    for block in &bank.prompts {
        put_f32s(&mut out, block);
    }
    out
}

pub fn decode_prompts(bytes: &[u8]) -> Result<PromptBank> {
    let header = decode_header(bytes, PROMPT_MAGIC, "prompt file")?;
    if header.version != PROMPT_VERSION {
        return Err(Error::Format(format!("unsupported prompt file version {}", header.version)));
    }
    let e = &header.entries;
    let categories: Vec<String> = required(e, "categories", "prompt file")?
        .split(',')
        .map(str::to_string)
        .collect();
    let dim = parse_usize(required(e, "E", "prompt file")?, "E")?;
    let counts = required(e, "counts", "prompt file")?
        .split(',')
        .map(|c| parse_usize(c, "counts"))
        .collect::<Result<Vec<_>>>()?;
    if counts.len() != categories.len() {
        return Err(Error::Format(format!(
            "{} categories but {} counts",
            categories.len(),
            counts.len()
        )));
    }
    let mut cur = Cursor::new(header.payload);
    let prompts = categories
        .iter()
        .zip(&counts)
        .map(|(name, &n)| cur.f32s(n * dim, name))
        .collect::<Result<Vec<_>>>()?;
    if cur.remaining() != 0 {
        return Err(Error::Integrity(format!("{} trailing bytes in prompt file", cur.remaining())));
    }
    PromptBank::new(categories, dim, prompts)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<PromptBank> {
    let path = path.as_ref();
    decode_prompts(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_prompts(bank: &PromptBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_prompts(bank)).map_err(|e| Error::io(path, e))
}

/// Row-wise inner products `weights . t`, one activation per voxel.
pub fn query_embedding(weights: &WeightMatrix, t: &[f64]) -> Result<Vec<f64>> {
    if t.len() != weights.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {} but the weights have {}",
            t.len(),
            weights.dim()
        )));
    }
    Ok((0..weights.rows())
        .map(|v| weights.row(v).iter().zip(t).map(|(a, b)| a * b).sum())
        .collect())
}

/// Which prompt scores a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptRule {
    /// The first prompt of each category.
    #[default]
    First,
    /// The mean of a category's prompt activations (equivalently, the
    /// activation of the mean prompt embedding).
    Mean,
}

impl fmt::Display for PromptRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptRule::First => "first",
            PromptRule::Mean => "mean",
        })
    }
}

impl FromStr for PromptRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(PromptRule::First),
            "mean" => Ok(PromptRule::Mean),
            other => Err(Error::Config(format!("unknown prompt rule {other:?} (expected first or mean)"))),
        }
    }
}

/// Fraction of each ROI's voxels whose peak category activation falls on each category.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionTable {
    pub rois: Vec<String>,
    pub categories: Vec<String>,
    /// Voxels per ROI.
    pub counts: Vec<usize>,
    /// `[roi x category]`; rows of non-empty ROIs sum to 1.
    pub fractions: Vec<Vec<f64>>,
}

impl FractionTable {
    /// Mean of `fractions[r][c]` over ROIs whose name equals a category name.
    pub fn diagonal_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .rois
            .iter()
            .enumerate()
            .filter_map(|(r, name)| {
                let c = self.categories.iter().position(|c| c == name)?;
                (self.counts[r] > 0).then(|| self.fractions[r][c])
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("roi,voxels,{}\n", self.categories.join(","));
        for (r, name) in self.rois.iter().enumerate() {
            let cells: Vec<String> = self.fractions[r].iter().map(f64::to_string).collect();
            out.push_str(&format!("{name},{},{}\n", self.counts[r], cells.join(",")));
        }
        out
    }
}

/// Predicted category per voxel: argmax of selector activations, ties to the
/// lowest category index.
pub fn predicted_categories(weights: &WeightMatrix, bank: &PromptBank, rule: PromptRule) -> Result<Vec<usize>> {
    let scores = (0..bank.categories().len())
        .map(|c| query_embedding(weights, &bank.selector(c, rule)))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..weights.rows())
        .map(|v| {
            let mut best = 0;
            for c in 1..scores.len() {
                if scores[c][v] > scores[best][v] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn prompt_classification(
    weights: &WeightMatrix,
    bank: &PromptBank,
    roi: &RoiLabels,
    rule: PromptRule,
) -> Result<FractionTable> {
    if roi.labels.len() != weights.rows() {
        return Err(Error::Shape(format!(
            "{} ROI labels for {} voxels",
            roi.labels.len(),
            weights.rows()
        )));
    }
    if let Some(&bad) = roi.labels.iter().find(|&&l| l as usize >= roi.legend.len()) {
        return Err(Error::Legend(format!("ROI label {bad} has no legend entry")));
    }
    let predicted = predicted_categories(weights, bank, rule)?;
    let k = bank.categories().len();
    let mut counts = vec![0usize; roi.legend.len()];
    let mut hits = vec![vec![0usize; k]; roi.legend.len()];
    for (&label, &c) in roi.labels.iter().zip(&predicted) {
        counts[label as usize] += 1;
        hits[label as usize][c] += 1;
    }
    let fractions = hits
        .iter()
        .zip(&counts)
        .map(|(row, &n)| row.iter().map(|&h| if n > 0 { h as f64 / n as f64 } else { 0.0 }).collect())
        .collect();
    Ok(FractionTable {
        rois: roi.legend.clone(),
        categories: bank.categories().to_vec(),
        counts,
        fractions,
    })
}
