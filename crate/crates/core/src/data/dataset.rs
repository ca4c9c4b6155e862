use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::stream_rng;

/// Category labels attached to voxels, as indices into a legend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiLabels {
    pub labels: Vec<u16>,
    pub legend: Vec<String>,
}

impl RoiLabels {
    pub fn name_of(&self, voxel: usize) -> &str {
        &self.legend[self.labels[voxel] as usize]
    }

    pub fn index_of(&self, name: &str) -> Option<u16> {
        self.legend.iter().position(|l| l == name).map(|i| i as u16)
    }
}

/// Precomputed stimulus embeddings and voxel responses for one subject.
///
/// Values are held at the 32-bit precision they are stored with so that a
/// load/write cycle is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelDataset {
    subject_id: String,
    embedding_dim: usize,
    num_stimuli: usize,
    num_voxels: usize,
    /// `[S x E]`, row-major.
    embeddings: Vec<f32>,
    /// `[V x S]`, row-major.
    betas: Vec<f32>,
    ncsnr: Option<Vec<f32>>,
    roi: Option<RoiLabels>,
    /// Manifest entries as they appeared in the source file (or were added by
    /// the caller), in order. Structural keys are refreshed on write.
    manifest: Vec<(String, String)>,
}

impl VoxelDataset {
    pub fn new(
        subject_id: impl Into<String>,
        embedding_dim: usize,
        embeddings: Vec<f32>,
        betas: Vec<f32>,
        ncsnr: Option<Vec<f32>>,
        roi: Option<RoiLabels>,
    ) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::Integrity("embedding dimension must be positive".into()));
        }
        if embeddings.is_empty() || embeddings.len() % embedding_dim != 0 {
            return Err(Error::Integrity(format!(
                "embedding payload of {} values is not a positive multiple of E={embedding_dim}",
                embeddings.len()
            )));
        }
        let num_stimuli = embeddings.len() / embedding_dim;
        if betas.is_empty() || betas.len() % num_stimuli != 0 {
            return Err(Error::Integrity(format!(
                "beta payload of {} values is not a positive multiple of S={num_stimuli}",
                betas.len()
            )));
        }
        let num_voxels = betas.len() / num_stimuli;
        let ds = VoxelDataset {
            subject_id: subject_id.into(),
            embedding_dim,
            num_stimuli,
            num_voxels,
            embeddings,
            betas,
            ncsnr,
            roi,
            manifest: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub(crate) fn with_manifest(mut self, manifest: Vec<(String, String)>) -> Self {
        self.manifest = manifest;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_id.contains('\n') {
            return Err(Error::Integrity("subject_id contains a newline".into()));
        }
        if self.embeddings.len() != self.num_stimuli * self.embedding_dim {
            return Err(Error::Integrity("embedding matrix size mismatch".into()));
        }
        if self.betas.len() != self.num_voxels * self.num_stimuli {
            return Err(Error::Integrity("beta matrix size mismatch".into()));
        }
        if let Some(i) = self.embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("non-finite embedding value at flat index {i}")));
        }
        if let Some(i) = self.betas.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("non-finite beta value at flat index {i}")));
        }
        if let Some(nc) = &self.ncsnr {
            if nc.len() != self.num_voxels {
                return Err(Error::Integrity(format!(
                    "ncsnr has {} entries for {} voxels",
                    nc.len(),
                    self.num_voxels
                )));
            }
            if let Some(i) = nc.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Integrity(format!("ncsnr of voxel {i} is negative or non-finite")));
            }
        }
        if let Some(roi) = &self.roi {
            if roi.labels.len() != self.num_voxels {
                return Err(Error::Integrity(format!(
                    "roi labels have {} entries for {} voxels",
                    roi.labels.len(),
                    self.num_voxels
                )));
            }
            if let Some(name) = roi
                .legend
                .iter()
                .find(|n| n.is_empty() || n.contains(',') || n.contains('\n'))
            {
                return Err(Error::Integrity(format!("invalid roi legend name {name:?}")));
            }
            if let Some(v) = roi.labels.iter().position(|&l| l as usize >= roi.legend.len()) {
                return Err(Error::Integrity(format!(
                    "roi label {} of voxel {v} is not in the legend",
                    roi.labels[v]
                )));
            }
        }
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    pub fn num_stimuli(&self) -> usize {
        self.num_stimuli
    }
    pub fn num_voxels(&self) -> usize {
        self.num_voxels
    }
    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }
    pub fn betas(&self) -> &[f32] {
        &self.betas
    }
    pub fn ncsnr(&self) -> Option<&[f32]> {
        self.ncsnr.as_deref()
    }
    pub fn roi(&self) -> Option<&RoiLabels> {
        self.roi.as_ref()
    }
    pub fn manifest_entries(&self) -> &[(String, String)] {
        &self.manifest
    }

    pub fn embedding(&self, stimulus: usize) -> &[f32] {
        let e = self.embedding_dim;
        &self.embeddings[stimulus * e..(stimulus + 1) * e]
    }

    pub fn voxel_betas(&self, voxel: usize) -> &[f32] {
        let s = self.num_stimuli;
        &self.betas[voxel * s..(voxel + 1) * s]
    }

    /// Sets (or replaces) a free-form manifest entry such as a named index list.
    pub fn set_manifest_entry(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() || key.contains('=') || key.contains('\n') || value.contains('\n') {
            return Err(Error::Format(format!("invalid manifest entry {key:?}={value:?}")));
        }
        match self.manifest.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.manifest.push((key.to_string(), value.to_string())),
        }
        Ok(())
    }

    pub fn manifest_value(&self, key: &str) -> Option<&str> {
        self.manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Named stimulus index list stored under `shared:<name>` in the manifest,
    /// e.g. the stimuli every subject saw.
    pub fn shared_indices(&self, name: &str) -> Result<Vec<usize>> {
        let key = format!("shared:{name}");
        let raw = self
            .manifest_value(&key)
            .ok_or_else(|| Error::Config(format!("dataset has no manifest entry {key}")))?;
        let idx = parse_index_list(raw)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_stimuli) {
            return Err(Error::Config(format!(
                "{key} references stimulus {bad} but S={}",
                self.num_stimuli
            )));
        }
        Ok(idx)
    }

    /// Keeps the listed voxels, in the given order.
    pub fn select_voxels(&self, voxels: &[usize]) -> Result<VoxelDataset> {
        if voxels.is_empty() {
            return Err(Error::EmptyResult("voxel selection is empty".into()));
        }
        if let Some(&bad) = voxels.iter().find(|&&v| v >= self.num_voxels) {
            return Err(Error::Shape(format!("voxel {bad} out of range (V={})", self.num_voxels)));
        }
        let mut betas = Vec::with_capacity(voxels.len() * self.num_stimuli);
        for &v in voxels {
            betas.extend_from_slice(self.voxel_betas(v));
        }
        let ncsnr = self
            .ncsnr
            .as_ref()
            .map(|nc| voxels.iter().map(|&v| nc[v]).collect());
        let roi = self.roi.as_ref().map(|r| RoiLabels {
            labels: voxels.iter().map(|&v| r.labels[v]).collect(),
            legend: r.legend.clone(),
        });
        Ok(VoxelDataset {
            num_voxels: voxels.len(),
            betas,
            ncsnr,
            roi,
            ..self.clone()
        })
    }

    /// Reorders stimuli; `order[i]` is the source stimulus placed at position `i`.
    pub fn permute_stimuli(&self, order: &[usize]) -> Result<VoxelDataset> {
        let s = self.num_stimuli;
        let mut seen = vec![false; s];
        if order.len() != s || order.iter().any(|&i| i >= s || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Shape("stimulus order is not a permutation".into()));
        }
        let e = self.embedding_dim;
        let mut embeddings = Vec::with_capacity(self.embeddings.len());
        for &src in order {
            embeddings.extend_from_slice(self.embedding(src));
        }
        let mut betas = Vec::with_capacity(self.betas.len());
        for v in 0..self.num_voxels {
            let row = self.voxel_betas(v);
            betas.extend(order.iter().map(|&src| row[src]));
        }
        debug_assert_eq!(embeddings.len(), s * e);
        Ok(VoxelDataset {
            embeddings,
            betas,
            ..self.clone()
        })
    }
}

/// Comma-separated stimulus indices; `a..b` items expand to the half-open range.
pub fn parse_index_list(raw: &str) -> Result<Vec<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("invalid stimulus index {s:?}")))
    };
    let mut out = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo >= hi {
                    return Err(Error::Config(format!("empty index range {item:?}")));
                }
                out.extend(lo..hi);
            }
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

/// Keeps voxels whose ncsnr is strictly greater than `ncsnr_min`.
pub fn filter_voxels(ds: &VoxelDataset, ncsnr_min: f64) -> Result<VoxelDataset> {
    let nc = ds.ncsnr().ok_or(Error::MissingField("ncsnr"))?;
    // compare at storage precision so a stored 0.3 is not above a cutoff of 0.3
    let cutoff = ncsnr_min as f32;
    let keep: Vec<usize> = nc
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cutoff)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no voxel of {} has ncsnr > {ncsnr_min}",
            ds.num_voxels()
        )));
    }
    ds.select_voxels(&keep)
}

/// Per-voxel z-scoring across stimuli (population divisor).
pub fn standardize_betas(ds: &VoxelDataset) -> Result<VoxelDataset> {
    let s = ds.num_stimuli();
    if s < 2 {
        return Err(Error::InsufficientStimuli { needed: 2, available: s });
    }
    let mut betas = Vec::with_capacity(ds.betas.len());
    for v in 0..ds.num_voxels() {
        let row = ds.voxel_betas(v);
        let mean = row.iter().map(|&b| f64::from(b)).sum::<f64>() / s as f64;
        let var = row
            .iter()
            .map(|&b| (f64::from(b) - mean).powi(2))
            .sum::<f64>()
            / s as f64;
        if var <= 0.0 {
            return Err(Error::DegenerateVoxel { voxel: v });
        }
        let sd = var.sqrt();
        betas.extend(row.iter().map(|&b| ((f64::from(b) - mean) / sd) as f32));
    }
    Ok(VoxelDataset {
        betas,
        ..ds.clone()
    })
}

/// Seeded partition of `0..num_stimuli` into groups of the given fractions.
///
/// Sizes are `floor(f * S)`, with whatever is left over added to the first
/// group. Each group is returned in ascending order.
pub fn split_stimuli(num_stimuli: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|&f| (f * num_stimuli as f64).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += num_stimuli - assigned;

    let mut order: Vec<usize> = (0..num_stimuli).collect();
    order.shuffle(&mut stream_rng(seed, 0x5e11_7000));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += size;
    }
    Ok(parts)
}
