//! Whitespace-delimited text matrices, for small hand-made datasets.

use std::path::Path;

use super::dataset::{RoiLabels, VoxelDataset};
use crate::error::{Error, Result};

/// Row-major matrix parsed from text. Blank lines and lines starting with `#`
/// are skipped; every remaining line is one row.
#[derive(Debug, Clone, PartialEq)]
pub struct TextMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

pub fn parse_text_matrix(text: &str) -> Result<TextMatrix> {
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::Format(format!("line {}: {tok:?} is not a number", lineno + 1)))?;
            if !v.is_finite() {
                return Err(Error::Integrity(format!("line {}: non-finite value", lineno + 1)));
            }
            values.push(v);
        }
        let n = values.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::Shape(format!(
                    "line {}: {n} columns, expected {c}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format("text matrix is empty".into()))?;
    Ok(TextMatrix { rows, cols, values })
}

pub fn read_text_matrix(path: impl AsRef<Path>) -> Result<TextMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text_matrix(&text)
}

/// Builds a dataset from an `[S x E]` embedding matrix and a `[V x S]` beta
/// matrix, plus optional ncsnr values (one per voxel, any layout) and ROI label
/// indices into `roi_legend`.
pub fn dataset_from_text(
    subject_id: &str,
    embeddings: &TextMatrix,
    betas: &TextMatrix,
    ncsnr: Option<&TextMatrix>,
    roi: Option<(&TextMatrix, Vec<String>)>,
) -> Result<VoxelDataset> {
    if betas.cols != embeddings.rows {
        return Err(Error::Shape(format!(
            "betas have {} columns but there are {} stimuli",
            betas.cols, embeddings.rows
        )));
    }
    let roi = roi
        .map(|(m, legend)| -> Result<RoiLabels> {
            let labels = m
                .values
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= f32::from(u16::MAX) {
                        Ok(v as u16)
                    } else {
                        Err(Error::Format(format!("roi label {v} is not a small nonnegative integer")))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(RoiLabels { labels, legend })
        })
        .transpose()?;
    VoxelDataset::new(
        subject_id,
        embeddings.cols,
        embeddings.values.clone(),
        betas.values.clone(),
        ncsnr.map(|m| m.values.clone()),
        roi,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let emb = parse_text_matrix("# stimuli\n1 0 0\n0 1 0\n").unwrap();
        assert_eq!((emb.rows, emb.cols), (2, 3));
        let betas = parse_text_matrix("0.5 -0.5").unwrap();
        let ds = dataset_from_text("s1", &emb, &betas, None, None).unwrap();
        assert_eq!(ds.betas(), &[0.5, -0.5]);
    }

    #[test]
    fn rejects_ragged_and_mismatched() {
        assert!(parse_text_matrix("1 2\n3\n").is_err());
        assert!(parse_text_matrix("1 x\n").is_err());
        let emb = parse_text_matrix("1\n2\n3\n").unwrap();
        let betas = parse_text_matrix("1 2\n").unwrap();
        assert!(dataset_from_text("s", &emb, &betas, None, None).is_err());
    }
}
