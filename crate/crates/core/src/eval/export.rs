use std::path::Path;

use crate::error::{Error, Result};
use crate::model::WeightMatrix;

/// Comma-separated weights: header `voxel_id,roi,w_0..w_{E-1}`, one row per
/// voxel. Values are rounded to `f32` and written in shortest round-trip form.
pub fn format_weights(weights: &WeightMatrix, voxel_ids: &[usize], rois: &[String]) -> Result<String> {
    let v = weights.rows();
    if voxel_ids.len() != v || rois.len() != v {
        return Err(Error::Shape(format!(
            "{v} weight rows but {} voxel ids and {} ROI names",
            voxel_ids.len(),
            rois.len()
        )));
    }
    if let Some(bad) = rois.iter().find(|r| r.contains(',') || r.contains('\n')) {
        return Err(Error::Config(format!("ROI name {bad:?} cannot be written to a comma-separated table")));
    }
    let mut out = String::from("voxel_id,roi");
    for j in 0..weights.dim() {
        out.push_str(&format!(",w_{j}"));
    }
    out.push('\n');
    for r in 0..v {
        out.push_str(&format!("{},{}", voxel_ids[r], rois[r]));
        for &w in weights.row(r) {
            out.push_str(&format!(",{}", w as f32));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_weights(weights: &WeightMatrix, voxel_ids: &[usize], rois: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_weights(weights, voxel_ids, rois)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parsed weight export.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub voxel_ids: Vec<usize>,
    pub rois: Vec<String>,
    pub weights: WeightMatrix,
}

pub fn parse_weights(text: &str) -> Result<WeightTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty weight table".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "voxel_id" || cols[1] != "roi" {
        return Err(Error::Format("weight table header must be voxel_id,roi,w_0,...".into()));
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("w_{j}") {
            return Err(Error::Format(format!("unexpected weight column {c:?}")));
        }
    }
    let dim = cols.len() - 2;
    let mut voxel_ids = Vec::new();
    let mut rois = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::Format(format!("weight table row {}", i + 1));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 2 {
            return Err(bad());
        }
        voxel_ids.push(cells[0].parse().map_err(|_| bad())?);
        rois.push(cells[1].to_string());
        for c in &cells[2..] {
            let v: f32 = c.parse().map_err(|_| bad())?;
            values.push(f64::from(v));
        }
    }
    Ok(WeightTable {
        voxel_ids,
        rois,
        weights: WeightMatrix::new(dim, values)?,
    })
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightTable> {
    let path = path.as_ref();
    parse_weights(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
