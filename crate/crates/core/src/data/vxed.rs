//! VXED dataset container.
//!
//! Layout (little-endian): magic `VXED`, `u32` version, `u64` manifest length,
//! manifest lines, then embeddings `f32 [S x E]`, betas `f32 [V x S]`, ncsnr
//! `f32 [V]` if `has_ncsnr`, roi `u16 [V]` if `has_roi`.
//!
//! Manifest entries keep their original order and spelling across a
//! load/write cycle; structural keys are only rewritten when their meaning
//! changed (for example after voxel filtering).

use std::path::Path;

use super::dataset::{RoiLabels, VoxelDataset};
use crate::container::{self, Cursor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VXED";
pub const VERSION: u32 = 1;

const KIND: &str = "VXED";

pub fn load_dataset(path: impl AsRef<Path>) -> Result<VoxelDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn write_dataset(ds: &VoxelDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<VoxelDataset> {
    let header = container::decode_header(bytes, MAGIC, KIND)?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported VXED version {} (expected {VERSION})",
            header.version
        )));
    }
    let entries = header.entries;
    let subject_id = container::required(&entries, "subject_id", KIND)?.to_string();
    let e = container::parse_usize(container::required(&entries, "E", KIND)?, "E")?;
    let s = container::parse_usize(container::required(&entries, "S", KIND)?, "S")?;
    let v = container::parse_usize(container::required(&entries, "V", KIND)?, "V")?;
    if e == 0 || s == 0 || v == 0 {
        return Err(Error::Integrity(format!("dimensions must be positive (E={e}, S={s}, V={v})")));
    }
    let has_ncsnr = flag(&entries, "has_ncsnr")?;
    let has_roi = flag(&entries, "has_roi")?;

    let mut cur = Cursor::new(header.payload);
    let embeddings = cur.f32s(s * e, "embeddings")?;
    let betas = cur.f32s(v * s, "betas")?;
    let ncsnr = if has_ncsnr {
        Some(cur.f32s(v, "ncsnr")?)
    } else {
        None
    };
    let roi = if has_roi {
        let legend_raw = container::lookup(&entries, "roi_legend")
            .ok_or_else(|| Error::Format("has_roi set but roi_legend missing".into()))?;
        let legend = parse_legend(legend_raw);
        let labels = cur.u16s(v, "roi labels")?;
        Some(RoiLabels { labels, legend })
    } else {
        None
    };
    if cur.remaining() != 0 {
        return Err(Error::Integrity(format!(
            "{} trailing payload bytes beyond the declared dimensions",
            cur.remaining()
        )));
    }
    Ok(VoxelDataset::new(subject_id, e, embeddings, betas, ncsnr, roi)?.with_manifest(entries))
}

pub fn encode_dataset(ds: &VoxelDataset) -> Vec<u8> {
    let entries = refreshed_manifest(ds);
    let mut out = container::encode_header(MAGIC, VERSION, &entries);
    container::put_f32s(&mut out, ds.embeddings());
    container::put_f32s(&mut out, ds.betas());
    if let Some(nc) = ds.ncsnr() {
        container::put_f32s(&mut out, nc);
    }
    if let Some(roi) = ds.roi() {
        for l in &roi.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

fn flag(entries: &[(String, String)], key: &str) -> Result<bool> {
    container::lookup(entries, key)
        .map(|v| container::parse_flag(v, key))
        .transpose()
        .map(|f| f.unwrap_or(false))
}

fn parse_legend(raw: &str) -> Vec<String> {
    if raw.is_empty() {
        Vec::new()
    } else {
        raw.split(',').map(str::to_string).collect()
    }
}

/// Canonical structural values for the dataset, in canonical order.
fn structural(ds: &VoxelDataset) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("subject_id", Some(ds.subject_id().to_string())),
        ("E", Some(ds.embedding_dim().to_string())),
        ("S", Some(ds.num_stimuli().to_string())),
        ("V", Some(ds.num_voxels().to_string())),
        ("has_ncsnr", ds.ncsnr().map(|_| "1".to_string())),
        ("has_roi", ds.roi().map(|_| "1".to_string())),
        ("roi_legend", ds.roi().map(|r| r.legend.join(","))),
    ]
}

/// True when the stored spelling `old` still denotes canonical value `new`.
fn same_meaning(key: &str, old: &str, new: Option<&str>) -> bool {
    match (key, new) {
        ("E" | "S" | "V", Some(n)) => old.parse::<usize>().ok() == n.parse::<usize>().ok(),
        ("has_ncsnr" | "has_roi", n) => {
            container::parse_flag(old, key).ok() == Some(n.is_some())
        }
        ("roi_legend", Some(n)) => old == n,
        ("roi_legend", None) => false,
        (_, Some(n)) => old == n,
        (_, None) => false,
    }
}

fn refreshed_manifest(ds: &VoxelDataset) -> Vec<(String, String)> {
    let canon = structural(ds);
    let mut out = Vec::new();
    for (k, old) in ds.manifest_entries() {
        match canon.iter().find(|(ck, _)| ck == k) {
            Some((ck, new)) => {
                if same_meaning(ck, old, new.as_deref()) {
                    out.push((k.clone(), old.clone()));
                } else if let Some(n) = new {
                    out.push((k.clone(), n.clone()));
                } else if matches!(*ck, "has_ncsnr" | "has_roi") {
                    out.push((k.clone(), "0".into()));
                }
            }
            None => out.push((k.clone(), old.clone())),
        }
    }
    for (ck, new) in canon {
        if let Some(n) = new {
            if !out.iter().any(|(k, _)| k == ck) {
                out.push((ck.to_string(), n));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::filter_voxels;

    fn tiny() -> VoxelDataset {
        VoxelDataset::new("s1", 3, vec![1., 0., 0., 0., 1., 0.], vec![0.5, -0.5], None, None).unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let ds = tiny();
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        assert_eq!(back.embeddings(), &[1., 0., 0., 0., 1., 0.]);
        assert_eq!(back.betas(), &[0.5, -0.5]);
        assert_eq!(back.num_stimuli(), 2);
        assert_eq!(back.num_voxels(), 1);
    }

    #[test]
    fn declared_rows_must_match_payload() {
        let ds = tiny();
        let mut bytes = encode_dataset(&ds);
        let at = bytes.windows(4).position(|w| w == b"\nV=1").unwrap();
        bytes[at + 3] = b'2';
        let err = decode_dataset(&bytes).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_dataset(&tiny());
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_dataset(&tiny());
        bytes[4] = 9;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_is_integrity_error() {
        let mut bytes = encode_dataset(&tiny());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn custom_manifest_spelling_survives() {
        let raw = "V=1\nnote=hello\nE=03\nS=2\nsubject_id=s9\nhas_ncsnr=true\n";
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(raw.len() as u64).to_le_bytes());
        bytes.extend_from_slice(raw.as_bytes());
        container::put_f32s(&mut bytes, &[1., 2., 3., 4., 5., 6.]);
        container::put_f32s(&mut bytes, &[0.25, 0.75]);
        container::put_f32s(&mut bytes, &[0.4]);
        let ds = decode_dataset(&bytes).unwrap();
        assert_eq!(ds.embedding_dim(), 3);
        assert_eq!(encode_dataset(&ds), bytes);
    }

    #[test]
    fn filtering_rewrites_voxel_count() {
        let roi = RoiLabels { labels: vec![0, 1], legend: vec!["a".into(), "b".into()] };
        let ds = VoxelDataset::new("s", 1, vec![1.0, 2.0], vec![0., 1., 2., 3.], Some(vec![0.1, 0.9]), Some(roi))
            .unwrap();
        let round = decode_dataset(&encode_dataset(&ds)).unwrap();
        let filtered = filter_voxels(&round, 0.2).unwrap();
        let back = decode_dataset(&encode_dataset(&filtered)).unwrap();
        assert_eq!(back.num_voxels(), 1);
        assert_eq!(back.manifest_value("V"), Some("1"));
        assert_eq!(back.roi().unwrap().labels, vec![1]);
    }
}
