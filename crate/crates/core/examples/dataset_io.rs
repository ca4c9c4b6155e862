//! Builds a VXED dataset from text matrices, keeps reliable voxels, stores a
//! shared test list and round-trips the file.

use incorl::data::text::{dataset_from_text, parse_text_matrix};
use incorl::data::vxed::encode_dataset;
use incorl::data::{filter_voxels, load_dataset, write_dataset};

fn main() -> incorl::Result<()> {
    let embeddings = parse_text_matrix("1 0\n0 1\n1 1\n2 -1\n0.5 0.5\n")?;
    let betas = parse_text_matrix("1 0 1 2 0.5\n0 1 1 -1 0.5\n0.1 -0.3 0.2 0.0 0.4\n")?;
    let ncsnr = parse_text_matrix("0.8 0.6 0.1")?;
    let roi = parse_text_matrix("0 0 1")?;
    let mut ds = dataset_from_text("s1", &embeddings, &betas, Some(&ncsnr), Some((&roi, vec!["V1".into(), "FFA".into()])))?;
    ds.set_manifest_entry("shared:test", "3..5")?;

    let kept = filter_voxels(&ds, 0.2)?;
    println!("{} of {} voxels have ncsnr > 0.2", kept.num_voxels(), ds.num_voxels());

    let path = std::env::temp_dir().join("incorl-example.vxed");
    write_dataset(&kept, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back.betas(), kept.betas());
    assert_eq!(encode_dataset(&back), encode_dataset(&kept));
    println!("round trip ok; shared test stimuli {:?}", back.shared_indices("test")?);
    Ok(())
}
