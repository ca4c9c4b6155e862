//! Ranks support stimuli by the attention they receive from the readout
//! token in the final layer, for one voxel and for a whole ROI.

use incorl::data::{support_from_indices, synth_dataset, SynthConfig};
use incorl::eval::{top_attention_group, top_attention_images};
use incorl::model::{init_params, ModelConfig};
use incorl::tensor::stream_rng;

fn main() -> incorl::Result<()> {
    let params = init_params::<f32>(&ModelConfig::with_shape(8, 32, 2, 4))?;
    let synth = SynthConfig { dim: 8, category_count: 2, ..SynthConfig::default() };
    let ds = synth_dataset(&synth, "attn", 60, 10, &mut stream_rng(6, 0))?.dataset;
    let support: Vec<usize> = (0..30).collect();
    for item in top_attention_images(&params, &support_from_indices(&ds, 0, &support)?, 5)? {
        println!("voxel 0: stimulus {:2} score {:.4}", support[item.index], item.score);
    }
    let roi = ds.roi().unwrap();
    let members: Vec<usize> = (0..ds.num_voxels()).filter(|&v| roi.labels[v] == 0).collect();
    for item in top_attention_group(&params, &ds, &members, &support, 5)? {
        println!("{}: stimulus {:2} score {:.4}", roi.legend[0], support[item.index], item.score);
    }
    Ok(())
}
