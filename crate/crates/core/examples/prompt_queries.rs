//! Maps category prompt embeddings onto voxel weights and tabulates which
//! category each ROI prefers. The planted weights stand in for emitted ones.

use incorl::data::{synth_dataset, NoiseLevel, SynthConfig};
use incorl::eval::{prompt_classification, PromptBank, PromptRule};
use incorl::model::WeightMatrix;
use incorl::tensor::stream_rng;

fn main() -> incorl::Result<()> {
    let synth = SynthConfig {
        dim: 16,
        noise: NoiseLevel::Fixed(1.0),
        category_count: 4,
        prototype_noise: 0.25,
        ..SynthConfig::default()
    };
    let data = synth_dataset(&synth, "prompts", 50, 200, &mut stream_rng(3, 0))?;
    let weights = WeightMatrix::new(16, data.weights.concat())?;
    let bank = PromptBank::new(
        (0..4).map(|i| format!("cat{i}")).collect(),
        16,
        synth.prototypes().into_iter().map(|p| p.into_iter().map(|v| v as f32).collect()).collect(),
    )?;
    let table = prompt_classification(&weights, &bank, data.dataset.roi().unwrap(), PromptRule::First)?;
    print!("{}", table.to_csv());
    println!("diagonal mean {:.3}", table.diagonal_mean().unwrap_or(f64::NAN));
    Ok(())
}
