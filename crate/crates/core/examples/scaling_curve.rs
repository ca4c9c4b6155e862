//! Scores a checkpoint against cross-validated ridge on a synthetic subject
//! at several support sizes and prints the report.
//!
//! cargo run --release --example scaling_curve -- desk.vxck

use incorl::baselines::Method;
use incorl::data::{synth_dataset, NoiseLevel, SynthConfig};
use incorl::eval::{evaluate, ProtocolConfig};
use incorl::model::{init_params, ModelConfig};
use incorl::tensor::stream_rng;
use incorl::train::{load_checkpoint, Checkpoint};

fn main() -> incorl::Result<()> {
    let ckpt = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?,
        None => Checkpoint::new(init_params(&ModelConfig::with_shape(8, 32, 2, 4))?),
    };
    let dim = ckpt.config().embed_dim;
    let synth = SynthConfig { dim, noise: NoiseLevel::Fixed(1.0), ..SynthConfig::default() };
    let ds = synth_dataset(&synth, "demo", 300, 40, &mut stream_rng(2, 0))?.dataset;
    let test: Vec<usize> = (200..300).collect();
    let pc = ProtocolConfig {
        sizes: vec![10, 25, 50, 100],
        repeats: 2,
        baselines: vec![Method::Ridge],
        ..ProtocolConfig::default()
    };
    let report = evaluate(&ckpt.params, &ds, &test, &pc)?;
    for s in &report.scores {
        println!("{:>10}: mean EV {:.4}", s.label(), s.mean_ev());
    }
    print!("{}", report.curve.as_ref().map(|c| c.to_csv()).unwrap_or_default());
    Ok(())
}
