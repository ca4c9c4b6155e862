//! Pretrains a small hypernetwork on synthetic linear voxels, then extends it
//! to variable context sizes and saves the checkpoint.
//!
//! cargo run --release --example synthetic_pretraining -- /tmp/desk.vxck

use incorl::data::{NoiseLevel, SynthConfig};
use incorl::model::{init_params, ModelConfig};
use incorl::train::{run_stage, save_checkpoint, Checkpoint, ContextLaw, DataSource, Stage, TrainConfig};

fn main() -> incorl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "desk.vxck".into());
    let synth = SynthConfig {
        dim: 8,
        noise: NoiseLevel::Range { lo: 0.0, hi: 1.0 },
        ..SynthConfig::default()
    };
    let mut ckpt = Checkpoint::new(init_params(&ModelConfig::with_shape(8, 32, 2, 4))?);
    for (stage, law) in [(Stage::Pretrain, ContextLaw::Fixed(40)), (Stage::Extend, ContextLaw::Uniform(10, 80))] {
        let cfg = TrainConfig {
            context_law: law,
            batch_size: 16,
            queries_per_task: 40,
            batches_per_epoch: 100,
            max_epochs: 20,
            ..TrainConfig::new(stage)
        };
        let outcome = run_stage(&cfg, DataSource::Synthetic(&synth), ckpt, &mut |log| println!("{stage} {log}"))?;
        ckpt = outcome.checkpoint;
    }
    save_checkpoint(&ckpt, &out)?;
    println!("saved {out}");
    Ok(())
}
