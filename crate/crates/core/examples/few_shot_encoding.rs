//! Emits encoder weights for one voxel from a handful of (stimulus, response)
//! pairs and compares them with the planted weights and a ridge fit.
//!
//! Pass a checkpoint trained on 8-dimensional embeddings (see the
//! `synthetic_pretraining` example); without one an untrained model is used.

use incorl::baselines::{ridge_cv, RidgeGrid};
use incorl::data::{draw_task, NoiseLevel, SynthConfig};
use incorl::model::{forward, init_params, predict, ModelConfig};
use incorl::tensor::stream_rng;
use incorl::train::{load_checkpoint, Checkpoint};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() -> incorl::Result<()> {
    let ckpt = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?,
        None => Checkpoint::new(init_params(&ModelConfig::with_shape(8, 32, 2, 4))?),
    };
    let synth = SynthConfig { dim: 8, noise: NoiseLevel::Fixed(0.5), ..SynthConfig::default() };
    let mut rng = stream_rng(1, 0);
    for p in [10, 20, 40, 80] {
        let task = draw_task(&synth, &[], p, 1, &mut rng);
        let omega = forward(&ckpt.params, &task.support)?;
        let ridge = ridge_cv(task.support.embeddings(), task.support.responses(), 8, &RidgeGrid::default(), 0)?;
        println!(
            "p={p:3}  cos(model, planted)={:.3}  cos(ridge, planted)={:.3}  first query prediction {:.3}",
            cosine(omega.as_slice(), &task.weights),
            cosine(&ridge.weights, &task.weights),
            predict(&omega, task.query.embedding(0))?,
        );
    }
    Ok(())
}
