//! Fits the three baselines to one noisy synthetic voxel.

use incorl::baselines::{ols_fit, reference_fit, ridge_cv, ReferenceConfig, RidgeGrid};
use incorl::data::{draw_task, NoiseLevel, SynthConfig};
use incorl::eval::explained_variance;
use incorl::tensor::stream_rng;

fn main() -> incorl::Result<()> {
    let synth = SynthConfig { dim: 12, noise: NoiseLevel::Fixed(1.0), ..SynthConfig::default() };
    let task = draw_task(&synth, &[], 60, 500, &mut stream_rng(4, 0));
    let (x, y) = (task.support.embeddings(), task.support.responses());
    let cv = ridge_cv(x, y, 12, &RidgeGrid::default(), 0)?;
    println!("ridge selected lambda = {}", cv.lambda);
    for (lambda, err) in RidgeGrid::default().lambdas.iter().zip(cv.mean_errors()) {
        println!("  lambda {lambda:>8.0e}: mean held-out squared error {err:.4}");
    }
    let fits = [
        ("ols", ols_fit(x, y, 12)?),
        ("ridge", cv.weights.clone()),
        ("reference", reference_fit(x, y, 12, &ReferenceConfig::default())?),
    ];
    let target = task.query.responses().unwrap();
    for (name, w) in fits {
        let pred: Vec<f64> = (0..task.query.len())
            .map(|j| task.query.embedding(j).iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        println!("{name:>9}: test EV {:.4}", explained_variance(target, &pred)?);
    }
    Ok(())
}
