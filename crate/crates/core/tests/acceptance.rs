//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs under `cargo test` with `harness = false`. Set `INCORL_REAL_VXED`,
//! `INCORL_REAL_CKPT` (and optionally `INCORL_REAL_TEST`, the name of a shared
//! index list) to run the protocol check on recorded data. `INCORL_CRITERIA`
//! (e.g. `1,3`) restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use incorl::baselines::{reference_fit, ridge_cv, ridge_fit, ReferenceConfig, RidgeGrid};
use incorl::data::vxed::{decode_dataset, encode_dataset};
use incorl::data::{draw_task, synth_dataset, NoiseLevel, SupportSet, SynthConfig, Task, TaskBatch};
use incorl::eval::{draw_support, model_weights, predicted_categories, prompt_classification, support_pool, PromptBank, PromptRule};
use incorl::model::{forward, forward_many, init_params, loss, loss_and_grad, ModelConfig, ModelParams, WeightMatrix};
use incorl::tensor::stream_rng;
use incorl::train::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, run_stage, save_checkpoint, Checkpoint, ContextLaw,
    DataSource, Stage, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- oracles

fn ev(y: &[f64], yhat: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - res / tot
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(X'X + lambda I) w = X'y` by Cholesky.
fn normal_equations(x: &[f64], y: &[f64], e: usize, lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut a = vec![0.0; e * e];
    let mut b = vec![0.0; e];
    for i in 0..n {
        let row = &x[i * e..(i + 1) * e];
        for r in 0..e {
            b[r] += row[r] * y[i];
            for c in 0..e {
                a[r * e + c] += row[r] * row[c];
            }
        }
    }
    for d in 0..e {
        a[d * e + d] += lambda;
    }
    let mut l = vec![0.0; e * e];
    for i in 0..e {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * e + k] * l[j * e + k]).sum();
            if i == j {
                l[i * e + i] = (a[i * e + i] - s).sqrt();
            } else {
                l[i * e + j] = (a[i * e + j] - s) / l[j * e + j];
            }
        }
    }
    let mut z = vec![0.0; e];
    for i in 0..e {
        z[i] = (b[i] - (0..i).map(|k| l[i * e + k] * z[k]).sum::<f64>()) / l[i * e + i];
    }
    let mut w = vec![0.0; e];
    for i in (0..e).rev() {
        w[i] = (z[i] - (i + 1..e).map(|k| l[k * e + i] * w[k]).sum::<f64>()) / l[i * e + i];
    }
    w
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

fn prefix(task: &SupportSet, p: usize) -> SupportSet {
    let e = task.dim();
    SupportSet::new(task.embeddings()[..p * e].to_vec(), task.responses()[..p].to_vec(), e).unwrap()
}

fn query_ev(omega: &[f64], task: &incorl::data::SynthTask) -> f64 {
    let y = task.query.responses().unwrap();
    let yhat: Vec<f64> = (0..task.query.len()).map(|j| dot(task.query.embedding(j), omega)).collect();
    ev(y, &yhat)
}

// ---------------------------------------------------------------- criteria

fn permutation_invariance() -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = stream_rng(11, 1);
    let synth = SynthConfig { dim: 16, ..SynthConfig::default() };
    for t in 0..100u64 {
        let cfg = ModelConfig { seed: t, ..ModelConfig::desk(16) };
        let params = init_params::<f32>(&cfg).unwrap();
        let p = rng.random_range(10..=100);
        let task = draw_task(&synth, &[], p, 1, &mut rng);
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(&mut rng);
        let a = forward(&params, &task.support).unwrap();
        let b = forward(&params, &task.support.permuted(&order)).unwrap();
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(dev / scale);
    }
    outcome(worst <= 1e-5, format!("max relative deviation {worst:.2e} over 100 triples (limit 1e-5)"))
}

fn gradient_check() -> Outcome {
    let cfg = ModelConfig { readout_tokens: 1, ..ModelConfig::with_shape(8, 32, 2, 4) };
    let synth = SynthConfig { dim: 8, noise: NoiseLevel::Fixed(0.3), ..SynthConfig::default() };
    let step = 1e-4;
    let mut worst = (0.0f64, String::new());
    for b in 0..3u64 {
        let mut params = init_params::<f64>(&ModelConfig { seed: 40 + b, ..cfg.clone() }).unwrap();
        // move away from the initialisation so no tensor sits at an exact zero
        let mut rng = stream_rng(41, b);
        for v in params.as_mut_slice() {
            *v += 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let tasks: Vec<Task> = (0..3)
            .map(|_| {
                let t = draw_task(&synth, &[], 6, 2, &mut rng);
                Task { support: t.support, query: t.query }
            })
            .collect();
        let batch = TaskBatch::new(tasks).unwrap();
        let (_, grad) = loss_and_grad(&params, &batch).unwrap();
        let specs = params.layout().specs().to_vec();
        for spec in specs {
            let mut fd = Vec::with_capacity(spec.len());
            for i in spec.range() {
                let orig = params.as_slice()[i];
                params.as_mut_slice()[i] = orig + step;
                let up = loss(&params, &batch).unwrap();
                params.as_mut_slice()[i] = orig - step;
                let down = loss(&params, &batch).unwrap();
                params.as_mut_slice()[i] = orig;
                fd.push((up - down) / (2.0 * step));
            }
            let analytic = &grad.as_slice()[spec.range()];
            let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, f)| a - f).collect();
            let denom = norm(analytic).max(norm(&fd));
            let rel = if denom == 0.0 { 0.0 } else { norm(&diff) / denom };
            if rel > worst.0 {
                worst = (rel, format!("{} (batch {b})", spec.name));
            }
        }
    }
    outcome(
        worst.0 < 1e-3,
        format!("max per-tensor relative error {:.2e} at {} (limit 1e-3)", worst.0, worst.1),
    )
}

fn ridge_suite() -> Outcome {
    let mut rng = stream_rng(23, 0);
    let mut stationarity = 0.0f64;
    for _ in 0..100 {
        let e = rng.random_range(2..=24);
        let n = rng.random_range(2..=120);
        let lambda = 10f64.powf(rng.random_range(-3.0..4.0));
        let x = gaussian(&mut rng, n * e);
        let y = gaussian(&mut rng, n);
        let w = ridge_fit(&x, &y, e, lambda).unwrap();
        let mut grad = vec![0.0; e];
        let mut xty = vec![0.0; e];
        for i in 0..n {
            let row = &x[i * e..(i + 1) * e];
            let r = dot(row, &w) - y[i];
            for j in 0..e {
                grad[j] += row[j] * r;
                xty[j] += row[j] * y[i];
            }
        }
        for j in 0..e {
            grad[j] += lambda * w[j];
        }
        stationarity = stationarity.max(norm(&grad) / norm(&xty));
    }

    let grid = RidgeGrid::default();
    let (mut low, mut high) = (0, 0);
    for t in 0..100u64 {
        let mut rng = stream_rng(29, t);
        let x = gaussian(&mut rng, 100 * 16);
        let w = gaussian(&mut rng, 16);
        let y: Vec<f64> = x.chunks(16).map(|r| dot(r, &w)).collect();
        if ridge_cv(&x, &y, 16, &grid, t).unwrap().lambda == 1e-3 {
            low += 1;
        }
        let noise = gaussian(&mut rng, 100);
        if ridge_cv(&x, &noise, 16, &grid, t).unwrap().lambda == 1e8 {
            high += 1;
        }
    }

    let mut reference = 0.0f64;
    for t in 0..20u64 {
        let mut rng = stream_rng(31, t);
        let (n, e) = (40 + 5 * t as usize, 4 + (t as usize % 5));
        let x = gaussian(&mut rng, n * e);
        let w0 = gaussian(&mut rng, e);
        let y: Vec<f64> = x.chunks(e).map(|r| dot(r, &w0) + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let rc = ReferenceConfig { l2: if t % 2 == 0 { 0.0 } else { 0.05 }, ..ReferenceConfig::default() };
        let fit = reference_fit(&x, &y, e, &rc).unwrap();
        let exact = normal_equations(&x, &y, e, rc.equivalent_lambda(n));
        let diff: Vec<f64> = fit.iter().zip(&exact).map(|(a, b)| a - b).collect();
        reference = reference.max(norm(&diff) / norm(&exact));
    }

    let pass = stationarity <= 1e-6 && low >= 90 && high >= 90 && reference <= 1e-3;
    outcome(
        pass,
        format!(
            "stationarity {stationarity:.1e} (<= 1e-6); lambda*=1e-3 on noiseless {low}/100; \
             lambda*=1e8 on pure noise {high}/100 (each >= 90); reference vs closed form {reference:.1e} (<= 1e-3)"
        ),
    )
}

const DESK_BATCHES: [(Stage, ContextLaw, usize); 2] = [
    (Stage::Pretrain, ContextLaw::Fixed(100), 2000),
    (Stage::Extend, ContextLaw::Uniform(10, 200), 1000),
];

fn desk_synth() -> SynthConfig {
    SynthConfig {
        dim: 16,
        noise: NoiseLevel::Range { lo: 0.0, hi: 1.5 },
        category_count: 5,
        prototype_noise: 0.25,
        seed: 7,
        ..SynthConfig::default()
    }
}

fn train_desk() -> Checkpoint {
    let synth = desk_synth();
    let mut ck = Checkpoint::new(init_params(&ModelConfig::desk(16)).unwrap());
    let start = Instant::now();
    for (stage, law, batches) in DESK_BATCHES {
        let cfg = TrainConfig {
            batch_size: 32,
            queries_per_task: 100,
            context_law: law,
            batches_per_epoch: batches / 10,
            max_epochs: 10,
            early_stop_patience: 10,
            ..TrainConfig::new(stage)
        };
        let out = run_stage(&cfg, DataSource::Synthetic(&synth), ck, &mut |log| {
            println!("    {stage} {log} elapsed={:.0}s", start.elapsed().as_secs_f64())
        })
        .unwrap();
        ck = out.checkpoint;
    }
    ck
}

const SIZES: [usize; 5] = [10, 25, 50, 100, 200];

fn meta_learning(params: &ModelParams<f32>) -> Outcome {
    let synth = SynthConfig { noise: NoiseLevel::Fixed(1.0), ..desk_synth() };
    let protos = synth.prototypes();
    let mut rng = stream_rng(2024, 4);
    let mut model = [0.0; SIZES.len()];
    let mut ridge = 0.0;
    let n = 500;
    for t in 0..n {
        let task = draw_task(&synth, &protos, 200, 100, &mut rng);
        for (i, &p) in SIZES.iter().enumerate() {
            let support = prefix(&task.support, p);
            model[i] += query_ev(forward(params, &support).unwrap().as_slice(), &task);
            if p == 100 {
                let cv = ridge_cv(support.embeddings(), support.responses(), 16, &RidgeGrid::default(), t as u64).unwrap();
                ridge += query_ev(&cv.weights, &task);
            }
        }
    }
    model.iter_mut().for_each(|m| *m /= n as f64);
    ridge /= n as f64;
    let beats_ridge = model[3] >= ridge;
    let monotone = model.windows(2).all(|w| w[1] >= w[0] - 0.01);
    let curve: Vec<String> = SIZES.iter().zip(&model).map(|(p, m)| format!("p={p}:{m:.4}")).collect();
    outcome(
        beats_ridge && monotone,
        format!(
            "model {} | ridge_cv p=100: {ridge:.4} | beats ridge: {beats_ridge} | nondecreasing within 0.01: {monotone}",
            curve.join(" ")
        ),
    )
}

fn noiseless_recovery(params: &ModelParams<f32>) -> Outcome {
    let synth = SynthConfig { noise: NoiseLevel::Fixed(0.0), ..desk_synth() };
    let protos = synth.prototypes();
    let mut rng = stream_rng(2024, 5);
    let (mut model, mut ridge) = (0.0, 0.0);
    let n = 500;
    for t in 0..n {
        let task = draw_task(&synth, &protos, 200, 100, &mut rng);
        model += query_ev(forward(params, &task.support).unwrap().as_slice(), &task);
        let cv = ridge_cv(task.support.embeddings(), task.support.responses(), 16, &RidgeGrid::default(), t).unwrap();
        ridge += query_ev(&cv.weights, &task);
    }
    let (model, ridge) = (model / n as f64, ridge / n as f64);
    outcome(
        model >= 0.9,
        format!("mean query EV at p=200, sigma=0: {model:.4} (>= 0.9); ridge oracle {ridge:.5}"),
    )
}

fn prompt_classification_check(params: &ModelParams<f32>) -> Outcome {
    let synth = SynthConfig { noise: NoiseLevel::Fixed(1.0), ..desk_synth() };
    let data = synth_dataset(&synth, "planted", 400, 500, &mut stream_rng(2024, 6)).unwrap();
    let ds = &data.dataset;
    let pool = support_pool(ds.num_stimuli(), &[]).unwrap();
    let support = draw_support(&pool, 100, 0, 6).unwrap();
    let weights = model_weights(params, ds, &support).unwrap();
    let names: Vec<String> = (0..5).map(|i| format!("cat{i}")).collect();
    let prompts: Vec<Vec<f32>> = synth
        .prototypes()
        .into_iter()
        .map(|p| p.into_iter().map(|v| v as f32).collect())
        .collect();
    let bank = PromptBank::new(names.clone(), 16, prompts.clone()).unwrap();
    let table = prompt_classification(&weights, &bank, ds.roi().unwrap(), PromptRule::First).unwrap();
    let diagonal = table.diagonal_mean().unwrap();

    // duplicated category: every tie resolves to the earlier copy
    let mut dup_names = names.clone();
    dup_names.push("copy0".into());
    let mut dup_prompts = prompts.clone();
    dup_prompts.push(prompts[0].clone());
    let dup = PromptBank::new(dup_names, 16, dup_prompts).unwrap();
    let plain = predicted_categories(&weights, &bank, PromptRule::First).unwrap();
    let with_dup = predicted_categories(&weights, &dup, PromptRule::First).unwrap();
    let dup_ok = plain == with_dup;

    // zero prompt: chosen only when every activation is <= 0, by index order
    let zero_bank = PromptBank::new(
        vec!["neg".into(), "zero".into(), "pos".into()],
        2,
        vec![vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]],
    )
    .unwrap();
    let w = WeightMatrix::new(2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
    let zero_ok = predicted_categories(&w, &zero_bank, PromptRule::First).unwrap() == vec![2, 0, 0];

    outcome(
        diagonal >= 0.9 && dup_ok && zero_ok,
        format!("diagonal mean {diagonal:.4} (>= 0.9); duplicate tie-break {dup_ok}; zero-prompt ordering {zero_ok}"),
    )
}

fn determinism(trained: &Checkpoint, dir: &Path) -> Outcome {
    let synth = SynthConfig { dim: 8, ..SynthConfig::default() };
    let cfg = TrainConfig {
        context_law: ContextLaw::Fixed(20),
        batch_size: 8,
        queries_per_task: 10,
        batches_per_epoch: 5,
        max_epochs: 2,
        seed: 3,
        ..TrainConfig::new(Stage::Pretrain)
    };
    let train = || {
        let init = Checkpoint::new(init_params(&ModelConfig::with_shape(8, 32, 2, 4)).unwrap());
        let out = run_stage(&cfg, DataSource::Synthetic(&synth), init, &mut |_| {}).unwrap();
        encode_checkpoint(&out.checkpoint).unwrap()
    };
    let runs_equal = train() == train();

    let path = dir.join("desk.vxck");
    save_checkpoint(trained, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let mut rng = stream_rng(5, 5);
    let supports: Vec<SupportSet> = (0..20)
        .map(|_| draw_task(&desk_synth(), &[], 50, 1, &mut rng).support)
        .collect();
    let before = forward_many(&trained.params, &supports).unwrap();
    let after = forward_many(&loaded.params, &supports).unwrap();
    let predict_equal = before
        .values()
        .iter()
        .zip(after.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let bytes = std::fs::read(&path).unwrap();
    let vxck_equal = encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap() == bytes;
    let ds = synth_dataset(&desk_synth(), "rt", 50, 30, &mut stream_rng(5, 6)).unwrap().dataset;
    let vxed_path = dir.join("rt.vxed");
    incorl::data::write_dataset(&ds, &vxed_path).unwrap();
    let vxed_bytes = std::fs::read(&vxed_path).unwrap();
    let vxed_equal = encode_dataset(&decode_dataset(&vxed_bytes).unwrap()) == vxed_bytes && vxed_bytes == encode_dataset(&ds);

    outcome(
        runs_equal && predict_equal && vxck_equal && vxed_equal,
        format!(
            "identical runs {runs_equal}; save/load/predict bit-exact {predict_equal}; \
             VXCK round trip {vxck_equal}; VXED round trip {vxed_equal}"
        ),
    )
}

fn cli(args: &[&str]) -> i32 {
    incorl::cli::run(std::iter::once("incorl").chain(args.iter().copied()))
}

fn throughput(dir: &Path) -> Outcome {
    const VOXELS: usize = 20_000;
    const SAMPLE: usize = 4;
    const LIMIT: f64 = 120.0;
    let cfg = ModelConfig::full(512);
    let ckpt = dir.join("full.vxck");
    save_checkpoint(&Checkpoint::new(init_params(&cfg).unwrap()), &ckpt).unwrap();
    let synth = SynthConfig { dim: 512, ..SynthConfig::default() };
    let full = synth_dataset(&synth, "throughput", 110, VOXELS, &mut stream_rng(8, 8)).unwrap().dataset;
    let subset = full.select_voxels(&(0..SAMPLE).collect::<Vec<_>>()).unwrap();
    let data = dir.join("subset.vxed");
    incorl::data::write_dataset(&subset, &data).unwrap();
    let out = dir.join("weights.csv");
    let start = Instant::now();
    let code = cli(&[
        "--workers", "8", "predict", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "-p", "100",
        "--test-indices", "100..110", "--out", out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed().as_secs_f64();
    let projected = elapsed * VOXELS as f64 / SAMPLE as f64;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        code == 0 && projected <= LIMIT,
        format!(
            "predict over {SAMPLE} voxels took {elapsed:.1}s on {cores} core(s); projected {projected:.0}s for \
             {VOXELS} voxels (limit {LIMIT:.0}s, regression threshold {:.0}s)",
            projected * 1.25
        ),
    )
}

fn protocol(trained: &Checkpoint, dir: &Path) -> Outcome {
    let real = std::env::var("INCORL_REAL_VXED").ok().zip(std::env::var("INCORL_REAL_CKPT").ok());
    let (data, ckpt, test, source) = match real {
        Some((data, ckpt)) => {
            let test = std::env::var("INCORL_REAL_TEST").unwrap_or_else(|_| "test".into());
            (data.into(), ckpt.into(), test, "recorded data")
        }
        None => {
            let synth = SynthConfig { noise: NoiseLevel::Range { lo: 0.2, hi: 8.0 }, ..desk_synth() };
            let mut ds = synth_dataset(&synth, "synthetic", 1400, 120, &mut stream_rng(9, 9)).unwrap().dataset;
            ds.set_manifest_entry("shared:test", "400..1400").unwrap();
            let data = dir.join("protocol.vxed");
            incorl::data::write_dataset(&ds, &data).unwrap();
            let ckpt = dir.join("protocol.vxck");
            save_checkpoint(trained, &ckpt).unwrap();
            (data, ckpt, "test".to_string(), "synthetic stand-in")
        }
    };
    let out = dir.join("table.txt");
    let test_spec = format!("shared:{test}");
    let code = cli(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--ncsnr-min", "0.2", "--sizes",
        "100", "--baselines", "ridge", "--baseline-sizes", "100,300", "--test-indices", &test_spec, "--out",
        out.to_str().unwrap(),
    ]);
    if code != 0 {
        return outcome(false, format!("eval exited with {code} on {source}"));
    }
    let text = std::fs::read_to_string(&out).unwrap();
    let mean = |label: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("mean_ev.{label}=")))
            .and_then(|v| v.parse::<f64>().ok())
    };
    let cols = ["model-100", "ridge-100", "ridge-300"].map(mean);
    let voxels: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("voxels="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let grid = RidgeGrid::default().lambdas;
    let baselines = text.split("[baselines]\n").nth(1).unwrap_or("");
    let rows: Vec<&str> = baselines.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    let lambdas_ok = rows
        .iter()
        .filter(|r| r.contains(",ridge-"))
        .all(|r| r.split(',').nth(2).and_then(|v| v.parse::<f64>().ok()).is_some_and(|l| grid.contains(&l)));
    let shaped = cols.iter().all(Option::is_some) && rows.len() == 3 * voxels && voxels > 0 && lambdas_ok;
    let fmt = |v: Option<f64>| v.map_or("missing".to_string(), |v| format!("{v:.4}"));
    outcome(
        shaped,
        format!(
            "{source}: {voxels} voxels after ncsnr > 0.2; mean EV model-100 {} ridge-100 {} ridge-300 {}; \
             per-voxel lambda* on grid {lambdas_ok}",
            fmt(cols[0]),
            fmt(cols[1]),
            fmt(cols[2])
        ),
    )
}

fn selected(id: &str) -> bool {
    match std::env::var("INCORL_CRITERIA") {
        Ok(list) => list.split(',').any(|c| c.trim() == id),
        Err(_) => true,
    }
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> Option<bool> {
    if !selected(id) {
        return None;
    }
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "{} criterion {id} ({name}) [{:.0}s]: {}",
        if result.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        result.detail
    );
    Some(result.pass)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = Vec::new();
    passed.push(run("1", "permutation invariance", permutation_invariance));
    passed.push(run("2", "gradient correctness", gradient_check));
    passed.push(run("3", "ridge oracle suite", ridge_suite));

    let trained = if ["4", "5", "6", "7", "9"].iter().any(|id| selected(id)) {
        println!("    training desk model for criteria 4-7 and 9");
        let start = Instant::now();
        let ck = catch_unwind(train_desk).ok();
        println!("    training finished in {:.0}s", start.elapsed().as_secs_f64());
        ck
    } else {
        None
    };
    let with_model = |f: &dyn Fn(&Checkpoint) -> Outcome| match &trained {
        Some(ck) => f(ck),
        None => outcome(false, "desk training failed"),
    };
    passed.push(run("4", "synthetic meta-learning", || with_model(&|ck| meta_learning(&ck.params))));
    passed.push(run("5", "noiseless recovery", || with_model(&|ck| noiseless_recovery(&ck.params))));
    passed.push(run("6", "prompt classification", || {
        with_model(&|ck| prompt_classification_check(&ck.params))
    }));
    passed.push(run("7", "determinism and persistence", || with_model(&|ck| determinism(ck, dir.path()))));
    passed.push(run("8", "throughput", || throughput(dir.path())));
    passed.push(run("9", "protocol fidelity", || with_model(&|ck| protocol(ck, dir.path()))));

    let ran: Vec<bool> = passed.into_iter().flatten().collect();
    let n = ran.iter().filter(|&&p| p).count();
    println!("acceptance: {n}/{} criteria passed", ran.len());
    if n == ran.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
