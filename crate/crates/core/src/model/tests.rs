use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{QuerySet, Task};
use crate::tensor::stream_rng;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        seed: 3,
        ..ModelConfig::with_shape(4, 8, 2, 2)
    }
}

fn random_support(p: usize, e: usize, seed: u64) -> SupportSet {
    let mut rng = stream_rng(seed, 99);
    let x: Vec<f64> = (0..p * e).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    SupportSet::new(x, y, e).unwrap()
}

fn random_task(p: usize, q: usize, e: usize, seed: u64) -> Task {
    let support = random_support(p, e, seed);
    let mut rng = stream_rng(seed, 7);
    let qx: Vec<f64> = (0..q * e).map(|_| rng.sample(StandardNormal)).collect();
    let qy: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    Task {
        support,
        query: QuerySet::new(qx, Some(qy), e).unwrap(),
    }
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-30);
    diff / norm
}

#[test]
fn logit_examples() {
    let q = [1.0, 1.0, 0.0, 0.0];
    let k = [1.0, 1.0, 5.0, 0.0];
    assert_eq!(scaled_attention_logits(&q, &k, 1.0, true), 0.0);
    // <q,k> = 2, d_k = 4, c = e
    assert!((scaled_attention_logits(&q, &k, std::f64::consts::E, true) - 1.0).abs() < 1e-12);
    // <q,k> = 3, d_k = 9, c = e^2
    let q9 = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let c = std::f64::consts::E.powi(2);
    assert!((scaled_attention_logits(&q9, &q9, c, true) - 2.0).abs() < 1e-12);
    assert!((scaled_attention_logits(&q9, &q9, c, false) - 1.0).abs() < 1e-12);
}

#[test]
fn zero_input_projection_tokens() {
    let cfg = tiny_cfg();
    let mut params = init_params::<f64>(&cfg).unwrap();
    params.tensor_mut("input_proj.weight").unwrap().fill(0.0);
    let support = random_support(5, 4, 1);
    let tokens = embed_context(&params, &support).unwrap();
    assert_eq!(tokens.len(), 6 * 8);
    assert!(tokens[..5 * 8].iter().all(|&v| v == 0.0));
    assert_eq!(&tokens[5 * 8..], params.tensor("readout_tokens").unwrap());
}

#[test]
fn embedding_permutes_with_support() {
    let params = init_params::<f64>(&tiny_cfg()).unwrap();
    let support = random_support(5, 4, 2);
    let order = [3, 0, 4, 1, 2];
    let a = embed_context(&params, &support).unwrap();
    let b = embed_context(&params, &support.permuted(&order)).unwrap();
    for (i, &src) in order.iter().enumerate() {
        assert_eq!(&b[i * 8..(i + 1) * 8], &a[src * 8..(src + 1) * 8]);
    }
    assert_eq!(&b[5 * 8..], &a[5 * 8..]);
}

#[test]
fn dimension_mismatch_is_shape_error() {
    let params = init_params::<f64>(&tiny_cfg()).unwrap();
    let support = random_support(3, 5, 0);
    assert!(matches!(forward(&params, &support), Err(Error::Shape(_))));
}

#[test]
fn forward_is_permutation_invariant() {
    let cfg = ModelConfig { readout_tokens: 2, ..tiny_cfg() };
    let params = init_params::<f64>(&cfg).unwrap();
    let mut rng = stream_rng(5, 0);
    for trial in 0..10 {
        let support = random_support(7, 4, trial);
        let mut order: Vec<usize> = (0..7).collect();
        order.shuffle(&mut rng);
        let a = forward(&params, &support).unwrap();
        let b = forward(&params, &support.permuted(&order)).unwrap();
        assert!(rel_dev(&b.0, &a.0) < 1e-12);
    }
}

#[test]
fn zero_head_emits_bias() {
    let mut params = init_params::<f64>(&tiny_cfg()).unwrap();
    params.tensor_mut("output_head.weight").unwrap().fill(0.0);
    params
        .tensor_mut("output_head.bias")
        .unwrap()
        .copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
    for seed in 0..3 {
        let w = forward(&params, &random_support(3 + seed as usize, 4, seed)).unwrap();
        assert_eq!(w.0, vec![0.5, -1.0, 2.0, 0.25]);
    }
}

#[test]
fn batch_rows_match_single_forward() {
    let params = init_params::<f32>(&tiny_cfg()).unwrap();
    let tasks: Vec<Task> = (0..5).map(|s| random_task(6, 2, 4, s)).collect();
    let batch = TaskBatch::new(tasks.clone()).unwrap();
    let all = forward_batch(&params, &batch).unwrap();
    for (i, t) in tasks.iter().enumerate() {
        assert_eq!(all.row(i), forward(&params, &t.support).unwrap().as_slice());
    }
    let single = forward_batch(&params, &TaskBatch::new(vec![tasks[0].clone()]).unwrap()).unwrap();
    assert_eq!(single.row(0), all.row(0));
    let dup = TaskBatch::new(vec![tasks[1].clone(), tasks[1].clone()]).unwrap();
    let dup = forward_batch(&params, &dup).unwrap();
    assert_eq!(dup.row(0), dup.row(1));
}

#[test]
fn predict_examples() {
    let w = HyperWeights(vec![1.0, -1.0]);
    assert_eq!(predict(&w, &[2.0, 3.0]).unwrap(), -1.0);
    assert_eq!(predict(&HyperWeights(vec![0.0, 0.0]), &[4.0, 7.0]).unwrap(), 0.0);
    assert_eq!(predict(&HyperWeights(vec![0.5, 2.0]), &[0.0, 1.0]).unwrap(), 2.0);
    assert!(predict(&w, &[1.0]).is_err());
}

/// Params whose emitted weights are exactly `omega` for any support.
fn constant_model(omega: &[f64]) -> ModelParams<f64> {
    let cfg = ModelConfig { seed: 1, ..ModelConfig::with_shape(omega.len(), 8, 1, 2) };
    let mut params = init_params::<f64>(&cfg).unwrap();
    params.tensor_mut("output_head.weight").unwrap().fill(0.0);
    params.tensor_mut("output_head.bias").unwrap().copy_from_slice(omega);
    params
}

fn task_with_queries(x: Vec<f64>, y: Vec<f64>, e: usize) -> Task {
    Task {
        support: SupportSet::new(vec![0.0; e], vec![0.0], e).unwrap(),
        query: QuerySet::new(x, Some(y), e).unwrap(),
    }
}

#[test]
fn loss_examples() {
    let params = constant_model(&[1.0, 0.0]);
    // prediction 3 vs target 1: error 2
    let batch = TaskBatch::new(vec![task_with_queries(vec![3.0, 5.0], vec![1.0], 2)]).unwrap();
    assert_eq!(loss(&params, &batch).unwrap(), 4.0);
    // errors 1 and 3
    let batch = TaskBatch::new(vec![task_with_queries(vec![1.0, 0.0, 2.0, 0.0], vec![0.0, -1.0], 2)]).unwrap();
    assert_eq!(loss(&params, &batch).unwrap(), 5.0);
    // perfect
    let batch = TaskBatch::new(vec![task_with_queries(vec![2.0, 9.0], vec![2.0], 2)]).unwrap();
    assert_eq!(loss(&params, &batch).unwrap(), 0.0);
    // missing responses
    let t = Task {
        support: SupportSet::new(vec![0.0; 2], vec![0.0], 2).unwrap(),
        query: QuerySet::new(vec![1.0, 1.0], None, 2).unwrap(),
    };
    assert!(matches!(loss(&params, &TaskBatch::new(vec![t]).unwrap()), Err(Error::Contract(_))));
}

#[test]
fn dead_path_gradients_vanish() {
    let params = constant_model(&[0.3, -0.7, 0.1]);
    let batch = TaskBatch::new((0..3).map(|s| random_task(4, 3, 3, s)).collect()).unwrap();
    let g = grad(&params, &batch).unwrap();
    for spec in params.layout().specs() {
        let vals = &g.as_slice()[spec.range()];
        if spec.name.starts_with("output_head") {
            continue;
        }
        assert!(vals.iter().all(|&v| v == 0.0), "{} has nonzero gradient", spec.name);
    }
}

#[test]
fn head_bias_gradient_matches_hand_derivation() {
    let params = init_params::<f64>(&tiny_cfg()).unwrap();
    let tasks: Vec<Task> = (0..3).map(|s| random_task(5, 4, 4, 10 + s)).collect();
    let batch = TaskBatch::new(tasks.clone()).unwrap();
    let g = grad(&params, &batch).unwrap();
    let mut want = vec![0.0; 4];
    let norm = (tasks.len() * 4) as f64;
    for t in &tasks {
        let w = forward(&params, &t.support).unwrap();
        for j in 0..4 {
            let x = t.query.embedding(j);
            let r = predict(&w, x).unwrap() - t.query.responses().unwrap()[j];
            for (acc, &xv) in want.iter_mut().zip(x) {
                *acc += 2.0 * r * xv / norm;
            }
        }
    }
    let got = g.tensor("output_head.bias").unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Central differences over every parameter; independent of the backward pass.
fn finite_difference(params: &ModelParams<f64>, batch: &TaskBatch, step: f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + step;
            let up = loss(&probe, batch).unwrap();
            probe.as_mut_slice()[i] = orig - step;
            let down = loss(&probe, batch).unwrap();
            probe.as_mut_slice()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_small() {
    let cfg = ModelConfig { readout_tokens: 2, ..tiny_cfg() };
    let mut params = init_params::<f64>(&cfg).unwrap();
    // nonzero biases and gains so every path is exercised
    let mut rng = stream_rng(8, 0);
    for v in params.as_mut_slice().iter_mut() {
        *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    let batch = TaskBatch::new((0..2).map(|s| random_task(4, 2, 4, 20 + s)).collect()).unwrap();
    let analytic = grad(&params, &batch).unwrap();
    let numeric = finite_difference(&params, &batch, 1e-5);
    for spec in params.layout().specs() {
        let a = &analytic.as_slice()[spec.range()];
        let n = &numeric[spec.range()];
        let err = rel_dev(a, n);
        assert!(err < 1e-5, "{}: relative error {err}", spec.name);
    }
}

#[test]
fn logit_scaling_is_a_query_rescale() {
    let on = ModelConfig { logit_scaling: true, ..tiny_cfg() };
    let off = ModelConfig { logit_scaling: false, ..on.clone() };
    let support = random_support(6, 4, 4);
    let n = 6 + on.readout_tokens;
    let p_on = init_params::<f64>(&on).unwrap();
    let mut p_off = ModelParams::from_flat(&off, p_on.as_slice().to_vec()).unwrap();
    let factor = (n as f64).ln();
    for l in 0..off.layers {
        for v in p_off.tensor_mut(&format!("layers.{l}.attn.q")).unwrap() {
            *v *= factor;
        }
    }
    let a = forward(&p_on, &support).unwrap();
    let b = forward(&p_off, &support).unwrap();
    assert!(rel_dev(&a.0, &b.0) < 1e-6);
}

#[test]
fn attention_trace_properties() {
    let cfg = ModelConfig { readout_tokens: 2, ..tiny_cfg() };
    let params = init_params::<f64>(&cfg).unwrap();
    let base = random_support(5, 4, 6);
    // duplicate pair 1 at position 5
    let mut x = base.embeddings().to_vec();
    x.extend_from_slice(base.embedding(1));
    let mut y = base.responses().to_vec();
    y.push(base.responses()[1]);
    let support = SupportSet::new(x, y, 4).unwrap();
    let trace = attention_trace(&params, &support).unwrap();
    for h in 0..trace.heads {
        for r in 0..trace.readout_tokens {
            let s: f64 = trace.distribution(h, r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    assert!((trace.ranking.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((trace.ranking[1] - trace.ranking[5]).abs() < 1e-6);

    let order = [4, 2, 0, 5, 1, 3];
    let perm = attention_trace(&params, &support.permuted(&order)).unwrap();
    for (i, &src) in order.iter().enumerate() {
        assert!((perm.ranking[i] - trace.ranking[src]).abs() < 1e-12);
    }
}

#[test]
fn overflow_reports_layer() {
    let mut params = init_params::<f32>(&tiny_cfg()).unwrap();
    params.tensor_mut("layers.1.ffn.w_down").unwrap().fill(f32::MAX);
    let support = random_support(3, 4, 0);
    match forward(&params, &support) {
        Err(Error::NumericOverflow { layer }) => assert_eq!(layer, 1),
        other => panic!("expected overflow, got {other:?}"),
    }
}

#[test]
fn f32_and_f64_paths_agree() {
    let p64 = init_params::<f64>(&tiny_cfg()).unwrap();
    let p32: ModelParams<f32> = p64.cast();
    let support = random_support(9, 4, 12);
    let a = forward(&p64.cast::<f32>().cast::<f64>(), &support).unwrap();
    let b = forward(&p32, &support).unwrap();
    assert!(rel_dev(&b.0, &a.0) < 1e-4);
}
