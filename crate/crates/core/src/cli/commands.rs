use std::path::Path;

use crate::data::text::{dataset_from_text, parse_text_matrix, TextMatrix};
use crate::data::vxed::{decode_dataset, encode_dataset};
use crate::data::{filter_voxels, parse_index_list, split_stimuli, synth_dataset, RoiLabels, SynthConfig, VoxelDataset};
use crate::error::{Error, Result};
use crate::eval::{
    decode_prompts, draw_support, encode_prompts, evaluate, format_weights, model_weights, parse_weights,
    prompt_classification, predicted_categories, query_embedding, support_pool, top_attention_group, PromptBank,
    ProtocolConfig,
};
use crate::baselines::RidgeGrid;
use crate::model::{init_params, ModelConfig, WeightMatrix};
use crate::tensor::stream_rng;
use crate::train::{decode_checkpoint, encode_checkpoint, run_stage, Checkpoint, DataSource, Stage, StageOutcome, TrainSubject};

use super::manifest::RunManifest;
use super::settings::RunConfig;
use super::*;

const DEFAULT_EMBED_DIM: usize = 16;

fn utf8(bytes: Vec<u8>, what: &str) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::Format(format!("{what} is not UTF-8 text")))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn finish(manifest: &RunManifest, out: &Path, bytes: &[u8]) -> Result<()> {
    write_output(out, bytes)?;
    manifest.write_beside(out)?;
    Ok(())
}

fn read_dataset(m: &mut RunManifest, label: &str, path: &Path) -> Result<VoxelDataset> {
    decode_dataset(&m.read_input(label, path)?)
}

fn read_checkpoint(m: &mut RunManifest, label: &str, path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&m.read_input(label, path)?)
}

fn read_matrix(m: &mut RunManifest, label: &str, path: &Path) -> Result<TextMatrix> {
    parse_text_matrix(&utf8(m.read_input(label, path)?, label)?)
}

/// `shared:<name>` or an index list such as `0,5,10..20`.
pub fn resolve_indices(ds: &VoxelDataset, spec: &str) -> Result<Vec<usize>> {
    let idx = match spec.strip_prefix("shared:") {
        Some(name) => ds.shared_indices(name)?,
        None => parse_index_list(spec)?,
    };
    let mut seen = vec![false; ds.num_stimuli()];
    for &i in &idx {
        if i >= ds.num_stimuli() {
            return Err(Error::Shape(format!(
                "stimulus index {i} out of range (S={})",
                ds.num_stimuli()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!("stimulus index {i} is listed twice")));
        }
    }
    if idx.is_empty() {
        return Err(Error::Config(format!("index list {spec:?} is empty")));
    }
    Ok(idx)
}

/// Support stimuli: an explicit list, or a seeded draw of `p` non-test stimuli.
fn resolve_support(
    ds: &VoxelDataset,
    test: &[usize],
    p: Option<usize>,
    explicit: Option<&str>,
    seed: u64,
) -> Result<Vec<usize>> {
    match explicit {
        Some(spec) => {
            let support = resolve_indices(ds, spec)?;
            if let Some(&clash) = support.iter().find(|s| test.contains(s)) {
                return Err(Error::Config(format!("stimulus {clash} is in both the support and the test set")));
            }
            if let Some(p) = p.filter(|&p| p != support.len()) {
                return Err(Error::Config(format!(
                    "--support lists {} stimuli but -p is {p}",
                    support.len()
                )));
            }
            Ok(support)
        }
        None => {
            let p = p.ok_or_else(|| Error::Config("a support size (-p) or --support list is required".into()))?;
            if p + test.len() > ds.num_stimuli() {
                return Err(Error::InsufficientStimuli {
                    needed: p + test.len(),
                    available: ds.num_stimuli(),
                });
            }
            draw_support(&support_pool(ds.num_stimuli(), test)?, p, 0, seed)
        }
    }
}

fn roi_names(ds: &VoxelDataset) -> Vec<String> {
    match ds.roi() {
        Some(r) => (0..ds.num_voxels()).map(|v| r.name_of(v).to_string()).collect(),
        None => vec!["NA".to_string(); ds.num_voxels()],
    }
}

fn record_outcome(m: &mut RunManifest, outcome: &StageOutcome) {
    m.result("epochs_run", outcome.history.len());
    if let Some(best) = outcome.best_epoch {
        m.result("best_epoch", best);
    }
    m.result("stopped_early", outcome.stopped_early);
    if let Some(best) = outcome.checkpoint.meta("best_val_loss") {
        m.result("best_val_loss", best);
    }
}

fn train_and_write(
    mut m: RunManifest,
    rc: &RunConfig,
    source: DataSource<'_>,
    init: Checkpoint,
    out: &Path,
) -> Result<()> {
    let outcome = run_stage(&rc.train, source, init, &mut |log| eprintln!("{} {log}", rc.train.stage))?;
    record_outcome(&mut m, &outcome);
    finish(&m, out, &encode_checkpoint(&outcome.checkpoint)?)
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut m = RunManifest::new("pretrain", 0);
    let rc = RunConfig::parse(&utf8(m.read_input("config", &a.config)?, "config")?, Stage::Pretrain)?;
    let init = match &a.init {
        Some(path) => {
            let ck = read_checkpoint(&mut m, "init", path)?;
            rc.check_model(ck.config())?;
            ck
        }
        None => {
            let base = ModelConfig::full(rc.synth_dim()?.unwrap_or(DEFAULT_EMBED_DIM));
            Checkpoint::new(init_params(&rc.model(&base)?)?)
        }
    };
    let synth = rc.synth(init.config().embed_dim)?;
    m.seed = rc.train.seed;
    m.extend(rc.entries(init.config(), Some(&synth)));
    train_and_write(m, &rc, DataSource::Synthetic(&synth), init, &a.out)
}

pub fn extend(a: &ExtendArgs) -> Result<()> {
    let mut m = RunManifest::new("extend", 0);
    let rc = RunConfig::parse(&utf8(m.read_input("config", &a.config)?, "config")?, Stage::Extend)?;
    let init = read_checkpoint(&mut m, "init", &a.init)?;
    rc.check_model(init.config())?;
    let synth = rc.synth(init.config().embed_dim)?;
    m.seed = rc.train.seed;
    m.extend(rc.entries(init.config(), Some(&synth)));
    train_and_write(m, &rc, DataSource::Synthetic(&synth), init, &a.out)
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let mut m = RunManifest::new("finetune", 0);
    let rc = RunConfig::parse(&utf8(m.read_input("config", &a.config)?, "config")?, Stage::Finetune)?;
    let init = read_checkpoint(&mut m, "init", &a.init)?;
    rc.check_model(init.config())?;
    m.seed = rc.train.seed;
    m.extend(rc.entries(init.config(), None));
    if let Some(min) = a.ncsnr_min {
        m.set("ncsnr_min", min);
    }
    if let Some(spec) = &a.test_indices {
        m.set("test_indices", spec);
    }
    let mut datasets = Vec::new();
    let mut pools = Vec::new();
    for (i, path) in a.data.iter().enumerate() {
        let raw = read_dataset(&mut m, &format!("data.{i}"), path)?;
        let ds = match a.ncsnr_min {
            Some(min) => filter_voxels(&raw, min)?,
            None => raw,
        };
        let test = match &a.test_indices {
            Some(spec) => resolve_indices(&ds, spec)?,
            None => Vec::new(),
        };
        m.set(&format!("data.{i}.subject"), ds.subject_id());
        m.set(&format!("data.{i}.voxels"), ds.num_voxels());
        m.set(&format!("data.{i}.train_stimuli"), ds.num_stimuli() - test.len());
        pools.push(support_pool(ds.num_stimuli(), &test)?);
        datasets.push(ds);
    }
    let subjects: Vec<TrainSubject<'_>> = datasets
        .iter()
        .zip(&pools)
        .map(|(dataset, stimuli)| TrainSubject { dataset, stimuli })
        .collect();
    train_and_write(m, &rc, DataSource::Voxels(&subjects), init, &a.out)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let mut m = RunManifest::new("predict", a.seed);
    let ck = read_checkpoint(&mut m, "ckpt", &a.ckpt)?;
    let ds = read_dataset(&mut m, "data", &a.data)?;
    let test = match &a.test_indices {
        Some(spec) => resolve_indices(&ds, spec)?,
        None => Vec::new(),
    };
    let query = match &a.query {
        Some(path) => Some(read_matrix(&mut m, "query", path)?),
        None => None,
    };
    if let Some(q) = &query {
        if q.cols != ds.embedding_dim() {
            return Err(Error::Shape(format!(
                "query embeddings have dimension {} but the dataset has {}",
                q.cols,
                ds.embedding_dim()
            )));
        }
    }
    if a.predictions.is_some() && test.is_empty() && query.is_none() {
        return Err(Error::Config("--predictions needs --test-indices or --query".into()));
    }
    let support = resolve_support(&ds, &test, a.support_size, a.support.as_deref(), a.seed)?;
    m.set("support_size", support.len());
    if let Some(spec) = &a.test_indices {
        m.set("test_indices", spec);
    }
    let weights = model_weights(&ck.params, &ds, &support)?;
    let ids: Vec<usize> = (0..ds.num_voxels()).collect();
    let table = format_weights(&weights, &ids, &roi_names(&ds))?;
    if let Some(path) = &a.predictions {
        let (names, rows): (Vec<String>, Vec<Vec<f64>>) = match &query {
            Some(q) => (
                (0..q.rows).map(|i| format!("q{i}")).collect(),
                q.values.chunks(q.cols).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect(),
            ),
            None => (
                test.iter().map(|s| format!("s{s}")).collect(),
                test.iter()
                    .map(|&s| ds.embedding(s).iter().map(|&v| f64::from(v)).collect())
                    .collect(),
            ),
        };
        let columns = rows
            .iter()
            .map(|x| query_embedding(&weights, x))
            .collect::<Result<Vec<_>>>()?;
        let mut text = format!("voxel_id,{}\n", names.join(","));
        for v in 0..weights.rows() {
            let cells: Vec<String> = columns.iter().map(|c| (c[v] as f32).to_string()).collect();
            text.push_str(&format!("{v},{}\n", cells.join(",")));
        }
        write_output(path, text.as_bytes())?;
        m.result("predictions", path.display());
    }
    m.result("voxels", weights.rows());
    finish(&m, &a.out, table.as_bytes())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut m = RunManifest::new("eval", a.seed);
    let ck = read_checkpoint(&mut m, "ckpt", &a.ckpt)?;
    let raw = read_dataset(&mut m, "data", &a.data)?;
    let ds = match a.ncsnr_min {
        Some(min) => filter_voxels(&raw, min)?,
        None => raw,
    };
    let test = match &a.test_indices {
        Some(spec) => resolve_indices(&ds, spec)?,
        None => split_stimuli(ds.num_stimuli(), &[0.8, 0.2], a.seed)?.swap_remove(1),
    };
    let mut grid = RidgeGrid::default();
    if let Some(l) = &a.lambdas {
        grid.lambdas = l.clone();
    }
    grid.folds = a.folds;
    grid.validate()?;
    let pc = ProtocolConfig {
        sizes: a.sizes.clone(),
        repeats: a.repeats,
        baselines: a.baselines.clone(),
        baseline_sizes: a.baseline_sizes.clone(),
        grid,
        seed: a.seed,
        ..ProtocolConfig::default()
    };
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    m.set("sizes", join(&pc.sizes));
    m.set("repeats", pc.repeats);
    m.set(
        "baselines",
        pc.baselines.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
    );
    m.set("baseline_sizes", join(pc.baseline_sizes.as_deref().unwrap_or(&pc.sizes)));
    m.set(
        "lambdas",
        pc.grid.lambdas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    m.set("folds", pc.grid.folds);
    m.set("ncsnr_min", a.ncsnr_min.map_or("none".to_string(), |v| v.to_string()));
    m.set("test_indices", a.test_indices.as_deref().unwrap_or("split(0.8,0.2)"));
    m.set("voxels", ds.num_voxels());
    let mut report = evaluate(&ck.params, &ds, &test, &pc)?;
    report.meta.insert(0, ("checkpoint".to_string(), a.ckpt.display().to_string()));
    for s in &report.scores {
        m.result(&format!("mean_ev.{}", s.label()), s.mean_ev());
    }
    finish(&m, &a.out, report.to_text().as_bytes())
}

/// Legend in order of first appearance.
fn labels_from_names(names: &[String]) -> RoiLabels {
    let mut legend: Vec<String> = Vec::new();
    let labels = names
        .iter()
        .map(|n| match legend.iter().position(|l| l == n) {
            Some(i) => i as u16,
            None => {
                legend.push(n.clone());
                (legend.len() - 1) as u16
            }
        })
        .collect();
    RoiLabels { labels, legend }
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let mut m = RunManifest::new("query", a.seed);
    let (weights, ids, roi): (WeightMatrix, Vec<usize>, RoiLabels) = match (&a.weights, &a.ckpt, &a.data) {
        (Some(path), None, None) => {
            let t = parse_weights(&utf8(m.read_input("weights", path)?, "weight table")?)?;
            let roi = labels_from_names(&t.rois);
            (t.weights, t.voxel_ids, roi)
        }
        (None, Some(ckpt), Some(data)) => {
            let ck = read_checkpoint(&mut m, "ckpt", ckpt)?;
            let ds = read_dataset(&mut m, "data", data)?;
            let test = match &a.test_indices {
                Some(spec) => resolve_indices(&ds, spec)?,
                None => Vec::new(),
            };
            let support = resolve_support(&ds, &test, a.support_size, None, a.seed)?;
            m.set("support_size", support.len());
            let roi = match ds.roi() {
                Some(r) => r.clone(),
                None => labels_from_names(&roi_names(&ds)),
            };
            (model_weights(&ck.params, &ds, &support)?, (0..ds.num_voxels()).collect(), roi)
        }
        _ => {
            return Err(Error::Config(
                "query needs either --weights or both --ckpt and --data".into(),
            ))
        }
    };
    let bank: PromptBank = decode_prompts(&m.read_input("prompts", &a.prompts)?)?;
    if bank.dim() != weights.dim() {
        return Err(Error::Shape(format!(
            "prompts have dimension {} but the weights have {}",
            bank.dim(),
            weights.dim()
        )));
    }
    m.set("rule", a.rule);
    m.set("roi_report", a.roi_report);
    let activations = (0..bank.categories().len())
        .map(|c| query_embedding(&weights, &bank.selector(c, a.rule)))
        .collect::<Result<Vec<_>>>()?;
    let predicted = predicted_categories(&weights, &bank, a.rule)?;
    let mut text = format!("[activations]\nvoxel_id,roi,{},predicted\n", bank.categories().join(","));
    for v in 0..weights.rows() {
        let cells: Vec<String> = activations.iter().map(|c| c[v].to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{}\n",
            ids[v],
            roi.name_of(v),
            cells.join(","),
            bank.categories()[predicted[v]]
        ));
    }
    if a.roi_report {
        let table = prompt_classification(&weights, &bank, &roi, a.rule)?;
        if let Some(d) = table.diagonal_mean() {
            m.result("diagonal_mean", d);
        }
        text.push_str("\n[prompt_table]\n");
        text.push_str(&table.to_csv());
    }
    finish(&m, &a.out, text.as_bytes())
}

pub fn attn(a: &AttnArgs) -> Result<()> {
    let mut m = RunManifest::new("attn", a.seed);
    let ck = read_checkpoint(&mut m, "ckpt", &a.ckpt)?;
    let ds = read_dataset(&mut m, "data", &a.data)?;
    let test = match &a.test_indices {
        Some(spec) => resolve_indices(&ds, spec)?,
        None => Vec::new(),
    };
    let support = resolve_support(&ds, &test, a.support_size, a.support.as_deref(), a.seed)?;
    m.set("support_size", support.len());
    m.set("k", a.k);
    let groups: Vec<(String, Vec<usize>)> = match (&a.voxel, &a.roi) {
        (Some(voxels), None) => voxels
            .iter()
            .map(|&v| {
                if v >= ds.num_voxels() {
                    Err(Error::Config(format!("voxel {v} does not exist (V={})", ds.num_voxels())))
                } else {
                    Ok((format!("voxel {v}"), vec![v]))
                }
            })
            .collect::<Result<_>>()?,
        (None, Some(name)) => {
            let roi = ds.roi().ok_or(Error::MissingField("roi"))?;
            let label = roi
                .index_of(name)
                .ok_or_else(|| Error::Legend(format!("unknown ROI {name:?}")))?;
            let voxels: Vec<usize> = (0..ds.num_voxels()).filter(|&v| roi.labels[v] == label).collect();
            if voxels.is_empty() {
                return Err(Error::EmptyResult(format!("ROI {name:?} has no voxels")));
            }
            vec![(format!("roi {name}"), voxels)]
        }
        _ => return Err(Error::Config("attn needs exactly one of --voxel or --roi".into())),
    };
    let mut text = String::new();
    for (label, voxels) in &groups {
        m.set(&format!("selection.{}", label.replace(' ', ".")), voxels.len());
        let ranked = top_attention_group(&ck.params, &ds, voxels, &support, a.k)?;
        text.push_str(&format!("[{label}]\nrank,stimulus,score\n"));
        for (rank, item) in ranked.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", rank + 1, support[item.index], item.score));
        }
        text.push('\n');
    }
    finish(&m, &a.out, text.as_bytes())
}

pub fn import(a: &ImportArgs) -> Result<()> {
    let mut m = RunManifest::new("import", 0);
    let emb = read_matrix(&mut m, "embeddings", &a.embeddings)?;
    let betas = read_matrix(&mut m, "betas", &a.betas)?;
    let ncsnr = match &a.ncsnr {
        Some(p) => Some(read_matrix(&mut m, "ncsnr", p)?),
        None => None,
    };
    let roi = match (&a.roi, &a.roi_legend) {
        (Some(p), Some(legend)) => Some((read_matrix(&mut m, "roi", p)?, legend.clone())),
        (None, None) => None,
        _ => return Err(Error::Config("--roi and --roi-legend must be given together".into())),
    };
    let mut ds = dataset_from_text(&a.subject, &emb, &betas, ncsnr.as_ref(), roi.as_ref().map(|(t, l)| (t, l.clone())))?;
    add_shared(&mut ds, &a.shared)?;
    m.set("subject", &a.subject);
    for s in &a.shared {
        m.set("shared", s);
    }
    m.result("stimuli", ds.num_stimuli());
    m.result("voxels", ds.num_voxels());
    finish(&m, &a.out, &encode_dataset(&ds))
}

fn add_shared(ds: &mut VoxelDataset, shared: &[String]) -> Result<()> {
    for entry in shared {
        let (name, spec) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--shared {entry:?} is not name=indices")))?;
        if name.is_empty() || name.contains(':') {
            return Err(Error::Config(format!("invalid shared list name {name:?}")));
        }
        let key = format!("shared:{name}");
        ds.set_manifest_entry(&key, spec)?;
        ds.shared_indices(name)?;
    }
    Ok(())
}

pub fn import_prompts(a: &ImportPromptsArgs) -> Result<()> {
    let mut m = RunManifest::new("import-prompts", 0);
    let mut names = Vec::new();
    let mut blocks = Vec::new();
    let mut dim = None;
    for entry in &a.category {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--category {entry:?} is not name=path")))?;
        let t = read_matrix(&mut m, &format!("category.{name}"), Path::new(path))?;
        if *dim.get_or_insert(t.cols) != t.cols {
            return Err(Error::Shape(format!("category {name} has dimension {}", t.cols)));
        }
        names.push(name.to_string());
        blocks.push(t.values);
    }
    let bank = PromptBank::new(names, dim.unwrap_or(0), blocks)?;
    finish(&m, &a.out, &encode_prompts(&bank))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut m = RunManifest::new("synth", a.seed);
    let cfg = SynthConfig {
        dim: a.dim,
        noise: a.noise.parse()?,
        weight_norm: a.weight_norm,
        category_count: a.categories,
        prototype_noise: a.prototype_noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let mut ds = synth_dataset(&cfg, &a.subject, a.stimuli, a.voxels, &mut stream_rng(a.seed, 0))?.dataset;
    add_shared(&mut ds, &a.shared)?;
    for (k, v) in [
        ("dim", a.dim.to_string()),
        ("stimuli", a.stimuli.to_string()),
        ("voxels", a.voxels.to_string()),
        ("noise", cfg.noise.to_string()),
        ("weight_norm", a.weight_norm.to_string()),
        ("categories", a.categories.to_string()),
        ("prototype_noise", a.prototype_noise.to_string()),
        ("subject", a.subject.clone()),
    ] {
        m.set(k, v);
    }
    if let Some(path) = &a.prompts {
        if cfg.category_count == 0 {
            return Err(Error::Config("--prompts needs --categories > 0".into()));
        }
        let bank = PromptBank::new(
            (0..cfg.category_count).map(|i| format!("cat{i}")).collect(),
            cfg.dim,
            cfg.prototypes()
                .into_iter()
                .map(|p| p.into_iter().map(|v| v as f32).collect())
                .collect(),
        )?;
        write_output(path, &encode_prompts(&bank))?;
        m.result("prompts", path.display());
    }
    finish(&m, &a.out, &encode_dataset(&ds))
}
