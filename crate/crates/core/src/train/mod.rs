//! Three-stage training curriculum: synthetic pretraining at a fixed context
//! size, context extension over a range of sizes, and finetuning on recorded
//! voxel responses.

mod checkpoint;
mod config;
mod optim;

use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC as CHECKPOINT_MAGIC,
};
pub use config::{parse_key_values, ContextLaw, PlateauConfig, Stage, TrainConfig};
pub use optim::{AdamW, Plateau, BETA1, BETA2, EPSILON};

use crate::data::{
    draw_task, query_from_indices, sample_indices, support_from_indices, SynthConfig, Task, TaskBatch, VoxelDataset,
};
use crate::error::{Error, Result};
use crate::model::{loss, loss_and_grad, ModelParams};
use crate::tensor::stream_rng;

const SAMPLE_STREAM: u64 = 0x7a11_0001;
const VALIDATION_STREAM: u64 = 0x7a11_0002;
const SPLIT_STREAM: u64 = 0x7a11_0003;

/// Voxel responses usable for finetuning: a dataset and the stimuli that may
/// appear in training tasks (held-out test stimuli excluded by the caller).
#[derive(Debug, Clone, Copy)]
pub struct TrainSubject<'a> {
    pub dataset: &'a VoxelDataset,
    pub stimuli: &'a [usize],
}

#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    Synthetic(&'a SynthConfig),
    Voxels(&'a [TrainSubject<'a>]),
}

/// Optimizer, schedule and early-stopping state for one stage.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub optimizer: AdamW<f32>,
    pub schedule: Plateau,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>, cfg: &TrainConfig) -> Self {
        TrainState {
            optimizer: AdamW::new(params.len()),
            params,
            schedule: Plateau::new(cfg.plateau, cfg.lr_init, cfg.lr_floor),
            epoch: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    /// AdamW step; a non-finite gradient aborts with the offending tensor named.
    pub fn optimizer_step(&mut self, grads: &ModelParams<f32>, lr: f64, wd: f64) -> Result<()> {
        let layout = self.params.layout().clone();
        self.optimizer
            .step(self.params.as_mut_slice(), grads.as_slice(), lr, wd)
            .map_err(|e| match e {
                Error::Numeric(_) => {
                    let bad = grads.as_slice().iter().position(|g| !g.is_finite()).unwrap_or(0);
                    let name = layout
                        .specs()
                        .iter()
                        .find(|s| s.range().contains(&bad))
                        .map(|s| s.name.as_str())
                        .unwrap_or("?");
                    Error::Aborted(format!(
                        "non-finite gradient in {name} at step {} (epoch {}, lr {})",
                        self.optimizer.step + 1,
                        self.epoch,
                        lr
                    ))
                }
                other => other,
            })
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={} val_loss={} lr={}",
            self.epoch, self.train_loss, self.val_loss, self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    /// Best-validation parameters with run metadata.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Context sizes drawn for training batches, in order.
    pub context_sizes: Vec<usize>,
}

/// Produces training batches and the fixed validation set for a stage.
enum Sampler<'a> {
    Synthetic {
        cfg: &'a SynthConfig,
        prototypes: Vec<Vec<f64>>,
    },
    Voxels {
        subjects: &'a [TrainSubject<'a>],
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
    },
}

impl<'a> Sampler<'a> {
    fn new(cfg: &TrainConfig, source: DataSource<'a>) -> Result<Self> {
        match source {
            DataSource::Synthetic(s) => {
                s.validate()?;
                Ok(Sampler::Synthetic {
                    cfg: s,
                    prototypes: s.prototypes(),
                })
            }
            DataSource::Voxels(subjects) => {
                let needed = cfg.context_law.max() + cfg.queries_per_task;
                let mut pool = Vec::new();
                for (si, sub) in subjects.iter().enumerate() {
                    if sub.stimuli.len() < needed {
                        return Err(Error::InsufficientStimuli {
                            needed,
                            available: sub.stimuli.len(),
                        });
                    }
                    if let Some(&bad) = sub.stimuli.iter().find(|&&i| i >= sub.dataset.num_stimuli()) {
                        return Err(Error::Shape(format!("training stimulus {bad} out of range")));
                    }
                    pool.extend((0..sub.dataset.num_voxels()).map(|v| (si, v)));
                }
                if pool.len() < 2 {
                    return Err(Error::InsufficientData(format!(
                        "finetuning needs at least 2 voxels, got {}",
                        pool.len()
                    )));
                }
                pool.shuffle(&mut stream_rng(cfg.seed, SPLIT_STREAM));
                let n_val = ((pool.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, pool.len() - 1);
                let mut val = pool.split_off(pool.len() - n_val);
                val.sort_unstable();
                pool.sort_unstable();
                Ok(Sampler::Voxels {
                    subjects,
                    train: pool,
                    val,
                })
            }
        }
    }

    fn embed_dim(&self) -> usize {
        match self {
            Sampler::Synthetic { cfg, .. } => cfg.dim,
            Sampler::Voxels { subjects, .. } => subjects[0].dataset.embedding_dim(),
        }
    }

    fn voxel_task(subjects: &[TrainSubject<'_>], unit: (usize, usize), p: usize, q: usize, rng: &mut ChaCha8Rng) -> Result<Task> {
        let sub = &subjects[unit.0];
        let (s_idx, q_idx) = sample_indices(sub.stimuli.len(), p, q, rng)?;
        let map = |idx: Vec<usize>| idx.into_iter().map(|i| sub.stimuli[i]).collect::<Vec<_>>();
        Ok(Task {
            support: support_from_indices(sub.dataset, unit.1, &map(s_idx))?,
            query: query_from_indices(sub.dataset, unit.1, &map(q_idx))?,
        })
    }

    /// Training batches for one epoch, built lazily by the caller through `batch`.
    fn epoch_plan(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize)>> {
        match self {
            Sampler::Synthetic { .. } => vec![Vec::new(); cfg.batches_per_epoch],
            Sampler::Voxels { train, .. } => {
                let mut order = train.clone();
                order.shuffle(rng);
                order.chunks(cfg.batch_size).map(<[_]>::to_vec).collect()
            }
        }
    }

    fn batch(&self, cfg: &TrainConfig, units: &[(usize, usize)], p: usize, rng: &mut ChaCha8Rng) -> Result<TaskBatch> {
        let q = cfg.queries_per_task;
        let tasks = match self {
            Sampler::Synthetic { cfg: s, prototypes } => (0..cfg.batch_size)
                .map(|_| {
                    let t = draw_task(s, prototypes, p, q, rng);
                    Task {
                        support: t.support,
                        query: t.query,
                    }
                })
                .collect(),
            Sampler::Voxels { subjects, .. } => units
                .iter()
                .map(|&u| Self::voxel_task(subjects, u, p, q, rng))
                .collect::<Result<Vec<_>>>()?,
        };
        TaskBatch::new(tasks)
    }

    /// Fixed validation batches, drawn once from their own stream.
    fn validation(&self, cfg: &TrainConfig) -> Result<Vec<TaskBatch>> {
        let mut rng = stream_rng(cfg.seed, VALIDATION_STREAM);
        match self {
            Sampler::Synthetic { .. } => {
                let ratio = cfg.val_fraction / (1.0 - cfg.val_fraction);
                let n = ((cfg.batches_per_epoch as f64 * ratio).round() as usize).max(1);
                (0..n)
                    .map(|_| {
                        let p = cfg.context_law.sample(&mut rng);
                        self.batch(cfg, &[], p, &mut rng)
                    })
                    .collect()
            }
            Sampler::Voxels { val, .. } => val
                .chunks(cfg.batch_size)
                .map(|chunk| {
                    let p = cfg.context_law.sample(&mut rng);
                    self.batch(cfg, chunk, p, &mut rng)
                })
                .collect(),
        }
    }
}

fn check_source(cfg: &TrainConfig, source: &DataSource<'_>) -> Result<()> {
    match (cfg.stage, source) {
        (Stage::Pretrain | Stage::Extend, DataSource::Synthetic(_)) => Ok(()),
        (Stage::Finetune, DataSource::Voxels(subjects)) => {
            let first = subjects
                .first()
                .ok_or_else(|| Error::Config("finetuning needs at least one dataset".into()))?;
            let e = first.dataset.embedding_dim();
            if subjects.iter().any(|s| s.dataset.embedding_dim() != e) {
                return Err(Error::Config("finetuning datasets disagree on embedding dimension".into()));
            }
            Ok(())
        }
        (stage, _) => Err(Error::Config(format!(
            "stage {stage} cannot train on this data source (pretrain/extend use synthetic tasks, finetune uses voxel datasets)"
        ))),
    }
}

/// Weighted mean validation loss over the fixed validation batches.
fn validation_loss(params: &ModelParams<f32>, batches: &[TaskBatch]) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for b in batches {
        let w = (b.len() * b.query_size()) as f64;
        total += loss(params, b)? * w;
        weight += w;
    }
    Ok(total / weight)
}

/// Runs one curriculum stage and returns the best-validation checkpoint.
///
/// `on_epoch` receives every progress line as it is produced. With
/// `max_epochs == 0` the initial checkpoint is returned unchanged.
pub fn run_stage(
    cfg: &TrainConfig,
    source: DataSource<'_>,
    init: Checkpoint,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageOutcome> {
    cfg.validate()?;
    check_source(cfg, &source)?;
    let sampler = Sampler::new(cfg, source)?;
    if sampler.embed_dim() != init.config().embed_dim {
        return Err(Error::Config(format!(
            "checkpoint expects embeddings of dimension {} but the data has {}",
            init.config().embed_dim,
            sampler.embed_dim()
        )));
    }
    if cfg.max_epochs == 0 {
        return Ok(StageOutcome {
            checkpoint: init,
            history: Vec::new(),
            best_epoch: None,
            stopped_early: false,
            context_sizes: Vec::new(),
        });
    }

    let val_batches = sampler.validation(cfg)?;
    let mut rng = stream_rng(cfg.seed, SAMPLE_STREAM);
    let mut state = TrainState::new(init.params.clone(), cfg);
    let mut best = init.params.clone();
    let mut best_epoch = None;
    let mut history = Vec::new();
    let mut context_sizes = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let lr = state.lr();
        let mut train_total = 0.0;
        let mut train_weight = 0.0;
        for units in sampler.epoch_plan(cfg, &mut rng) {
            let p = cfg.context_law.sample(&mut rng);
            context_sizes.push(p);
            let batch = sampler.batch(cfg, &units, p, &mut rng)?;
            let (batch_loss, grads) = loss_and_grad(&state.params, &batch).map_err(|e| abort_context(e, epoch))?;
            if !batch_loss.is_finite() {
                return Err(Error::Aborted(format!("training loss became {batch_loss} in epoch {epoch}")));
            }
            state.optimizer_step(&grads, lr, cfg.weight_decay)?;
            let w = (batch.len() * batch.query_size()) as f64;
            train_total += batch_loss * w;
            train_weight += w;
        }
        let val_loss = validation_loss(&state.params, &val_batches).map_err(|e| abort_context(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Aborted(format!(
                "validation loss is {val_loss} after epoch {epoch} (lr {lr}, train loss {})",
                train_total / train_weight
            )));
        }
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.epochs_since_improvement = 0;
            best.as_mut_slice().copy_from_slice(state.params.as_slice());
            best_epoch = Some(epoch);
        } else {
            state.epochs_since_improvement += 1;
        }
        state.schedule.observe(val_loss);
        let log = EpochLog {
            epoch,
            train_loss: train_total / train_weight,
            val_loss,
            lr,
        };
        on_epoch(&log);
        history.push(log);
        if state.epochs_since_improvement >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let mut checkpoint = Checkpoint {
        params: best,
        metadata: init.metadata,
    };
    checkpoint.set_meta("stage", cfg.stage.to_string());
    checkpoint.set_meta("epochs_run", history.len().to_string());
    if let Some(e) = best_epoch {
        checkpoint.set_meta("best_epoch", e.to_string());
        checkpoint.set_meta("best_val_loss", state.best_val_loss.to_string());
    }
    Ok(StageOutcome {
        checkpoint,
        history,
        best_epoch,
        stopped_early,
        context_sizes,
    })
}

fn abort_context(e: Error, epoch: usize) -> Error {
    match e {
        Error::NumericOverflow { layer } => {
            Error::Aborted(format!("non-finite activations in layer {layer} during epoch {epoch}"))
        }
        other => other,
    }
}
