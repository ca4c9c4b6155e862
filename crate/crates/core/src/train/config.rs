use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Extend,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Extend => "extend",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "extend" => Ok(Stage::Extend),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

/// Distribution of the context size `p` (one draw per batch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextLaw {
    Fixed(usize),
    /// Inclusive bounds.
    Uniform(usize, usize),
}

impl ContextLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            ContextLaw::Fixed(p) => p,
            ContextLaw::Uniform(lo, hi) => rng.random_range(lo..=hi),
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            ContextLaw::Fixed(p) => p,
            ContextLaw::Uniform(_, hi) => hi,
        }
    }

    pub fn min(&self) -> usize {
        match *self {
            ContextLaw::Fixed(p) => p,
            ContextLaw::Uniform(lo, _) => lo,
        }
    }
}

impl fmt::Display for ContextLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextLaw::Fixed(p) => write!(f, "fixed({p})"),
            ContextLaw::Uniform(lo, hi) => write!(f, "uniform({lo},{hi})"),
        }
    }
}

impl FromStr for ContextLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid context law {s:?} (expected fixed(p) or uniform(lo,hi))"));
        let s = s.trim();
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<usize> = args
            .split(',')
            .map(|a| a.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name.trim(), nums.as_slice()) {
            ("fixed", [p]) => Ok(ContextLaw::Fixed(*p)),
            ("uniform", [lo, hi]) => Ok(ContextLaw::Uniform(*lo, *hi)),
            _ => Err(bad()),
        }
    }
}

/// Reduce-on-plateau settings (threshold is relative, as in `min` mode with
/// relative thresholding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub cooldown: usize,
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.1,
            patience: 5,
            cooldown: 2,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub queries_per_task: usize,
    pub context_law: ContextLaw,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub plateau: PlateauConfig,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    /// Batches per epoch for streamed (synthetic) data.
    pub batches_per_epoch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        let context_law = match stage {
            Stage::Pretrain => ContextLaw::Fixed(500),
            Stage::Extend | Stage::Finetune => ContextLaw::Uniform(30, 500),
        };
        TrainConfig {
            stage,
            batch_size: 80,
            queries_per_task: 100,
            context_law,
            lr_init: 1e-3,
            lr_floor: 1e-5,
            weight_decay: 1e-4,
            plateau: PlateauConfig::default(),
            max_epochs: 100,
            early_stop_patience: 5,
            val_fraction: 0.2,
            batches_per_epoch: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init) {
            return fail("need 0 < lr_floor <= lr_init");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must lie in (0, 1)");
        }
        if let ContextLaw::Uniform(lo, hi) = self.context_law {
            if lo > hi {
                return fail("context_law lower bound exceeds upper bound");
            }
        }
        if self.context_law.min() == 0 {
            return fail("context sizes must be positive");
        }
        if self.batch_size == 0 || self.queries_per_task == 0 || self.batches_per_epoch == 0 {
            return fail("batch_size, queries_per_task and batches_per_epoch must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be nonnegative");
        }
        let pl = &self.plateau;
        if !(pl.factor > 0.0 && pl.factor < 1.0) || pl.threshold < 0.0 {
            return fail("plateau factor must lie in (0, 1) and threshold be nonnegative");
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "stage" => self.stage = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "queries_per_task" => self.queries_per_task = num(key, value)?,
            "context_law" => self.context_law = value.parse()?,
            "lr_init" => self.lr_init = num(key, value)?,
            "lr_floor" => self.lr_floor = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "plateau_factor" => self.plateau.factor = num(key, value)?,
            "plateau_patience" => self.plateau.patience = num(key, value)?,
            "plateau_cooldown" => self.plateau.cooldown = num(key, value)?,
            "plateau_threshold" => self.plateau.threshold = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "early_stop_patience" => self.early_stop_patience = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown training config key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `key=value` pairs, defaults included.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let pl = &self.plateau;
        [
            ("stage", self.stage.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("queries_per_task", self.queries_per_task.to_string()),
            ("context_law", self.context_law.to_string()),
            ("lr_init", self.lr_init.to_string()),
            ("lr_floor", self.lr_floor.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("plateau_factor", pl.factor.to_string()),
            ("plateau_patience", pl.patience.to_string()),
            ("plateau_cooldown", pl.cooldown.to_string()),
            ("plateau_threshold", pl.threshold.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("batches_per_epoch", self.batches_per_epoch.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Parses a config file body. The `stage` key is required and is applied
    /// first, so stage-dependent defaults can be overridden by later lines.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let stage = pairs
            .iter()
            .find(|(k, _)| k == "stage")
            .ok_or_else(|| Error::Config("training config must set `stage`".into()))?
            .1
            .parse()?;
        let mut cfg = TrainConfig::new(stage);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if out.iter().any(|(existing, _)| existing == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
