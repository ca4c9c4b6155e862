//! Run config files: training keys plus `model.*` and `synth.*` namespaces.

use crate::data::{NoiseLevel, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{default_d_ff, ModelConfig};
use crate::train::{parse_key_values, Stage, TrainConfig};

/// A parsed config file, split by namespace.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    model: Vec<(String, String)>,
    synth: Vec<(String, String)>,
}

impl RunConfig {
    /// Parses `text` for a command that runs `expected`. A `stage` line naming
    /// another stage is rejected.
    pub fn parse(text: &str, expected: Stage) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let mut model = Vec::new();
        let mut synth = Vec::new();
        let mut train_pairs = Vec::new();
        for (k, v) in pairs {
            if let Some(rest) = k.strip_prefix("model.") {
                model.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("synth.") {
                synth.push((rest.to_string(), v));
            } else {
                train_pairs.push((k, v));
            }
        }
        let stage = match train_pairs.iter().find(|(k, _)| k == "stage") {
            Some((_, v)) => v.parse::<Stage>()?,
            None => expected,
        };
        if stage != expected {
            return Err(Error::Config(format!(
                "config field `stage` is {stage} but this command runs the {expected} stage"
            )));
        }
        let mut train = TrainConfig::new(stage);
        for (k, v) in &train_pairs {
            train.set(k, v)?;
        }
        train.validate()?;
        if expected == Stage::Finetune && !synth.is_empty() {
            return Err(Error::Config("synth.* keys have no effect when finetuning on recorded data".into()));
        }
        Ok(RunConfig { train, model, synth })
    }

    /// Synthetic task generator; `dim` defaults to `default_dim`.
    pub fn synth(&self, default_dim: usize) -> Result<SynthConfig> {
        let mut cfg = SynthConfig {
            dim: default_dim,
            ..SynthConfig::default()
        };
        for (k, v) in &self.synth {
            let bad = || Error::Config(format!("synth.{k}: cannot parse {v:?}"));
            match k.as_str() {
                "dim" => cfg.dim = v.parse().map_err(|_| bad())?,
                "noise" => cfg.noise = v.parse::<NoiseLevel>()?,
                "weight_norm" => cfg.weight_norm = v.parse().map_err(|_| bad())?,
                "category_count" => cfg.category_count = v.parse().map_err(|_| bad())?,
                "prototype_noise" => cfg.prototype_noise = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown config key synth.{k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Value of `synth.dim`, if set.
    pub fn synth_dim(&self) -> Result<Option<usize>> {
        self.synth
            .iter()
            .find(|(k, _)| k == "dim")
            .map(|(_, v)| v.parse().map_err(|_| Error::Config(format!("synth.dim: cannot parse {v:?}"))))
            .transpose()
    }

    /// Applies the `model.*` keys on top of `base`. When the width or head
    /// count changes and `d_ff` is not given, `d_ff` follows the default rule.
    pub fn model(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        let mut explicit_ff = false;
        let mut reshaped = false;
        for (k, v) in &self.model {
            let bad = || Error::Config(format!("model.{k}: cannot parse {v:?}"));
            let n = || v.parse::<usize>().map_err(|_| bad());
            match k.as_str() {
                "embed_dim" => cfg.embed_dim = n()?,
                "d_model" => {
                    cfg.d_model = n()?;
                    reshaped = true;
                }
                "layers" => cfg.layers = n()?,
                "heads" => {
                    cfg.heads = n()?;
                    reshaped = true;
                }
                "d_ff" => {
                    cfg.d_ff = n()?;
                    explicit_ff = true;
                }
                "readout_tokens" => cfg.readout_tokens = n()?,
                "logit_scaling" => {
                    cfg.logit_scaling = match v.as_str() {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        _ => return Err(bad()),
                    }
                }
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown config key model.{k}"))),
            }
        }
        if reshaped && !explicit_ff {
            cfg.d_ff = default_d_ff(cfg.d_model, cfg.heads);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that the `model.*` keys agree with an existing checkpoint.
    pub fn check_model(&self, existing: &ModelConfig) -> Result<()> {
        let requested = self.model(existing)?;
        if &requested != existing {
            let want = requested.to_entries();
            let have = existing.to_entries();
            let diff: Vec<String> = want
                .iter()
                .zip(&have)
                .filter(|(a, b)| a.1 != b.1)
                .map(|(a, b)| format!("{}={} (checkpoint has {})", a.0, a.1, b.1))
                .collect();
            return Err(Error::Config(format!(
                "config is incompatible with the initial checkpoint: {}",
                diff.join(", ")
            )));
        }
        Ok(())
    }

    /// Resolved `key=value` entries for run manifests, defaults included.
    pub fn entries(&self, model: &ModelConfig, synth: Option<&SynthConfig>) -> Vec<(String, String)> {
        let mut out = self.train.to_entries();
        out.extend(model.to_entries());
        if let Some(s) = synth {
            out.extend([
                ("synth.dim".to_string(), s.dim.to_string()),
                ("synth.noise".to_string(), s.noise.to_string()),
                ("synth.weight_norm".to_string(), s.weight_norm.to_string()),
                ("synth.category_count".to_string(), s.category_count.to_string()),
                ("synth.prototype_noise".to_string(), s.prototype_noise.to_string()),
                ("synth.seed".to_string(), s.seed.to_string()),
            ]);
        }
        out
    }
}
