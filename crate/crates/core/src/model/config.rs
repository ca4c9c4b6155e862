use crate::error::{Error, Result};

/// Architectural hyperparameters of the hypernetwork.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Stimulus embedding dimension `E`; also the length of the emitted weights.
    pub embed_dim: usize,
    /// Residual width `D`.
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// SwiGLU inner width.
    pub d_ff: usize,
    /// Number of learnable readout tokens `K`.
    pub readout_tokens: usize,
    /// Multiply attention logits by `ln(number of attended tokens)`.
    pub logit_scaling: bool,
    pub seed: u64,
}

/// `ceil(8 D / 3)` rounded up to a multiple of `heads`.
pub fn default_d_ff(d_model: usize, heads: usize) -> usize {
    let base = (8 * d_model).div_ceil(3);
    let h = heads.max(1);
    base.div_ceil(h) * h
}

impl ModelConfig {
    /// Full-size architecture: 20 layers, 10 heads, width 640.
    pub fn full(embed_dim: usize) -> Self {
        Self::with_shape(embed_dim, 640, 20, 10)
    }

    /// Small architecture for CPU experiments: 4 layers, 4 heads, width 64.
    pub fn desk(embed_dim: usize) -> Self {
        Self::with_shape(embed_dim, 64, 4, 4)
    }

    pub fn with_shape(embed_dim: usize, d_model: usize, layers: usize, heads: usize) -> Self {
        ModelConfig {
            embed_dim,
            d_model,
            layers,
            heads,
            d_ff: default_d_ff(d_model, heads),
            readout_tokens: 1,
            logit_scaling: true,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model={} is not divisible by heads={}",
                self.d_model, self.heads
            ));
        }
        if self.layers == 0 {
            return fail("at least one layer is required".into());
        }
        if self.readout_tokens == 0 {
            return fail("at least one readout token is required".into());
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (e, d, f, k) = (self.embed_dim, self.d_model, self.d_ff, self.readout_tokens);
        let per_layer = 2 * d + 4 * d * d + 2 * d + 3 * d * f;
        (e + 1) * d + d + k * d + self.layers * per_layer + 2 * d + d * e + e
    }

    /// `key=value` lines describing the config (checkpoint manifests, run manifests).
    pub fn to_entries(&self) -> Vec<(String, String)> {
        vec![
            ("model.embed_dim".into(), self.embed_dim.to_string()),
            ("model.d_model".into(), self.d_model.to_string()),
            ("model.layers".into(), self.layers.to_string()),
            ("model.heads".into(), self.heads.to_string()),
            ("model.d_ff".into(), self.d_ff.to_string()),
            ("model.readout_tokens".into(), self.readout_tokens.to_string()),
            ("model.logit_scaling".into(), (self.logit_scaling as u8).to_string()),
            ("model.seed".into(), self.seed.to_string()),
        ]
    }

    /// Inverse of [`ModelConfig::to_entries`]; missing keys are an error.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            entries
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("model config key {key} missing")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("model config key {key} is not an integer")))
        };
        let cfg = ModelConfig {
            embed_dim: num("model.embed_dim")? as usize,
            d_model: num("model.d_model")? as usize,
            layers: num("model.layers")? as usize,
            heads: num("model.heads")? as usize,
            d_ff: num("model.d_ff")? as usize,
            readout_tokens: num("model.readout_tokens")? as usize,
            logit_scaling: match get("model.logit_scaling")? {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::Format(format!("model.logit_scaling={other:?}"))),
            },
            seed: num("model.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_ff_rounding() {
        assert_eq!(default_d_ff(640, 10), 1710);
        assert_eq!(default_d_ff(64, 4), 172);
        assert_eq!(default_d_ff(32, 4), 88);
    }

    #[test]
    fn full_size_count_near_reported_total() {
        let n = ModelConfig::full(512).param_count() as f64;
        assert!((n / 97.2e6 - 1.0).abs() < 0.03, "{n}");
    }

    #[test]
    fn divisibility_is_checked() {
        let mut cfg = ModelConfig::with_shape(8, 33, 2, 10);
        assert!(cfg.validate().is_err());
        cfg.d_model = 40;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn entries_round_trip() {
        let cfg = ModelConfig { seed: 11, logit_scaling: false, ..ModelConfig::desk(16) };
        assert_eq!(ModelConfig::from_entries(&cfg.to_entries()).unwrap(), cfg);
    }
}
