use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{stream_rng, Scalar};

/// Name, shape and position of one tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub attn_gain: usize,
    pub attn_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_gain: usize,
    pub ffn_bias: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

/// Canonical ordering of the parameter tensors for a config.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub(crate) input_w: usize,
    pub(crate) input_b: usize,
    pub(crate) readout: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_gain: usize,
    pub(crate) final_bias: usize,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (e, d, f, k) = (cfg.embed_dim, cfg.d_model, cfg.d_ff, cfg.readout_tokens);
        let mut specs = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| -> usize {
            let offset = total;
            total += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset });
            offset
        };
        let input_w = push("input_proj.weight".into(), vec![e + 1, d]);
        let input_b = push("input_proj.bias".into(), vec![d]);
        let readout = push("readout_tokens".into(), vec![k, d]);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerOffsets {
                    attn_gain: push(p("attn_norm.gain"), vec![d]),
                    attn_bias: push(p("attn_norm.bias"), vec![d]),
                    wq: push(p("attn.q"), vec![d, d]),
                    wk: push(p("attn.k"), vec![d, d]),
                    wv: push(p("attn.v"), vec![d, d]),
                    wo: push(p("attn.o"), vec![d, d]),
                    ffn_gain: push(p("ffn_norm.gain"), vec![d]),
                    ffn_bias: push(p("ffn_norm.bias"), vec![d]),
                    w_gate: push(p("ffn.w_gate"), vec![d, f]),
                    w_up: push(p("ffn.w_up"), vec![d, f]),
                    w_down: push(p("ffn.w_down"), vec![f, d]),
                }
            })
            .collect();
        let final_gain = push("final_norm.gain".into(), vec![d]);
        let final_bias = push("final_norm.bias".into(), vec![d]);
        let head_w = push("output_head.weight".into(), vec![d, e]);
        let head_b = push("output_head.bias".into(), vec![e]);
        ParamLayout {
            specs,
            total,
            input_w,
            input_b,
            readout,
            layers,
            final_gain,
            final_bias,
            head_w,
            head_b,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// Hypernetwork parameters as one flat buffer in canonical order.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: PartialEq> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        Ok(ModelParams {
            config: config.clone(),
            data: vec![T::ZERO; layout.total()],
            layout: Arc::new(layout),
        })
    }

    pub fn from_flat(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::Integrity(format!(
                "{} parameter values for a config needing {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.spec(name)?.range();
        Some(&mut self.data[range])
    }

    /// Zero buffer with the same layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::ZERO; self.data.len()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.data[offset..offset + len]
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Seeded initialisation.
///
/// Projection matrices are truncated normal (cut at two standard deviations)
/// with std `sqrt(2 / (fan_in + fan_out))`, readout tokens are `N(0, 0.02^2)`,
/// norm gains are 1 and every bias is 0.
pub fn init_params<T: Scalar>(cfg: &ModelConfig) -> Result<ModelParams<T>> {
    let mut params = ModelParams::<T>::zeros(cfg)?;
    let layout = Arc::clone(&params.layout);
    let mut rng = stream_rng(cfg.seed, 0x1417_0000);
    for spec in layout.specs() {
        let values = &mut params.data[spec.range()];
        let leaf = spec.name.rsplit('.').next().unwrap_or("");
        if spec.name == "readout_tokens" {
            for v in values.iter_mut() {
                *v = T::from_f64(0.02 * rng.sample::<f64, _>(StandardNormal));
            }
        } else if leaf == "gain" {
            values.fill(T::ONE);
        } else if spec.shape.len() == 2 {
            let std = (2.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
            for v in values.iter_mut() {
                *v = T::from_f64(truncated_normal(&mut rng, std));
            }
        }
    }
    Ok(params)
}
