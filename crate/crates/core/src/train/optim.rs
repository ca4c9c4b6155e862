use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::config::PlateauConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// AdamW moments for a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(len: usize) -> Self {
        AdamW {
            first: vec![T::ZERO; len],
            second: vec![T::ZERO; len],
            step: 0,
        }
    }

    /// One AdamW step with decoupled decay:
    /// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
    ///
    /// Non-finite gradients leave both parameters and moments untouched and
    /// return an error naming the first offending index.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64, wd: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments but got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter index {i} (step {})",
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let g = g.to_f64();
            let mn = BETA1 * m.to_f64() + (1.0 - BETA1) * g;
            let vn = BETA2 * v.to_f64() + (1.0 - BETA2) * g * g;
            *m = T::from_f64(mn);
            *v = T::from_f64(vn);
            let theta = p.to_f64();
            let update = (mn / c1) / ((vn / c2).sqrt() + EPSILON) + wd * theta;
            *p = T::from_f64(theta - lr * update);
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule in `min` mode with a relative
/// improvement threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub floor: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub cooldown_left: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig, lr: f64, floor: f64) -> Self {
        Plateau {
            config,
            lr,
            floor,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        }
    }

    /// Feeds one validation loss and returns the learning rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best * (1.0 - self.config.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.config.patience {
            self.lr = (self.lr * self.config.factor).max(self.floor);
            self.cooldown_left = self.config.cooldown;
            self.bad_epochs = 0;
        }
        self.lr
    }

    pub fn at_floor(&self) -> bool {
        self.lr <= self.floor
    }
}
