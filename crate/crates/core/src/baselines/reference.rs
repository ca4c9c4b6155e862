use crate::error::{Error, Result};
use crate::train::{AdamW, Plateau, PlateauConfig};

/// Optimizer settings for the gradient-trained linear reference.
///
/// The objective is `mean((X w - y)^2) + l2 * |w|^2`, whose minimizer is the
/// ridge solution with penalty `n * l2` for `n` rows. `weight_decay` is the
/// optimizer's decoupled decay and is not ridge-equivalent; keep it at zero
/// when an exact closed-form match is wanted.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    pub lr_init: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub l2: f64,
    pub plateau: PlateauConfig,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            lr_init: 1e-2,
            lr_floor: 1e-7,
            weight_decay: 0.0,
            l2: 0.0,
            plateau: PlateauConfig {
                patience: 2,
                cooldown: 0,
                ..PlateauConfig::default()
            },
            steps_per_epoch: 100,
            max_epochs: 2000,
            early_stop_patience: 5,
        }
    }
}

impl ReferenceConfig {
    /// Ridge penalty whose closed form shares this objective's minimizer.
    pub fn equivalent_lambda(&self, rows: usize) -> f64 {
        rows as f64 * self.l2
    }
}

/// Sufficient statistics `X^T X`, `X^T y`, `y^T y` of a least-squares problem.
struct Gram {
    dim: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    rows: f64,
}

impl Gram {
    fn new(x: &[f64], y: &[f64], dim: usize) -> Self {
        let mut xtx = vec![0.0; dim * dim];
        let mut xty = vec![0.0; dim];
        for (row, &t) in x.chunks_exact(dim).zip(y) {
            for i in 0..dim {
                xty[i] += row[i] * t;
                for j in 0..dim {
                    xtx[i * dim + j] += row[i] * row[j];
                }
            }
        }
        Gram {
            dim,
            xtx,
            xty,
            yty: y.iter().map(|t| t * t).sum(),
            rows: y.len() as f64,
        }
    }

    /// Objective and gradient at `w`.
    fn eval(&self, w: &[f64], l2: f64, grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..d {
            let gw: f64 = (0..d).map(|j| self.xtx[i * d + j] * w[j]).sum();
            quad += w[i] * gw;
            lin += w[i] * self.xty[i];
            grad[i] = 2.0 * (gw - self.xty[i]) / self.rows + 2.0 * l2 * w[i];
        }
        let penalty: f64 = w.iter().map(|v| v * v).sum::<f64>() * l2;
        (quad - 2.0 * lin + self.yty) / self.rows + penalty
    }
}

/// Linear encoder fitted by full-batch AdamW with the reduce-on-plateau
/// schedule, starting from zero. Training ends once the learning rate sits at
/// its floor and the objective has stopped improving, or after `max_epochs`.
pub fn reference_fit(x: &[f64], y: &[f64], dim: usize, rc: &ReferenceConfig) -> Result<Vec<f64>> {
    if dim == 0 || x.len() != y.len() * dim || y.is_empty() {
        return Err(Error::Shape(format!("{} values and {} targets do not match dimension {dim}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("reference fit inputs are not finite".into()));
    }
    if !(rc.lr_floor > 0.0 && rc.lr_floor <= rc.lr_init) || rc.steps_per_epoch == 0 || rc.l2 < 0.0 {
        return Err(Error::Config("invalid reference fit configuration".into()));
    }
    let gram = Gram::new(x, y, dim);
    let mut w = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut opt = AdamW::<f64>::new(dim);
    let mut schedule = Plateau::new(rc.plateau, rc.lr_init, rc.lr_floor);
    let initial = gram.eval(&w, rc.l2, &mut grad);
    let mut best = f64::INFINITY;
    let mut best_w = w.clone();
    let mut stale = 0;

    for _ in 0..rc.max_epochs {
        let lr = schedule.lr;
        for _ in 0..rc.steps_per_epoch {
            gram.eval(&w, rc.l2, &mut grad);
            opt.step(&mut w, &grad, lr, rc.weight_decay)?;
        }
        let obj = gram.eval(&w, rc.l2, &mut grad);
        if !obj.is_finite() || obj > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Aborted(format!(
                "reference fit diverged: objective {obj} against initial {initial}"
            )));
        }
        if obj < best {
            best = obj;
            best_w.copy_from_slice(&w);
            stale = 0;
        } else {
            stale += 1;
        }
        schedule.observe(obj);
        if schedule.at_floor() && stale >= rc.early_stop_patience {
            break;
        }
    }
    Ok(best_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{ols_fit, ridge_fit};
    use crate::tensor::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    fn problem(rows: usize, dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 3);
        let x: Vec<f64> = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .chunks_exact(dim)
            .map(|r| r.iter().enumerate().map(|(i, v)| v * (i as f64 - 1.5)).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    #[test]
    fn identity_design() {
        let w = reference_fit(&[1., 0., 0., 1.], &[2., 3.], 2, &ReferenceConfig::default()).unwrap();
        assert!(rel(&w, &[2., 3.]) < 1e-3);
    }

    #[test]
    fn matches_least_squares_without_penalty() {
        let (x, y) = problem(60, 4, 1);
        let w = reference_fit(&x, &y, 4, &ReferenceConfig::default()).unwrap();
        assert!(rel(&w, &ols_fit(&x, &y, 4).unwrap()) < 1e-3);
    }

    #[test]
    fn matches_ridge_with_equivalent_penalty() {
        let (x, y) = problem(50, 5, 2);
        let rc = ReferenceConfig { l2: 0.05, ..ReferenceConfig::default() };
        let w = reference_fit(&x, &y, 5, &rc).unwrap();
        let oracle = ridge_fit(&x, &y, 5, rc.equivalent_lambda(50)).unwrap();
        assert!(rel(&w, &oracle) < 1e-3);
    }

    #[test]
    fn deterministic() {
        let (x, y) = problem(30, 3, 3);
        let rc = ReferenceConfig::default();
        assert_eq!(reference_fit(&x, &y, 3, &rc).unwrap(), reference_fit(&x, &y, 3, &rc).unwrap());
    }

    #[test]
    fn divergence_aborts() {
        let (x, y) = problem(30, 3, 4);
        let rc = ReferenceConfig { lr_init: 1e6, lr_floor: 1e6, ..ReferenceConfig::default() };
        assert!(matches!(reference_fit(&x, &y, 3, &rc), Err(Error::Aborted(_))));
    }
}
