use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::stream_rng;

const FOLD_STREAM: u64 = 0xf01d_0000;

/// Thin SVD of a row-major `[rows x cols]` design.
pub(crate) struct Factor {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl Factor {
    pub(crate) fn new(x: &[f64], rows: usize, cols: usize) -> Result<Self> {
        if x.len() != rows * cols {
            return Err(Error::Shape(format!("{} values do not form a {rows}x{cols} design", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("design matrix has non-finite entries".into()));
        }
        let svd = DMatrix::from_row_slice(rows, cols, x).svd(true, true);
        Ok(Factor {
            u: svd.u.expect("requested U"),
            s: svd.singular_values,
            v: svd.v_t.expect("requested V^T").transpose(),
        })
    }

    fn project(&self, y: &[f64]) -> DVector<f64> {
        self.u.tr_mul(&DVector::from_column_slice(y))
    }

    /// `V diag(shrink) U^T y` for precomputed `uty = U^T y`.
    fn solve(&self, uty: &DVector<f64>, shrink: impl Fn(f64) -> f64) -> Vec<f64> {
        let coef = DVector::from_iterator(uty.len(), uty.iter().zip(self.s.iter()).map(|(&a, &s)| a * shrink(s)));
        (&self.v * coef).as_slice().to_vec()
    }

    fn ridge(&self, uty: &DVector<f64>, lambda: f64) -> Vec<f64> {
        self.solve(uty, |s| s / (s * s + lambda))
    }

    fn pinv(&self, uty: &DVector<f64>, rows: usize, cols: usize) -> Vec<f64> {
        let smax = self.s.iter().cloned().fold(0.0, f64::max);
        let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
        self.solve(uty, |s| if s > tol { 1.0 / s } else { 0.0 })
    }
}

fn check_targets(y: &[f64], rows: usize) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Shape(format!("{} targets for {rows} rows", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("targets have non-finite entries".into()));
    }
    Ok(())
}

fn rows_of(x: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || x.len() % dim != 0 || x.is_empty() {
        return Err(Error::Shape(format!("{} values do not form rows of {dim}", x.len())));
    }
    Ok(x.len() / dim)
}

/// Minimum-norm least squares via the pseudoinverse. `x` is row-major `[p x dim]`.
pub fn ols_fit(x: &[f64], y: &[f64], dim: usize) -> Result<Vec<f64>> {
    let p = rows_of(x, dim)?;
    check_targets(y, p)?;
    let f = Factor::new(x, p, dim)?;
    Ok(f.pinv(&f.project(y), p, dim))
}

/// `(X^T X + lambda I)^{-1} X^T y` through the SVD of `X`.
pub fn ridge_fit(x: &[f64], y: &[f64], dim: usize, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge penalty must be positive, got {lambda}")));
    }
    let p = rows_of(x, dim)?;
    check_targets(y, p)?;
    let f = Factor::new(x, p, dim)?;
    Ok(f.ridge(&f.project(y), lambda))
}

/// Penalty grid and fold count for cross-validated ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeGrid {
    pub lambdas: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeGrid {
    fn default() -> Self {
        RidgeGrid {
            lambdas: (-3..=8).map(|k| 10f64.powi(k)).collect(),
            folds: 5,
        }
    }
}

impl RidgeGrid {
    pub fn new(lambdas: Vec<f64>, folds: usize) -> Result<Self> {
        let g = RidgeGrid { lambdas, folds };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("ridge grid must hold positive finite penalties".into()));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ridge grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCv {
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// `[folds x lambdas]` validation MSE.
    pub fold_errors: Vec<Vec<f64>>,
}

impl RidgeCv {
    /// Mean validation error per penalty.
    pub fn mean_errors(&self) -> Vec<f64> {
        mean_over_folds(&self.fold_errors)
    }
}

fn mean_over_folds(table: &[Vec<f64>]) -> Vec<f64> {
    let n = table[0].len();
    (0..n)
        .map(|j| table.iter().map(|row| row[j]).sum::<f64>() / table.len() as f64)
        .collect()
}

/// First index of the minimum, so ties go to the smallest penalty.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Seeded partition of `0..n` into `folds` groups whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, FOLD_STREAM));
    let mut out = vec![Vec::new(); folds];
    for (i, idx) in order.into_iter().enumerate() {
        out[i % folds].push(idx);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

struct FoldFactor {
    train: Vec<usize>,
    factor: Factor,
    /// `X_val V` for cheap validation predictions.
    xv: DMatrix<f64>,
}

/// Cross-validated ridge for many targets sharing one design (voxels that
/// saw the same stimuli). Factorizations are computed once per fold and the
/// fold partition is shared, so each column's result equals a standalone
/// [`ridge_cv`] call with the same seed.
pub fn ridge_cv_multi(x: &[f64], ys: &[Vec<f64>], dim: usize, grid: &RidgeGrid, seed: u64) -> Result<Vec<RidgeCv>> {
    grid.validate()?;
    let p = rows_of(x, dim)?;
    if p < grid.folds {
        return Err(Error::InsufficientData(format!(
            "{p} samples cannot be split into {} folds",
            grid.folds
        )));
    }
    for y in ys {
        check_targets(y, p)?;
    }
    let folds = fold_assignment(p, grid.folds, seed);
    let gather = |rows: &[usize]| -> Vec<f64> { rows.iter().flat_map(|&r| x[r * dim..(r + 1) * dim].iter().copied()).collect() };
    let factors = folds
        .iter()
        .map(|val| {
            let train: Vec<usize> = (0..p).filter(|i| val.binary_search(i).is_err()).collect();
            let factor = Factor::new(&gather(&train), train.len(), dim)?;
            let xv = DMatrix::from_row_slice(val.len(), dim, &gather(val)) * &factor.v;
            Ok(FoldFactor { train, factor, xv })
        })
        .collect::<Result<Vec<_>>>()?;
    let full = Factor::new(x, p, dim)?;

    ys.par_iter()
        .map(|y| {
            let fold_errors: Vec<Vec<f64>> = folds
                .iter()
                .zip(&factors)
                .map(|(val, ff)| {
                    let y_tr: Vec<f64> = ff.train.iter().map(|&i| y[i]).collect();
                    let uty = ff.factor.project(&y_tr);
                    grid.lambdas
                        .iter()
                        .map(|&lambda| {
                            let coef = DVector::from_iterator(
                                uty.len(),
                                uty.iter().zip(ff.factor.s.iter()).map(|(&a, &s)| a * s / (s * s + lambda)),
                            );
                            let pred = &ff.xv * coef;
                            let sse: f64 = val.iter().zip(pred.iter()).map(|(&i, &yh)| (y[i] - yh).powi(2)).sum();
                            sse / val.len() as f64
                        })
                        .collect()
                })
                .collect();
            let best = argmin(&mean_over_folds(&fold_errors));
            let lambda = grid.lambdas[best];
            Ok(RidgeCv {
                weights: full.ridge(&full.project(y), lambda),
                lambda,
                fold_errors,
            })
        })
        .collect()
}

/// Ridge with the penalty chosen by k-fold cross-validation on mean
/// validation MSE, then refit on all rows.
pub fn ridge_cv(x: &[f64], y: &[f64], dim: usize, grid: &RidgeGrid, seed: u64) -> Result<RidgeCv> {
    Ok(ridge_cv_multi(x, std::slice::from_ref(&y.to_vec()), dim, grid, seed)?.remove(0))
}
