//! Multi-output ridge regression and seeded train/cal/test splitting.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;

/// Ridge fit on standardized features. `weights` has an intercept row first,
/// followed by one row per feature, on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    weights: Array2<f64>,
    ridge_lambda: f64,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
}

#[cfg(test)]
fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

impl RidgeModel {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    pub fn n_features(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn n_targets(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        let p = self.n_features();
        Ok(Array2::from_shape_fn((x.nrows(), self.n_targets()), |(i, k)| {
            let mut v = self.weights[[0, k]];
            for j in 0..p {
                v += (x[[i, j]] - self.feature_mean[j]) / self.feature_scale[j] * self.weights[[j + 1, k]];
            }
            v
        }))
    }
}

/// Solves `(XᵀX + λI) B = XᵀY` on centered, standardized features with an
/// unpenalized intercept.
pub fn fit_ridge(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, lambda: f64) -> Result<RidgeModel> {
    let (n, p) = x.dim();
    let d = y.ncols();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge lambda must be non-negative, got {lambda}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    let nf = n as f64;
    let feature_mean: Vec<f64> = (0..p).map(|j| x.column(j).sum() / nf).collect();
    let feature_scale: Vec<f64> = (0..p)
        .map(|j| {
            let var = x.column(j).iter().map(|v| (v - feature_mean[j]).powi(2)).sum::<f64>() / nf;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let target_mean: Vec<f64> = (0..d).map(|k| y.column(k).sum() / nf).collect();

    let xs = DMatrix::from_fn(n, p, |i, j| (x[[i, j]] - feature_mean[j]) / feature_scale[j]);
    let yc = DMatrix::from_fn(n, d, |i, k| y[[i, k]] - target_mean[k]);
    let mut gram = xs.transpose() * &xs;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xs.transpose() * yc;
    let beta = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            if lambda == 0.0 {
                return Err(Error::SingularSystem);
            }
            gram.lu().solve(&rhs).ok_or(Error::SingularSystem)?
        }
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let weights = Array2::from_shape_fn((p + 1, d), |(r, k)| if r == 0 { target_mean[k] } else { beta[(r - 1, k)] });
    Ok(RidgeModel {
        weights,
        ridge_lambda: lambda,
        feature_mean,
        feature_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation cut into calibration and test blocks of
/// `⌊fraction · n⌋` rows; everything left over goes to training.
pub fn split_data(n_total: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    let SplitFractions { train, cal, test } = fractions;
    if [train, cal, test].iter().any(|f| f.is_nan() || *f <= 0.0) || train + cal + test > 1.0 + 1e-12 {
        return Err(Error::invalid("split fractions must be positive and sum to at most 1"));
    }
    let n_cal = (cal * n_total as f64).floor() as usize;
    let n_test = (test * n_total as f64).floor() as usize;
    split_counts(n_total, n_cal, n_test, seed)
}

/// Like [`split_data`] with explicit calibration and test sizes.
pub fn split_counts(n_total: usize, n_cal: usize, n_test: usize, seed: u64) -> Result<SplitIndices> {
    let n_train = n_total.checked_sub(n_cal + n_test).ok_or_else(|| {
        Error::invalid(format!("{n_cal} calibration + {n_test} test rows exceed {n_total} available"))
    })?;
    for (name, size) in [("train", n_train), ("cal", n_cal), ("test", n_test)] {
        if size == 0 {
            return Err(Error::EmptySplit(name));
        }
    }
    let mut idx: Vec<usize> = (0..n_total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx = idx.split_off(n_total - n_test);
    let cal_idx = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        cal: cal_idx,
        test: test_idx,
    })
}

/// Residual `Xᵀ(Y − Ŷ)` column check used by tests.
#[cfg(test)]
fn normal_equation_residual(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, fit: &Array2<f64>) -> f64 {
    let r = to_dmatrix(y) - to_dmatrix(fit.view());
    let xm = to_dmatrix(x);
    let ones = nalgebra::DVector::from_element(x.nrows(), 1.0);
    let a = (xm.transpose() * &r).abs().max();
    let b = (r.transpose() * ones).abs().max();
    a.max(b)
}
