//! Ridge regression with an unpenalized intercept, plus RMSE.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// Minimizes `‖y − Zw − b‖² + λ‖w‖²`. Centering removes the intercept from
/// the penalized system, which is then solved by Cholesky.
pub fn fit_ridge(z: &DMatrix<f64>, y: &DVector<f64>, ridge_lambda: f64) -> Result<RidgeModel> {
    let (n, q) = z.shape();
    if n == 0 {
        return Err(Error::Dataset("ridge needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} feature rows, {} responses", y.len())));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::param(format!("ridge lambda must be >= 0, got {ridge_lambda}")));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Dataset("ridge input contains non-finite values".into()));
    }
    let z_mean = z.row_mean();
    let y_mean = y.mean();
    let mut zc = z.clone();
    for mut row in zc.row_iter_mut() {
        row -= &z_mean;
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = zc.transpose() * &zc;
    for j in 0..q {
        gram[(j, j)] += ridge_lambda;
    }
    let rhs = zc.transpose() * yc;
    let singular = || {
        Error::Numerical(format!(
            "ridge system is singular with lambda={ridge_lambda}; use a positive penalty"
        ))
    };
    let chol = gram.cholesky().ok_or_else(singular)?;
    // rounding can let a rank-deficient system through with a tiny pivot
    let pivots = chol.l_dirty().diagonal().map(|v| v * v);
    if pivots.min() <= SINGULAR_PIVOT_RATIO * pivots.max() {
        return Err(singular());
    }
    let weights = chol.solve(&rhs);
    let intercept = y_mean - z_mean.transpose().dot(&weights);
    Ok(RidgeModel {
        weights,
        intercept,
        ridge_lambda,
    })
}

pub fn predict(model: &RidgeModel, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    if z.ncols() != model.weights.len() {
        return Err(Error::Dimension(format!(
            "model has {} weights, input has {} columns",
            model.weights.len(),
            z.ncols()
        )));
    }
    Ok((z * &model.weights).add_scalar(model.intercept))
}

pub fn rmse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dataset("rmse of an empty set".into()));
    }
    Ok(((pred - truth).norm_squared() / pred.len() as f64).sqrt())
}
