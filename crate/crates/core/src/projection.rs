//! Two-dimensional coordinates for plotting the original and transferred
//! spaces.

use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::adapt::transform;
use crate::bundle::ModelBundle;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Top two principal components of the standardized features.
    Pca,
    /// First two coordinates of the learned representation.
    Transferred,
}

impl FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ProjectionMode::Pca),
            "transferred" => Ok(ProjectionMode::Transferred),
            other => Err(Error::Config(format!(
                "unknown projection mode '{other}' (expected pca or transferred)"
            ))),
        }
    }
}

/// One emitted point. `domain` is the 1-based latent domain or `"target"`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub x1: f64,
    pub x2: f64,
    pub domain: String,
}

/// Scores of the rows of `x` on its top two principal components, computed
/// from the eigendecomposition of the population covariance. `n × 2`.
pub fn pca_scores(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(Error::param(format!("PCA projection needs at least 2 features, got {p}")));
    }
    if n == 0 {
        return Err(Error::Dataset("no rows to project".into()));
    }
    let mean = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    let cov = xc.transpose() * &xc / n as f64;
    let eig = symmetric_eigen(&cov);
    // ascending order: the top two are the last two columns
    let top = eig.vectors.select_columns(&[p - 1, p - 2]);
    Ok(xc * top)
}

/// Projects the training rows (with their mined labels) and the target rows.
/// `train` must be the data the bundle was fit on.
pub fn emit_projection(
    bundle: &ModelBundle,
    train: &Dataset,
    test: Option<&Dataset>,
    mode: ProjectionMode,
) -> Result<Vec<ProjectionRow>> {
    let labels = &bundle.partition.labels;
    if train.n() != labels.len() {
        return Err(Error::Dimension(format!(
            "bundle holds labels for {} training rows, data has {}",
            labels.len(),
            train.n()
        )));
    }
    for d in std::iter::once(train).chain(test) {
        if d.names != bundle.feature_names {
            return Err(Error::Dimension(format!(
                "columns {:?} do not match the bundle's {:?}",
                d.names, bundle.feature_names
            )));
        }
    }
    let x_train = bundle.scaler.standardize_features(&train.features)?;
    let x_test = test.map(|t| bundle.scaler.standardize_features(&t.features)).transpose()?;
    let n_te = x_test.as_ref().map_or(0, DMatrix::nrows);

    let coords = match mode {
        ProjectionMode::Pca => {
            let p = bundle.p();
            let mut all = DMatrix::zeros(train.n() + n_te, p);
            all.rows_mut(0, train.n()).copy_from(&x_train);
            if let Some(xt) = &x_test {
                all.rows_mut(train.n(), n_te).copy_from(xt);
            }
            pca_scores(&all)?
        }
        ProjectionMode::Transferred => {
            if bundle.map.q < 2 {
                return Err(Error::param(format!(
                    "transferred projection needs q >= 2, bundle has q = {}",
                    bundle.map.q
                )));
            }
            let y = train
                .response
                .as_ref()
                .ok_or_else(|| Error::Dataset("transferred projection needs the training response".into()))?;
            let yhat = bundle.scaler.standardize_response(y)? * bundle.config.alpha;
            let mut train_cols = x_train.transpose().insert_row(bundle.p(), 0.0);
            train_cols.row_mut(bundle.p()).copy_from(&yhat.transpose());
            let mut z = transform(&bundle.map, &train_cols)?.transpose();
            if let Some(xt) = &x_test {
                let test_cols = xt.transpose().insert_row(bundle.p(), 0.0);
                let zt = transform(&bundle.map, &test_cols)?.transpose();
                let n_tr = z.nrows();
                z = z.insert_rows(n_tr, n_te, 0.0);
                z.rows_mut(n_tr, n_te).copy_from(&zt);
            }
            z.columns(0, 2).into_owned()
        }
    };

    let domains = labels
        .iter()
        .map(|l| l.to_string())
        .chain(std::iter::repeat_n("target".to_string(), n_te));
    Ok(coords
        .row_iter()
        .zip(domains)
        .map(|(r, domain)| ProjectionRow {
            x1: r[0],
            x2: r[1],
            domain,
        })
        .collect())
}

pub fn write_projection_csv(rows: &[ProjectionRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x1,x2,domain\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.x1, r.x2, r.domain));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
