//! Dataset ingestion, z-score normalization and the stacked joint
//! representation `(x, ŷ)` consumed by the adaptation solver.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::Rng;

/// Standard deviations at or below this (relative to the column scale) are
/// treated as a constant column.
const CONSTANT_COLUMN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// A regression dataset: `n × p` features plus an optional response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub response: Option<DVector<f64>>,
    pub names: Vec<String>,
    pub response_name: Option<String>,
    pub role: Role,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        response: Option<DVector<f64>>,
        names: Vec<String>,
        response_name: Option<String>,
        role: Role,
    ) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dataset(format!(
                "need at least one row and one feature, got {n}x{p}"
            )));
        }
        if names.len() != p {
            return Err(Error::Dimension(format!(
                "{} feature names for {p} columns",
                names.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        if let Some(y) = &response {
            if y.len() != n {
                return Err(Error::Dimension(format!(
                    "response has {} entries for {n} rows",
                    y.len()
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset("non-finite response value".into()));
            }
        } else if role == Role::Train {
            return Err(Error::Dataset("training data requires a response".into()));
        }
        Ok(Dataset {
            features,
            response,
            names,
            response_name,
            role,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_role(mut self, role: Role) -> Result<Self> {
        if role == Role::Train && self.response.is_none() {
            return Err(Error::Dataset("training data requires a response".into()));
        }
        self.role = role;
        Ok(self)
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize], role: Role) -> Result<Dataset> {
        let features = self.features.select_rows(idx);
        let response = self
            .response
            .as_ref()
            .map(|y| DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i])));
        Dataset::new(
            features,
            response,
            self.names.clone(),
            self.response_name.clone(),
            role,
        )
    }

    /// Shuffled train/test split; `train_fraction` of the rows (rounded,
    /// at least one) go to the training side.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::param(format!(
                "split fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let n = self.n();
        if n < 2 {
            return Err(Error::Dataset("cannot split fewer than two rows".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(seed).shuffle(&mut order);
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let (tr, te) = order.split_at(n_train);
        Ok((
            self.select_rows(tr, Role::Train)?,
            self.select_rows(te, Role::Test)?,
        ))
    }

    /// Writes the dataset as CSV using shortest round-trip decimal floats, so
    /// reading the file back reproduces every value bit for bit.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if self.response.is_some() {
            header.push(self.response_name.as_deref().unwrap_or("y"));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n() {
            let mut row: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(y) = &self.response {
                row.push(y[i].to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads a headered CSV. Every non-response column becomes a feature, in
/// header order.
pub fn load_csv(path: impl AsRef<Path>, response_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "missing header row".into(),
        });
    }
    let response_idx = match response_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingResponse(name.to_string()))?,
        ),
        None => None,
    };

    let p = header.len() - usize::from(response_idx.is_some());
    let mut values = Vec::new();
    let mut response = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // header is line 1, first data row is row 1
        let row = r + 1;
        for (c, cell) in record.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let v = parsed.ok_or_else(|| Error::BadCell {
                path: path.to_path_buf(),
                row,
                column: header[c].clone(),
                value: cell.to_string(),
            })?;
            if Some(c) == response_idx {
                response.push(v);
            } else {
                values.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Dataset(format!("{} has no data rows", path.display())));
    }
    let names = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let features = DMatrix::from_row_slice(n, p, &values);
    let (response, role) = match response_idx {
        Some(_) => (Some(DVector::from_vec(response)), Role::Train),
        None => (None, Role::Test),
    };
    Dataset::new(
        features,
        response,
        names,
        response_column.map(str::to_string),
        role,
    )
}

/// Mean and population standard deviation of `values`. Constant columns get
/// a standard deviation of 1; the flag reports that case.
fn column_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, bool) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= CONSTANT_COLUMN_TOL * mean.abs().max(1.0) {
        (mean, 1.0, true)
    } else {
        (mean, std, false)
    }
}

/// Training-set z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub response_mean: Option<f64>,
    pub response_std: Option<f64>,
}

impl Scaler {
    pub fn standardize_response(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, s) = self.response_stats()?;
        Ok(y.map(|v| (v - m) / s))
    }

    pub fn unstandardize_response(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, s) = self.response_stats()?;
        Ok(z.map(|v| v * s + m))
    }

    pub fn standardize_features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension(format!(
                "scaler fit on {} features, data has {}",
                self.means.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    fn response_stats(&self) -> Result<(f64, f64)> {
        match (self.response_mean, self.response_std) {
            (Some(m), Some(s)) => Ok((m, s)),
            _ => Err(Error::Dataset("scaler was fit without a response".into())),
        }
    }
}

/// Fits z-score statistics on the training features (and response, when
/// present). Population standard deviation; constant columns get std 1.
pub fn fit_scaler(train: &Dataset) -> Scaler {
    let mut means = Vec::with_capacity(train.p());
    let mut stds = Vec::with_capacity(train.p());
    for (j, col) in train.features.column_iter().enumerate() {
        let (m, s, constant) = column_stats(col.iter().copied());
        if constant {
            warn!("feature '{}' is constant; using std 1", train.names[j]);
        }
        means.push(m);
        stds.push(s);
    }
    let (response_mean, response_std) = match &train.response {
        Some(y) => {
            let (m, s, constant) = column_stats(y.iter().copied());
            if constant {
                warn!("response is constant; using std 1");
            }
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Scaler {
        means,
        stds,
        response_mean,
        response_std,
    }
}

/// Standardizes the features of `d` with training statistics. The response,
/// if any, is left in its original units.
pub fn apply_scaler(s: &Scaler, d: &Dataset) -> Result<Dataset> {
    Ok(Dataset {
        features: s.standardize_features(&d.features)?,
        ..d.clone()
    })
}

/// Population z-score of a vector (constant input maps to zeros).
pub fn zscore(y: &DVector<f64>) -> DVector<f64> {
    let (m, s, _) = column_stats(y.iter().copied());
    y.map(|v| (v - m) / s)
}

/// `α·zscore(y)` on the training positions followed by `n_test` zeros.
pub fn build_yhat(train_y: &DVector<f64>, n_test: usize, alpha: f64) -> Result<DVector<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be >= 0, got {alpha}")));
    }
    if train_y.is_empty() {
        return Err(Error::Dataset("empty training response".into()));
    }
    let z = zscore(train_y);
    let n = train_y.len();
    Ok(DVector::from_fn(n + n_test, |i, _| if i < n { alpha * z[i] } else { 0.0 }))
}

/// Where a column of the joint stack came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Train(usize),
    Test(usize),
}

/// `(p+1) × N` matrix whose columns are `(standardized x, ŷ)`, grouped by
/// latent domain with the target domain last.
#[derive(Debug, Clone)]
pub struct JointStack {
    pub d: DMatrix<f64>,
    /// Sizes of the non-empty domains, latent domains first then the target.
    pub domain_sizes: Vec<usize>,
    /// Domain index of every column (0-based; the target domain is `m`).
    pub domain_of: Vec<usize>,
    pub origin: Vec<Origin>,
    /// Number of latent domains.
    pub m: usize,
}

impl JointStack {
    pub fn p(&self) -> usize {
        self.d.nrows() - 1
    }

    pub fn len(&self) -> usize {
        self.d.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.d.ncols() == 0
    }

    /// Column indices of the training instances, in original training order.
    pub fn train_columns(&self) -> Vec<usize> {
        self.columns_where(|o| matches!(o, Origin::Train(_)))
    }

    /// Column indices of the test instances, in original test order.
    pub fn test_columns(&self) -> Vec<usize> {
        self.columns_where(|o| matches!(o, Origin::Test(_)))
    }

    fn columns_where(&self, keep: impl Fn(&Origin) -> bool) -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = self
            .origin
            .iter()
            .enumerate()
            .filter(|(_, o)| keep(o))
            .map(|(c, o)| match o {
                Origin::Train(i) | Origin::Test(i) => (*i, c),
            })
            .collect();
        cols.sort_unstable();
        cols.into_iter().map(|(_, c)| c).collect()
    }

    /// Sizes of the latent domains only.
    pub fn latent_sizes(&self) -> &[usize] {
        &self.domain_sizes[..self.m]
    }

    pub fn n_test(&self) -> usize {
        self.len() - self.latent_sizes().iter().sum::<usize>()
    }
}

/// Builds the joint representation from standardized training and test
/// features. `partition[i]` is the 0-based latent domain of training row `i`;
/// labels must cover `0..m` with no gaps.
pub fn build_joint_stack(
    train: &Dataset,
    test: Option<&Dataset>,
    partition: &[usize],
    alpha: f64,
) -> Result<JointStack> {
    let y = train
        .response
        .as_ref()
        .ok_or_else(|| Error::Dataset("training data requires a response".into()))?;
    let n_tr = train.n();
    if partition.len() != n_tr {
        return Err(Error::Dimension(format!(
            "partition has {} labels for {n_tr} training rows",
            partition.len()
        )));
    }
    let p = train.p();
    if let Some(t) = test {
        if t.p() != p {
            return Err(Error::Dimension(format!(
                "train has {p} features, test has {}",
                t.p()
            )));
        }
    }
    let n_te = test.map_or(0, Dataset::n);
    let m = partition.iter().max().map_or(0, |&k| k + 1);
    let mut latent_sizes = vec![0usize; m];
    for &k in partition {
        latent_sizes[k] += 1;
    }
    if let Some(k) = latent_sizes.iter().position(|&c| c == 0) {
        return Err(Error::param(format!(
            "partition label {} unused; labels must be contiguous in 1..={m}",
            k + 1
        )));
    }

    let yhat = build_yhat(y, n_te, alpha)?;
    let mut origin = Vec::with_capacity(n_tr + n_te);
    let mut domain_of = Vec::with_capacity(n_tr + n_te);
    for k in 0..m {
        for (i, _) in partition.iter().enumerate().filter(|(_, &l)| l == k) {
            origin.push(Origin::Train(i));
            domain_of.push(k);
        }
    }
    for j in 0..n_te {
        origin.push(Origin::Test(j));
        domain_of.push(m);
    }
    let d = DMatrix::from_fn(p + 1, origin.len(), |r, c| {
        let (x, row, yh) = match origin[c] {
            Origin::Train(i) => (&train.features, i, yhat[i]),
            Origin::Test(j) => (&test.expect("test origin implies test set").features, j, yhat[n_tr + j]),
        };
        if r < p {
            x[(row, r)]
        } else {
            yh
        }
    });
    let mut domain_sizes = latent_sizes;
    if n_te > 0 {
        domain_sizes.push(n_te);
    }
    Ok(JointStack {
        d,
        domain_sizes,
        domain_of,
        origin,
        m,
    })
}
