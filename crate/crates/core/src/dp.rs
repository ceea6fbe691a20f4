//! Collapsed Gibbs sampler for a Dirichlet-process mixture of linear
//! regressions.
//!
//! Every training instance carries its own coefficient vector `A_i`; under
//! the DP prior those vectors collapse onto a finite set of atoms `Q_k`, and
//! the induced partition is read as the set of latent domains. The base
//! measure is `N(0, Σ·Λ)` with `Λ` diagonal and `Σ` the scalar residual
//! variance, so every conditional is conjugate.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{
    logpdf_normal, sample_beta, sample_gamma, sample_log_categorical, sample_mvn, GammaParams, Rng,
};

/// Conjugate hyperparameters, all in shape-rate form.
///
/// `Σ⁻¹ ~ Ga(a0, b0)`, `ν ~ Ga(av, bv)` and `λ_i⁻¹ ~ Ga(a_i/2, b_i/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a0: f64,
    pub b0: f64,
    pub av: f64,
    pub bv: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Hyperparams {
    /// Same `a_i`, `b_i` for every one of the `k` coefficients.
    pub fn uniform(k: usize, a0: f64, b0: f64, av: f64, bv: f64, ai: f64, bi: f64) -> Self {
        Hyperparams {
            a0,
            b0,
            av,
            bv,
            a: vec![ai; k],
            b: vec![bi; k],
        }
    }

    /// Defaults for `k` coefficients: `a0=50, b0=1, av=bv=1, a_i=b_i=1`.
    pub fn defaults(k: usize) -> Self {
        Self::uniform(k, 50.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.a.len() != k || self.b.len() != k {
            return Err(Error::Dimension(format!(
                "hyperparameter vectors have lengths {}/{}, expected {k}",
                self.a.len(),
                self.b.len()
            )));
        }
        let all = [self.a0, self.b0, self.av, self.bv]
            .into_iter()
            .chain(self.a.iter().copied())
            .chain(self.b.iter().copied());
        for v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "hyperparameters must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Sampler state: partition, atoms and the global parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DpState {
    /// 0-based cluster label per instance.
    pub labels: Vec<usize>,
    pub atoms: Vec<DVector<f64>>,
    pub counts: Vec<usize>,
    /// Residual variance Σ.
    pub sigma: f64,
    /// Diagonal of Λ.
    pub lambda: DVector<f64>,
    /// DP concentration ν.
    pub nu: f64,
}

impl DpState {
    pub fn m(&self) -> usize {
        self.atoms.len()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let m = self.m();
        if self.counts.len() != m {
            return Err(Error::Numerical(format!(
                "{} counts for {m} atoms",
                self.counts.len()
            )));
        }
        let mut tally = vec![0usize; m];
        for &l in &self.labels {
            if l >= m {
                return Err(Error::Numerical(format!("label {l} without atom")));
            }
            tally[l] += 1;
        }
        if tally != self.counts || tally.contains(&0) {
            return Err(Error::Numerical("counts out of sync with labels".into()));
        }
        if !(self.sigma > 0.0 && self.nu > 0.0 && self.lambda.iter().all(|&l| l > 0.0)) {
            return Err(Error::Numerical(format!(
                "non-positive parameter: sigma={} nu={} lambda={:?}",
                self.sigma,
                self.nu,
                self.lambda.as_slice()
            )));
        }
        Ok(())
    }

    /// Removes instance `i` from its cluster, deleting the cluster (and
    /// shifting higher labels down) if it empties.
    fn detach(&mut self, i: usize) {
        let c = self.labels[i];
        self.counts[c] -= 1;
        if self.counts[c] == 0 {
            self.counts.remove(c);
            self.atoms.remove(c);
            for l in self.labels.iter_mut() {
                if *l > c {
                    *l -= 1;
                }
            }
        }
        // marks i as unassigned until it is attached again
        self.labels[i] = usize::MAX;
    }

    /// Relabels clusters in order of first appearance.
    fn canonicalize(&mut self) {
        let (labels, order) = canonical_labels(&self.labels);
        self.labels = labels;
        self.atoms = order.iter().map(|&k| self.atoms[k].clone()).collect();
        self.counts = order.iter().map(|&k| self.counts[k]).collect();
    }
}

/// Relabels a partition in order of first appearance. Returns the new labels
/// and, for each new label, the old label it came from.
pub fn canonical_labels(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut order = Vec::new();
    let relabeled = labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                order.push(l);
                order.len() - 1
            })
        })
        .collect();
    (relabeled, order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionRule {
    LastSweep,
    Modal,
}

impl std::str::FromStr for PartitionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-sweep" | "last" => Ok(PartitionRule::LastSweep),
            "modal" => Ok(PartitionRule::Modal),
            other => Err(Error::Config(format!(
                "unknown partition rule '{other}' (expected last-sweep or modal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub partition_rule: PartitionRule,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            sweeps: 500,
            burn_in: 250,
            seed: 0,
            partition_rule: PartitionRule::LastSweep,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::Config("sweeps must be at least 1".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        Ok(())
    }
}

/// Log of the new-cluster weight `ν·N(y | 0, (xΛx' + 1)Σ)`.
pub fn log_q0(x: &DVector<f64>, y: f64, sigma: f64, lambda: &DVector<f64>, nu: f64) -> f64 {
    let quad: f64 = x.iter().zip(lambda.iter()).map(|(xi, li)| xi * xi * li).sum();
    let var = (quad + 1.0) * sigma;
    nu.ln() + logpdf_normal(y, 0.0, var).unwrap_or(f64::NEG_INFINITY)
}

/// Marginal likelihood of `y` under a freshly drawn atom, scaled by ν:
/// `ν ∫ N(y | xA, Σ) N(A | 0, ΣΛ) dA = ν·N(y | 0, (xΛx' + 1)Σ)`.
pub fn q0_marginal(x: &DVector<f64>, y: f64, sigma: f64, lambda: &DVector<f64>, nu: f64) -> f64 {
    if nu == 0.0 {
        return 0.0;
    }
    log_q0(x, y, sigma, lambda, nu).exp()
}

/// Conjugate posterior of a coefficient vector given the rows `xs` (each of
/// length k) and responses `ys`: returns `(Θ X'Y, Θ)` with
/// `Θ = (Λ⁻¹ + X'X)⁻¹`. The atom posterior is `N(Θ X'Y, Θ·Σ)`.
pub fn coefficient_posterior(
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = lambda.len();
    let mut precision = xs.transpose() * xs;
    for j in 0..k {
        precision[(j, j)] += 1.0 / lambda[j];
    }
    let theta = precision
        .cholesky()
        .ok_or_else(|| Error::Numerical("atom posterior precision not positive definite".into()))?
        .inverse();
    let theta = (&theta + theta.transpose()) * 0.5;
    let mean = &theta * (xs.transpose() * ys);
    Ok((mean, theta))
}

/// Unnormalized log weights for reassigning an (already detached) instance:
/// one entry per existing cluster, `log n_k + log N(y | x Q_k, Σ)`, followed
/// by the new-cluster entry `log q0`.
pub fn assignment_log_weights(state: &DpState, x: &DVector<f64>, y: f64) -> Vec<f64> {
    let mut w: Vec<f64> = state
        .atoms
        .iter()
        .zip(&state.counts)
        .map(|(q, &n_k)| {
            (n_k as f64).ln() + logpdf_normal(y, x.dot(q), state.sigma).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    w.push(log_q0(x, y, state.sigma, &state.lambda, state.nu));
    w
}

/// One Polya-urn step for instance `i`: detach it, then join an existing
/// cluster or open a new one whose atom is drawn from `N(C x'y, C·Σ)`,
/// `C = (Λ⁻¹ + x'x)⁻¹`.
pub fn sample_assignment(
    rng: &mut Rng,
    i: usize,
    state: &mut DpState,
    x: &DVector<f64>,
    y: f64,
) -> Result<()> {
    state.detach(i);
    let w = assignment_log_weights(state, x, y);
    let choice = sample_log_categorical(rng, &w)?;
    if choice < state.m() {
        state.labels[i] = choice;
        state.counts[choice] += 1;
    } else {
        let xs = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        let (mean, c) = coefficient_posterior(&xs, &DVector::from_element(1, y), &state.lambda)?;
        let atom = sample_mvn(rng, &mean, &(c * state.sigma))?;
        state.atoms.push(atom);
        state.counts.push(1);
        state.labels[i] = state.m() - 1;
    }
    Ok(())
}

fn cluster_rows(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[usize], k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
    (
        x.select_rows(&idx),
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i])),
    )
}

/// Draws every atom from its conjugate posterior `N(Θ_k X_k'Y_k, Θ_k·Σ)`.
pub fn resample_atoms(rng: &mut Rng, state: &mut DpState, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    for k in 0..state.m() {
        let (xk, yk) = cluster_rows(x, y, &state.labels, k);
        let (mean, theta) = coefficient_posterior(&xk, &yk, &state.lambda)?;
        state.atoms[k] = sample_mvn(rng, &mean, &(theta * state.sigma))?;
    }
    Ok(())
}

/// Posterior of Σ⁻¹: `Ga(a0 + n/2, b0 + ½ Σ (y_i − x_i Q_{z_i})²)`.
pub fn sigma_posterior(state: &DpState, x: &DMatrix<f64>, y: &DVector<f64>, hp: &Hyperparams) -> Result<GammaParams> {
    let sse: f64 = (0..state.n())
        .map(|i| {
            let r = y[i] - x.row(i).transpose().dot(&state.atoms[state.labels[i]]);
            r * r
        })
        .sum();
    GammaParams::new(hp.a0 + state.n() as f64 / 2.0, hp.b0 + 0.5 * sse)
}

pub fn update_sigma(
    rng: &mut Rng,
    state: &mut DpState,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hp: &Hyperparams,
) -> Result<()> {
    let precision = sample_gamma(rng, sigma_posterior(state, x, y, hp)?)?;
    state.sigma = 1.0 / precision;
    Ok(())
}

/// Posterior of λ_j⁻¹ for coefficient `j`:
/// `Ga((a_j + m)/2, (b_j + Σ_k (Q_kj)² / Σ)/2)`.
pub fn lambda_posterior(state: &DpState, hp: &Hyperparams, j: usize) -> Result<GammaParams> {
    let m = state.m() as f64;
    let ss: f64 = state.atoms.iter().map(|q| q[j] * q[j] / state.sigma).sum();
    GammaParams::new((hp.a[j] + m) / 2.0, (hp.b[j] + ss) / 2.0)
}

pub fn update_lambda(rng: &mut Rng, state: &mut DpState, hp: &Hyperparams) -> Result<()> {
    for j in 0..state.lambda.len() {
        let precision = sample_gamma(rng, lambda_posterior(state, hp, j)?)?;
        state.lambda[j] = 1.0 / precision;
    }
    Ok(())
}

/// Weight of the `Ga(av + m, bv − log h)` component in the ν update,
/// `(ν + m − 1) / (av + m − 1 + n(bv − log h))`, clipped to `[0, 1]`.
pub fn nu_mixture_weight(nu: f64, m: usize, av: f64, bv: f64, n: usize, h: f64) -> f64 {
    let m = m as f64;
    let pi0 = (nu + m - 1.0) / (av + m - 1.0 + n as f64 * (bv - h.ln()));
    pi0.clamp(0.0, 1.0)
}

/// Auxiliary-variable update for the concentration: draw
/// `h ~ Beta(ν + 1, n)`, then ν from the two-component Gamma mixture.
pub fn update_nu(rng: &mut Rng, state: &mut DpState, hp: &Hyperparams, n: usize) -> Result<()> {
    let h = sample_beta(rng, state.nu + 1.0, n as f64)?;
    // log h < 0, so the rate stays above bv; guard h == 0 underflow
    let rate = hp.bv - h.max(f64::MIN_POSITIVE).ln();
    let m = state.m();
    let pi0 = nu_mixture_weight(state.nu, m, hp.av, hp.bv, n, h.max(f64::MIN_POSITIVE));
    let shape = if rng.uniform() < pi0 {
        hp.av + m as f64
    } else {
        hp.av + m as f64 - 1.0
    };
    // a shape near zero can underflow the draw to exactly 0
    state.nu = sample_gamma(rng, GammaParams::new(shape, rate)?)?.max(f64::MIN_POSITIVE);
    Ok(())
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub m: usize,
    pub sigma: f64,
    pub nu: f64,
}

pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sweep,m,sigma,nu\n");
    for t in trace {
        out.push_str(&format!("{},{},{},{}\n", t.sweep, t.m, t.sigma, t.nu));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Result of a Gibbs run.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOutput {
    /// 0-based latent domain per instance, in first-appearance order.
    pub labels: Vec<usize>,
    pub atoms: Vec<DVector<f64>>,
    pub sigma: f64,
    pub lambda: DVector<f64>,
    pub nu: f64,
    pub trace: Vec<TraceRow>,
}

impl GibbsOutput {
    pub fn m(&self) -> usize {
        self.atoms.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Initial state: one cluster holding everything, Λ = I, ν = 1, Σ equal to
/// the population variance of `y` (1 if `y` is constant), atom drawn from its
/// conjugate posterior.
pub fn initial_state(rng: &mut Rng, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DpState> {
    let n = y.len();
    let k = x.ncols();
    let mean = y.sum() / n as f64;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sigma = if var > 0.0 { var } else { 1.0 };
    let lambda = DVector::from_element(k, 1.0);
    let (m0, theta) = coefficient_posterior(x, y, &lambda)?;
    let atom = sample_mvn(rng, &m0, &(theta * sigma))?;
    Ok(DpState {
        labels: vec![0; n],
        atoms: vec![atom],
        counts: vec![n],
        sigma,
        lambda,
        nu: 1.0,
    })
}

/// One full sweep: every assignment in index order, then atoms, Σ, Λ, ν.
pub fn sweep(
    rng: &mut Rng,
    state: &mut DpState,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hp: &Hyperparams,
) -> Result<()> {
    for i in 0..state.n() {
        let xi = x.row(i).transpose();
        sample_assignment(rng, i, state, &xi, y[i])?;
    }
    state.canonicalize();
    resample_atoms(rng, state, x, y)?;
    update_sigma(rng, state, x, y, hp)?;
    update_lambda(rng, state, hp)?;
    update_nu(rng, state, hp, y.len())?;
    Ok(())
}

/// Runs the sampler. `x` is the `n × (p+1)` design with its intercept
/// column; the returned partition follows `cfg.partition_rule`.
pub fn run_gibbs(
    rng: &mut Rng,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hp: &Hyperparams,
    cfg: &GibbsConfig,
) -> Result<GibbsOutput> {
    cfg.validate()?;
    hp.validate(x.ncols())?;
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Dataset("no training instances".into()));
    }

    let mut state = initial_state(rng, x, y)?;
    let mut trace = Vec::with_capacity(cfg.sweeps);
    // modal bookkeeping: signature -> index into `seen`
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut seen: Vec<(usize, DpState)> = Vec::new();

    for s in 0..cfg.sweeps {
        sweep(rng, &mut state, x, y, hp)?;
        state.check_invariants()?;
        trace.push(TraceRow {
            sweep: s + 1,
            m: state.m(),
            sigma: state.sigma,
            nu: state.nu,
        });
        if cfg.partition_rule == PartitionRule::Modal && s >= cfg.burn_in {
            match index.get(&state.labels) {
                Some(&j) => {
                    seen[j].0 += 1;
                    seen[j].1 = state.clone();
                }
                None => {
                    index.insert(state.labels.clone(), seen.len());
                    seen.push((1, state.clone()));
                }
            }
        }
    }

    let chosen = match cfg.partition_rule {
        PartitionRule::LastSweep => state,
        PartitionRule::Modal => {
            // most frequent signature; ties go to the one seen first
            let mut best = 0;
            for (j, (count, _)) in seen.iter().enumerate() {
                if *count > seen[best].0 {
                    best = j;
                }
            }
            seen.swap_remove(best).1
        }
    };
    Ok(GibbsOutput {
        labels: chosen.labels,
        atoms: chosen.atoms,
        sigma: chosen.sigma,
        lambda: chosen.lambda,
        nu: chosen.nu,
        trace,
    })
}

/// Prepends the intercept column to a feature matrix.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Reassigns members of clusters smaller than `floor` to the nearest
/// (Euclidean distance between atoms) cluster that meets the floor, then
/// compacts the labels in first-appearance order. Leaves the partition alone
/// when no cluster meets the floor.
pub fn merge_small_clusters(
    labels: &[usize],
    atoms: &[DVector<f64>],
    floor: usize,
) -> (Vec<usize>, Vec<DVector<f64>>) {
    let mut sizes = vec![0usize; atoms.len()];
    for &l in labels {
        sizes[l] += 1;
    }
    let big: Vec<usize> = (0..atoms.len()).filter(|&k| sizes[k] >= floor).collect();
    if big.is_empty() || big.len() == atoms.len() {
        let (relabeled, order) = canonical_labels(labels);
        return (relabeled, order.iter().map(|&k| atoms[k].clone()).collect());
    }
    let target: Vec<usize> = (0..atoms.len())
        .map(|k| {
            if sizes[k] >= floor {
                return k;
            }
            *big.iter()
                .min_by(|&&a, &&b| {
                    let da = (&atoms[a] - &atoms[k]).norm_squared();
                    let db = (&atoms[b] - &atoms[k]).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("non-empty")
        })
        .collect();
    let merged: Vec<usize> = labels.iter().map(|&l| target[l]).collect();
    let (relabeled, order) = canonical_labels(&merged);
    (relabeled, order.iter().map(|&k| atoms[k].clone()).collect())
}

/// Adjusted Rand index between two partitions of the same items. Returns 1
/// when both partitions are trivial in the same way (the index is otherwise
/// undefined there).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same items");
    let n = a.len();
    let choose2 = |v: usize| (v * v.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_a * sum_b / choose2(n).max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(labels: Vec<usize>, atoms: Vec<Vec<f64>>, sigma: f64, nu: f64) -> DpState {
        let k = atoms[0].len();
        let m = atoms.len();
        let mut counts = vec![0; m];
        for &l in &labels {
            counts[l] += 1;
        }
        DpState {
            labels,
            atoms: atoms.into_iter().map(DVector::from_vec).collect(),
            counts,
            sigma,
            lambda: DVector::from_element(k, 1.0),
            nu,
        }
    }

    /// Trapezoid rule over a fine grid of the scalar coefficient.
    fn q0_by_quadrature(x: f64, y: f64, sigma: f64, lambda: f64, nu: f64) -> f64 {
        let half = (y / x).abs() + 12.0 * (lambda * sigma).sqrt().max(sigma.sqrt() / x.abs());
        let (lo, hi) = (-half, half);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let f = |a: f64| {
            let lik = (-0.5 * (y - x * a).powi(2) / sigma).exp() / (2.0 * std::f64::consts::PI * sigma).sqrt();
            let prior = (-0.5 * a * a / (lambda * sigma)).exp() / (2.0 * std::f64::consts::PI * lambda * sigma).sqrt();
            lik * prior
        };
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            s += f(lo + i as f64 * h);
        }
        nu * s * h
    }

    #[test]
    fn q0_unit_case() {
        let x = DVector::from_element(1, 1.0);
        let l = DVector::from_element(1, 1.0);
        let v = q0_marginal(&x, 0.0, 1.0, &l, 1.0);
        assert_abs_diff_eq!(v, 0.28209, epsilon = 1e-5);
        assert_abs_diff_eq!(v, q0_by_quadrature(1.0, 0.0, 1.0, 1.0, 1.0), epsilon = 1e-4);
    }

    #[test]
    fn q0_linear_in_nu() {
        let x = DVector::from_row_slice(&[1.0, -0.4]);
        let l = DVector::from_row_slice(&[0.7, 2.0]);
        assert_eq!(q0_marginal(&x, 0.3, 0.5, &l, 0.0), 0.0);
        let a = q0_marginal(&x, 0.3, 0.5, &l, 1.3);
        let b = q0_marginal(&x, 0.3, 0.5, &l, 2.6);
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-14);
    }

    #[test]
    fn q0_matches_quadrature_on_assorted_inputs() {
        for &(x, y, sigma, lambda, nu) in &[
            (1.0, 0.5, 0.3, 2.0, 1.0),
            (-0.7, 1.2, 1.5, 0.4, 0.2),
            (2.5, -3.0, 0.8, 1.0, 3.0),
        ] {
            let analytic = q0_marginal(
                &DVector::from_element(1, x),
                y,
                sigma,
                &DVector::from_element(1, lambda),
                nu,
            );
            let numeric = q0_by_quadrature(x, y, sigma, lambda, nu);
            assert!((analytic - numeric).abs() / numeric < 1e-4, "{analytic} vs {numeric}");
        }
    }

    #[test]
    fn single_row_posterior_matches_inverse() {
        let xs = DMatrix::from_element(1, 1, 1.0);
        let (mean, c) =
            coefficient_posterior(&xs, &DVector::from_element(1, 2.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mean[0], 1.0, epsilon = 1e-15);

        let xs = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let lam = DVector::from_row_slice(&[2.0, 0.5]);
        let (_, c) = coefficient_posterior(&xs, &DVector::from_element(1, 1.0), &lam).unwrap();
        let direct = (DMatrix::from_diagonal(&lam.map(|l| 1.0 / l)) + xs.transpose() * &xs)
            .try_inverse()
            .unwrap();
        assert!((c - direct).abs().max() < 1e-14);
    }

    #[test]
    fn empty_cluster_posterior_is_prior() {
        let xs = DMatrix::zeros(0, 2);
        let lam = DVector::from_row_slice(&[2.0, 0.5]);
        let (mean, theta) = coefficient_posterior(&xs, &DVector::zeros(0), &lam).unwrap();
        assert_eq!(mean, DVector::zeros(2));
        assert_abs_diff_eq!(theta[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(theta[(1, 1)], 0.5, epsilon = 1e-14);
        assert_eq!(theta[(0, 1)], 0.0);
    }

    #[test]
    fn atom_posterior_collapses_with_tiny_sigma() {
        let mut rng = Rng::new(1);
        let mut s = state(vec![0], vec![vec![0.0]], 1e-14, 1.0);
        let x = DMatrix::from_element(1, 1, 1.0);
        resample_atoms(&mut rng, &mut s, &x, &DVector::from_element(1, 2.0)).unwrap();
        assert_abs_diff_eq!(s.atoms[0][0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn single_instance_forms_one_cluster() {
        let mut rng = Rng::new(2);
        let mut s = state(vec![0], vec![vec![0.3, 0.1]], 1.0, 1.0);
        let x = DVector::from_row_slice(&[1.0, 0.2]);
        for _ in 0..20 {
            sample_assignment(&mut rng, 0, &mut s, &x, 0.7).unwrap();
            assert_eq!(s.m(), 1);
            assert_eq!(s.labels, vec![0]);
            s.check_invariants().unwrap();
        }
    }

    #[test]
    fn nu_zero_always_joins_existing() {
        let mut rng = Rng::new(3);
        let mut s = state(vec![0, 0, 0], vec![vec![1.0]], 1.0, 0.0);
        let x = DVector::from_element(1, 1.0);
        for _ in 0..200 {
            sample_assignment(&mut rng, 1, &mut s, &x, 5.0).unwrap();
            assert_eq!(s.m(), 1);
        }
    }

    #[test]
    fn log_weights_match_direct_computation() {
        let s = state(vec![0, 1, 1], vec![vec![0.2, 1.0], vec![-0.5, 0.3]], 0.8, 1.7);
        let x = DVector::from_row_slice(&[1.0, 0.6]);
        let y = 0.4;
        let lw = assignment_log_weights(&s, &x, y);
        let normal = |y: f64, m: f64, v: f64| {
            (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let direct = [
            1.0 * normal(y, x.dot(&s.atoms[0]), 0.8),
            2.0 * normal(y, x.dot(&s.atoms[1]), 0.8),
            1.7 * normal(y, 0.0, (1.0 + 0.36 + 1.0) * 0.8),
        ];
        let total: f64 = direct.iter().sum();
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let etotal: f64 = exp.iter().sum();
        for (e, d) in exp.iter().zip(direct) {
            assert_abs_diff_eq!(e / etotal, d / total, epsilon = 1e-10);
        }
    }

    #[test]
    fn detach_compacts_labels() {
        let mut s = state(vec![0, 1, 2, 2], vec![vec![0.0], vec![1.0], vec![2.0]], 1.0, 1.0);
        s.detach(1);
        assert_eq!(s.m(), 2);
        assert_eq!(s.atoms[1][0], 2.0);
        assert_eq!(s.labels[2], 1);
        assert_eq!(s.counts, vec![1, 2]);
    }

    #[test]
    fn sigma_posterior_substitution() {
        let s = state(vec![0, 0], vec![vec![0.0]], 1.0, 1.0);
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DVector::from_row_slice(&[1.0, -1.0]);
        let hp = Hyperparams::uniform(1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let g = sigma_posterior(&s, &x, &y, &hp).unwrap();
        assert_eq!((g.shape, g.rate), (2.0, 2.0));
        let g = sigma_posterior(&s, &x, &DVector::zeros(2), &hp).unwrap();
        assert_eq!((g.shape, g.rate), (2.0, 1.0));
    }

    #[test]
    fn sigma_precision_draws_match_gamma_mean() {
        let mut rng = Rng::new(4);
        let mut s = state(vec![0, 0, 0], vec![vec![0.5]], 1.0, 1.0);
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_row_slice(&[1.0, -0.5, 2.0]);
        let hp = Hyperparams::uniform(1, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0);
        let g = sigma_posterior(&s, &x, &y, &hp).unwrap();
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| {
                update_sigma(&mut rng, &mut s, &x, &y, &hp).unwrap();
                1.0 / s.sigma
            })
            .sum::<f64>()
            / draws as f64;
        let se = (g.shape / (g.rate * g.rate) / draws as f64).sqrt();
        assert!((mean - g.mean()).abs() < 4.0 * se);
    }

    #[test]
    fn lambda_posterior_substitution() {
        let hp = Hyperparams::uniform(1, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0);
        let s = state(vec![0, 1], vec![vec![1.0], vec![1.0]], 1.0, 1.0);
        let g = lambda_posterior(&s, &hp, 0).unwrap();
        assert_eq!((g.shape, g.rate), (2.0, 2.0));
        let s = state(vec![0], vec![vec![0.0]], 1.0, 1.0);
        let g = lambda_posterior(&s, &hp, 0).unwrap();
        assert_eq!((g.shape, g.rate), (1.5, 1.0));
        let empty = DpState {
            labels: vec![],
            atoms: vec![],
            counts: vec![],
            sigma: 1.0,
            lambda: DVector::from_element(1, 1.0),
            nu: 1.0,
        };
        let g = lambda_posterior(&empty, &hp, 0).unwrap();
        assert_eq!((g.shape, g.rate), (1.0, 1.0));
    }

    #[test]
    fn nu_weight_formula() {
        let pi0 = nu_mixture_weight(1.0, 2, 1.0, 1.0, 10, 0.5);
        assert_abs_diff_eq!(pi0, 2.0 / (2.0 + 10.0 * (1.0 - 0.5f64.ln())), epsilon = 1e-15);
        assert_abs_diff_eq!(pi0, 0.10565, epsilon = 1e-5);
        // h -> 1: the rate tends to bv
        let near_one = nu_mixture_weight(1.0, 2, 1.0, 1.0, 10, 1.0 - 1e-15);
        assert_abs_diff_eq!(near_one, 2.0 / 12.0, epsilon = 1e-12);
        assert!((0.0..=1.0).contains(&nu_mixture_weight(1e6, 2, 1.0, 1.0, 1, 0.9)));
    }

    #[test]
    fn nu_stays_positive() {
        let mut rng = Rng::new(5);
        let hp = Hyperparams::defaults(1);
        let mut s = state(vec![0, 1, 1], vec![vec![0.0], vec![1.0]], 1.0, 1.0);
        for _ in 0..1000 {
            update_nu(&mut rng, &mut s, &hp, 3).unwrap();
            assert!(s.nu > 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let cfg = GibbsConfig {
            sweeps: 0,
            burn_in: 0,
            ..GibbsConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = GibbsConfig {
            sweeps: 10,
            burn_in: 10,
            ..GibbsConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(GibbsConfig::default().validate().is_ok());
    }

    fn two_lines(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = DVector::zeros(n);
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % 2;
            let xi = rng.standard_normal();
            let sign = if k == 0 { 1.0 } else { -1.0 };
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xi;
            y[i] = sign * (2.0 + 3.0 * xi) + 0.1 * rng.standard_normal();
            truth.push(k);
        }
        (x, y, truth)
    }

    #[test]
    fn gibbs_is_deterministic_and_keeps_invariants() {
        let (x, y, _) = two_lines(11, 40);
        let hp = Hyperparams::defaults(2);
        let cfg = GibbsConfig {
            sweeps: 30,
            burn_in: 10,
            seed: 0,
            partition_rule: PartitionRule::Modal,
        };
        let a = run_gibbs(&mut Rng::new(7), &x, &y, &hp, &cfg).unwrap();
        let b = run_gibbs(&mut Rng::new(7), &x, &y, &hp, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 30);
        assert_eq!(a.sizes().iter().sum::<usize>(), 40);
        assert!(a.sizes().iter().all(|&c| c > 0));
        // first-appearance labelling
        assert_eq!(a.labels[0], 0);
    }

    #[test]
    fn gibbs_separates_two_lines() {
        // points near the crossing of the two lines are ambiguous, so a
        // single chain may miss a few; require a majority of seeds
        let hp = Hyperparams::defaults(2);
        let aris: Vec<f64> = (0..5u64)
            .map(|seed| {
                let (x, y, truth) = two_lines(100 + seed, 100);
                let cfg = GibbsConfig {
                    seed,
                    ..GibbsConfig::default()
                };
                let out = run_gibbs(&mut Rng::new(seed), &x, &y, &hp, &cfg).unwrap();
                adjusted_rand_index(&out.labels, &truth)
            })
            .collect();
        assert!(aris.iter().filter(|&&a| a >= 0.9).count() >= 3, "{aris:?}");
    }

    #[test]
    fn ari_reference_values() {
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]), 1.0);
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 0, 1, 1]), 0.0);
        // sklearn: adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]), 4.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn merge_moves_singletons_to_nearest_atom() {
        let atoms: Vec<DVector<f64>> = [[0.0, 0.0], [10.0, 10.0], [9.0, 9.5]]
            .iter()
            .map(|a| DVector::from_row_slice(a))
            .collect();
        let labels = vec![0, 0, 1, 1, 2];
        let (l, a) = merge_small_clusters(&labels, &atoms, 2);
        assert_eq!(l, vec![0, 0, 1, 1, 1]);
        assert_eq!(a.len(), 2);
        assert_eq!(a[1][0], 10.0);
        // nothing to merge
        let (l, a) = merge_small_clusters(&[0, 0, 1, 1], &atoms[..2], 2);
        assert_eq!(l, vec![0, 0, 1, 1]);
        assert_eq!(a.len(), 2);
    }
}
