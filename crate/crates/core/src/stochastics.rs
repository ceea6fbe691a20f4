//! Seeded random sampling and density kernels used by the Gibbs sampler.
//!
//! All draws go through [`Rng`], a ChaCha8 stream keyed by a 64-bit seed, so
//! an identical seed and call sequence reproduces every draw bit for bit on
//! any platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance for covariance matrices.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// Gamma distribution in shape-rate form (mean `shape / rate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::param(format!(
                "gamma needs positive finite shape and rate, got shape={shape} rate={rate}"
            )));
        }
        Ok(GammaParams { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

pub fn sample_gamma(rng: &mut Rng, g: GammaParams) -> Result<f64> {
    let g = GammaParams::new(g.shape, g.rate)?;
    let dist = rand_distr::Gamma::new(g.shape, 1.0 / g.rate)
        .map_err(|e| Error::param(format!("gamma: {e}")))?;
    Ok(dist.sample(&mut rng.inner))
}

pub fn sample_beta(rng: &mut Rng, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::param(format!(
            "beta needs positive finite parameters, got a={a} b={b}"
        )));
    }
    let dist = rand_distr::Beta::new(a, b).map_err(|e| Error::param(format!("beta: {e}")))?;
    Ok(dist.sample(&mut rng.inner))
}

/// Draws from `N(mean, cov)` through the Cholesky factor of `cov`, adding an
/// escalating diagonal jitter when the factorization fails. An all-zero
/// covariance returns `mean` unchanged.
pub fn sample_mvn(rng: &mut Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = mean.len();
    if cov.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "mean has length {k}, covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    for i in 0..k {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::param(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(mean.clone());
    }
    let chol = cholesky_with_jitter(cov)?;
    let z = DVector::from_fn(k, |_, _| rng.standard_normal());
    Ok(mean + chol * z)
}

/// Lower Cholesky factor of `m + jitter·I`, trying jitter 0 first and then
/// `1e-12·scale` up to `1e-4·scale`.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let k = m.nrows();
    let scale = (sym.trace().abs() / k as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 1e-12 * scale;
    while jitter <= 1e-4 * scale {
        let shifted = &sym + DMatrix::identity(k, k) * jitter;
        if let Some(c) = shifted.cholesky() {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "cholesky failed after maximum jitter".into(),
    ))
}

/// Index `i` with probability `weights[i] / Σ weights`.
pub fn sample_categorical(rng: &mut Rng, weights: &[f64]) -> Result<usize> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::param("categorical weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("categorical weights are all zero"));
    }
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    // rounding in the running sum can leave u just above acc
    Ok(last_positive)
}

/// Categorical draw from unnormalized log weights (max-subtracted before
/// exponentiation). `-inf` entries have zero probability.
pub fn sample_log_categorical(rng: &mut Rng, log_weights: &[f64]) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::param(format!(
            "log weights have no finite maximum ({max})"
        )));
    }
    let w: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    sample_categorical(rng, &w)
}

/// Log density of `N(y | mean, var)`.
pub fn logpdf_normal(y: f64, mean: f64, var: f64) -> Result<f64> {
    if var.is_nan() || var <= 0.0 {
        return Err(Error::param(format!("variance must be positive, got {var}")));
    }
    let r = y - mean;
    Ok(-0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * r * r / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const DRAWS: usize = 100_000;

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v)
    }

    #[test]
    fn gamma_exponential_mean() {
        let mut rng = Rng::new(1);
        let g = GammaParams::new(1.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..DRAWS).map(|_| sample_gamma(&mut rng, g).unwrap()).collect();
        let (m, _) = mean_and_var(&xs);
        assert!((0.98..=1.02).contains(&m), "mean {m}");
    }

    #[test]
    fn gamma_shape_rate_moments() {
        let mut rng = Rng::new(2);
        let g = GammaParams::new(2.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..DRAWS).map(|_| sample_gamma(&mut rng, g).unwrap()).collect();
        let (m, v) = mean_and_var(&xs);
        let n = DRAWS as f64;
        // mean 1, variance 0.5, excess kurtosis 6/shape = 3
        let se_mean = (0.5f64 / n).sqrt();
        let se_var = 0.5 * ((2.0 + 3.0) / n).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se_mean, "mean {m}");
        assert!((v - 0.5).abs() < 3.0 * se_var, "var {v}");
    }

    #[test]
    fn gamma_rejects_bad_params() {
        assert!(GammaParams::new(0.0, 1.0).is_err());
        assert!(GammaParams::new(1.0, -1.0).is_err());
        let mut rng = Rng::new(0);
        assert!(sample_gamma(&mut rng, GammaParams { shape: 0.0, rate: 1.0 }).is_err());
    }

    #[test]
    fn beta_means() {
        let mut rng = Rng::new(3);
        let n = DRAWS as f64;
        let xs: Vec<f64> = (0..DRAWS).map(|_| sample_beta(&mut rng, 1.0, 1.0).unwrap()).collect();
        let (m, _) = mean_and_var(&xs);
        assert!((m - 0.5).abs() < 3.0 * (1.0 / 12.0 / n).sqrt());
        let xs: Vec<f64> = (0..DRAWS).map(|_| sample_beta(&mut rng, 2.0, 1.0).unwrap()).collect();
        let (m, _) = mean_and_var(&xs);
        // variance ab/((a+b)^2 (a+b+1)) = 2/36
        assert!((m - 2.0 / 3.0).abs() < 3.0 * (2.0 / 36.0 / n).sqrt());
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(sample_beta(&mut rng, 0.0, 1.0).is_err());
    }

    #[test]
    fn mvn_identity_covariance() {
        let mut rng = Rng::new(4);
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..DRAWS {
            let x = sample_mvn(&mut rng, &mean, &cov).unwrap();
            acc += &x * x.transpose();
        }
        acc /= DRAWS as f64;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((acc[(i, j)] - target).abs() < 0.02, "{acc}");
            }
        }
    }

    #[test]
    fn mvn_degenerate_and_invalid() {
        let mut rng = Rng::new(5);
        let mean = DVector::from_row_slice(&[1.5, -2.0]);
        let x = sample_mvn(&mut rng, &mean, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(x, mean);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(sample_mvn(&mut rng, &mean, &asym).is_err());
        // rank-deficient PSD matrix succeeds with jitter
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(sample_mvn(&mut rng, &mean, &psd).is_ok());
    }

    #[test]
    fn categorical_point_mass_and_errors() {
        let mut rng = Rng::new(6);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&mut rng, &[1.0, 0.0, 0.0]).unwrap(), 0);
        }
        assert!(sample_categorical(&mut rng, &[0.0, 0.0]).is_err());
        assert!(sample_categorical(&mut rng, &[1.0, -1.0]).is_err());
        assert!(sample_categorical(&mut rng, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = Rng::new(7);
        let hits = (0..DRAWS)
            .filter(|_| sample_categorical(&mut rng, &[1.0, 1.0]).unwrap() == 0)
            .count();
        let f = hits as f64 / DRAWS as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");

        let mut counts = [0usize; 3];
        for _ in 0..DRAWS {
            counts[sample_categorical(&mut rng, &[2.0, 1.0, 1.0]).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.25, 0.25]) {
            let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
            assert!((*c as f64 / DRAWS as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn log_categorical_survives_underflow() {
        let mut rng = Rng::new(8);
        let idx = sample_log_categorical(&mut rng, &[-2000.0, -1000.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(idx, 1);
        assert!(sample_log_categorical(&mut rng, &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn logpdf_values() {
        assert_abs_diff_eq!(logpdf_normal(0.0, 0.0, 1.0).unwrap(), -0.918939, epsilon = 1e-6);
        let v = 3.7;
        assert_abs_diff_eq!(
            logpdf_normal(1.2, 1.2, v).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI * v).ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            logpdf_normal(0.0, 0.0, 2.0).unwrap(),
            -0.5 * (4.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
        assert!(logpdf_normal(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        let g = GammaParams::new(2.5, 0.7).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_gamma(&mut a, g).unwrap(), sample_gamma(&mut b, g).unwrap());
            assert_eq!(sample_beta(&mut a, 1.5, 2.0).unwrap(), sample_beta(&mut b, 1.5, 2.0).unwrap());
            assert_eq!(a.standard_normal(), b.standard_normal());
            assert_eq!(
                sample_categorical(&mut a, &[0.2, 0.3, 0.5]).unwrap(),
                sample_categorical(&mut b, &[0.2, 0.3, 0.5]).unwrap()
            );
        }
    }
}
