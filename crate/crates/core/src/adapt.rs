//! Joint-distribution transfer: multi-domain MMD over `(x, ŷ)` with graph,
//! variance and response regularizers, solved as a generalized eigenproblem
//! for the projection `B`.
//!
//! The learned map minimizes
//! `tr(Bᵀ D (S + τL) Dᵀ B) + μ tr(Bᵀ J B)` subject to `Bᵀ (D H Dᵀ) B = I`,
//! whose solution is given by the eigenvectors of the `q` smallest
//! eigenvalues of the pencil `(D M Dᵀ + μJ, D H Dᵀ)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::JointStack;
use crate::error::{Error, Result};
use crate::linalg::{generalized_symmetric_eigen, symmetric_eigen};

/// Jitter escalation stops once the relative factor exceeds this.
const MAX_RELATIVE_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Shrink factor on the z-scored training response.
    pub alpha: f64,
    /// Penalty weight on the response coordinate in `J`.
    pub beta: f64,
    /// Weight of `tr(Bᵀ J B)`.
    pub mu: f64,
    /// Weight of the graph Laplacian term.
    pub tau: f64,
    /// Output dimension.
    pub q: usize,
    pub knn: usize,
    /// Initial diagonal jitter on the variance constraint, relative to
    /// `tr(D H Dᵀ) / (p+1)`.
    pub jitter: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            alpha: 0.25,
            beta: 1.0,
            mu: 1.0,
            tau: 0.1,
            q: 2,
            knn: 5,
            jitter: 1e-8,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("mu", self.mu),
            ("tau", self.tau),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.q == 0 || self.q > p + 1 {
            return Err(Error::param(format!(
                "q must be in 1..={}, got {}",
                p + 1,
                self.q
            )));
        }
        if self.knn == 0 {
            return Err(Error::param("knn must be at least 1"));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::param(format!("jitter must be positive, got {}", self.jitter)));
        }
        Ok(())
    }
}

/// The learned `(p+1) × q` projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub b: DMatrix<f64>,
    pub q: usize,
    /// Meaning of each input row: the feature names, then `"response"`.
    pub input_semantics: Vec<String>,
    /// Absolute jitter that was added to `D H Dᵀ`.
    pub jitter: f64,
    /// Selected generalized eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// MMD matrix over `m+1` domains whose columns are laid out contiguously in
/// the given order: `m/n_k²` inside block `k`, `−1/(n_k n_l)` across blocks.
/// Equals the sum of the pairwise two-domain MMD matrices.
pub fn build_s(domain_sizes: &[usize]) -> Result<DMatrix<f64>> {
    if domain_sizes.len() < 2 {
        return Err(Error::param(format!(
            "MMD matrix needs at least two domains, got {}",
            domain_sizes.len()
        )));
    }
    if domain_sizes.contains(&0) {
        return Err(Error::param("every domain needs at least one instance"));
    }
    let m = (domain_sizes.len() - 1) as f64;
    let n: usize = domain_sizes.iter().sum();
    let block: Vec<usize> = domain_sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &size)| std::iter::repeat_n(k, size))
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (k, l) = (block[i], block[j]);
        let (nk, nl) = (domain_sizes[k] as f64, domain_sizes[l] as f64);
        if k == l {
            m / (nk * nk)
        } else {
            -1.0 / (nk * nl)
        }
    }))
}

/// Squared distance between the mapped means of two instance sets (columns
/// of `dk` and `dl`). `map` is the projection `B`; `None` is the identity.
pub fn pairwise_dist(dk: &DMatrix<f64>, dl: &DMatrix<f64>, map: Option<&DMatrix<f64>>) -> Result<f64> {
    if dk.ncols() == 0 || dl.ncols() == 0 {
        return Err(Error::param("pairwise distance needs non-empty domains"));
    }
    if dk.nrows() != dl.nrows() {
        return Err(Error::Dimension(format!(
            "domains have {} and {} rows",
            dk.nrows(),
            dl.nrows()
        )));
    }
    let mean = |d: &DMatrix<f64>| d.column_mean();
    let diff = mean(dk) - mean(dl);
    Ok(match map {
        Some(b) => (b.transpose() * diff).norm_squared(),
        None => diff.norm_squared(),
    })
}

/// Binary kNN adjacency over the columns of `d` (Euclidean distance, ties
/// broken by index), symmetrized by union, zero diagonal.
pub fn build_knn_graph(d: &DMatrix<f64>, knn: usize) -> Result<DMatrix<f64>> {
    let n = d.ncols();
    if n <= 1 {
        return Err(Error::param("kNN graph needs at least two instances"));
    }
    if knn == 0 || knn >= n {
        return Err(Error::param(format!(
            "knn must be in 1..{n} for {n} instances, got {knn}"
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        dist.clear();
        let ci = d.column(i);
        for j in (0..n).filter(|&j| j != i) {
            dist.push(((ci - d.column(j)).norm_squared(), j));
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in dist.iter().take(knn) {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
    }
    Ok(w)
}

/// Normalized Laplacian `I − Deg^{-1/2} W Deg^{-1/2}`; isolated vertices keep
/// `L_ii = 1`.
pub fn build_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = w
        .row_iter()
        .map(|r| {
            let deg = r.sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let off = w[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// Centering matrix `I − 11ᵀ/N`.
pub fn build_h(n: usize) -> DMatrix<f64> {
    let c = 1.0 / n as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - c } else { -c })
}

/// `diag(1, …, 1, β)` of side `p+1`.
pub fn build_j(p: usize, beta: f64) -> DMatrix<f64> {
    let mut diag = DVector::from_element(p + 1, 1.0);
    diag[p] = beta;
    DMatrix::from_diagonal(&diag)
}

/// Output of [`solve_pencil`].
#[derive(Debug, Clone)]
pub struct PencilSolution {
    pub b: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub jitter: f64,
}

/// Smallest-`q` eigenvectors of `A b = λ (C + jitter·I) b`, starting from
/// `jitter` and escalating it tenfold on Cholesky failure while it stays
/// within `1e-2` of the jitter scale.
pub fn solve_pencil(a: &DMatrix<f64>, c: &DMatrix<f64>, q: usize, jitter: f64, scale: f64) -> Result<PencilSolution> {
    let k = a.nrows();
    if q == 0 || q > k {
        return Err(Error::param(format!("q must be in 1..={k}, got {q}")));
    }
    let mut jitter = jitter;
    loop {
        let shifted = c + DMatrix::identity(k, k) * jitter;
        match generalized_symmetric_eigen(a, &shifted) {
            Ok(e) => {
                return Ok(PencilSolution {
                    b: e.vectors.columns(0, q).into_owned(),
                    eigenvalues: e.values.rows(0, q).into_owned(),
                    jitter,
                })
            }
            Err(Error::Numerical(_)) if jitter > 0.0 && jitter * 10.0 <= MAX_RELATIVE_JITTER * scale => {
                jitter *= 10.0
            }
            Err(e) => return Err(e),
        }
    }
}

/// Jitter scale for a constraint matrix: its mean diagonal, or 1 when zero.
pub fn jitter_scale(c: &DMatrix<f64>) -> f64 {
    let s = c.trace() / c.nrows() as f64;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Solves for the projection given prebuilt `S`, `L`, `H`, `J`.
pub fn solve_transfer(
    stack: &JointStack,
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    cfg: &TransferConfig,
    names: &[String],
) -> Result<(AffineMap, DVector<f64>)> {
    let p = stack.p();
    cfg.validate(p)?;
    let n = stack.len();
    for (name, mat) in [("S", s), ("L", l), ("H", h)] {
        if mat.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "{name} is {:?}, expected {n}x{n}",
                mat.shape()
            )));
        }
    }
    if j.shape() != (p + 1, p + 1) {
        return Err(Error::Dimension(format!("J is {:?}, expected side {}", j.shape(), p + 1)));
    }
    let d = &stack.d;
    let m = s + l * cfg.tau;
    let a = d * m * d.transpose() + j * cfg.mu;
    let c = d * h * d.transpose();
    let scale = jitter_scale(&c);
    let sol = solve_pencil(&a, &c, cfg.q, cfg.jitter * scale, scale)?;
    let mut input_semantics = names.to_vec();
    input_semantics.push("response".into());
    let map = AffineMap {
        b: sol.b,
        q: cfg.q,
        input_semantics,
        jitter: sol.jitter,
        eigenvalues: sol.eigenvalues.iter().copied().collect(),
    };
    Ok((map, sol.eigenvalues))
}

/// Everything built while fitting the transfer stage.
#[derive(Debug, Clone)]
pub struct TransferFit {
    pub map: AffineMap,
    pub eigenvalues: DVector<f64>,
    pub s: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

/// Builds `S`, `L`, `H`, `J` for the stack and solves for the projection.
/// With fewer than two non-empty domains the MMD term is zero; with `τ = 0`
/// the graph is skipped.
pub fn fit_transfer(stack: &JointStack, cfg: &TransferConfig, names: &[String]) -> Result<TransferFit> {
    let n = stack.len();
    cfg.validate(stack.p())?;
    let s = if stack.domain_sizes.len() >= 2 {
        build_s(&stack.domain_sizes)?
    } else {
        DMatrix::zeros(n, n)
    };
    let l = if cfg.tau > 0.0 {
        build_laplacian(&build_knn_graph(&stack.d, cfg.knn)?)
    } else {
        DMatrix::zeros(n, n)
    };
    let h = build_h(n);
    let j = build_j(stack.p(), cfg.beta);
    let (map, eigenvalues) = solve_transfer(stack, &s, &l, &h, &j, cfg, names)?;
    Ok(TransferFit { map, eigenvalues, s, l })
}

/// `Bᵀ · cols`.
pub fn transform(map: &AffineMap, cols: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cols.nrows() != map.b.nrows() {
        return Err(Error::Dimension(format!(
            "map expects {} input rows, got {}",
            map.b.nrows(),
            cols.nrows()
        )));
    }
    Ok(map.b.transpose() * cols)
}

/// Writes a `matrix,index,eigenvalue` CSV with the spectra of `S`, `L` and
/// the selected generalized eigenvalues.
pub fn write_spectrum_csv(fit: &TransferFit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("matrix,index,eigenvalue\n");
    for (name, mat) in [("S", &fit.s), ("L", &fit.l)] {
        for (i, v) in symmetric_eigen(mat).values.iter().enumerate() {
            out.push_str(&format!("{name},{i},{v}\n"));
        }
    }
    for (i, v) in fit.eigenvalues.iter().enumerate() {
        out.push_str(&format!("selected,{i},{v}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Origin;
    use crate::stochastics::Rng;

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.standard_normal())
    }

    fn stack_from(d: DMatrix<f64>, sizes: Vec<usize>) -> JointStack {
        let m = sizes.len() - 1;
        let domain_of = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect();
        let n_tr: usize = sizes[..m].iter().sum();
        let origin = (0..d.ncols())
            .map(|c| if c < n_tr { Origin::Train(c) } else { Origin::Test(c - n_tr) })
            .collect();
        JointStack {
            d,
            domain_sizes: sizes,
            domain_of,
            origin,
            m,
        }
    }

    #[test]
    fn s_small_cases() {
        let s = build_s(&[1, 1]).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let s = build_s(&[1, 1, 1]).unwrap();
        assert_eq!(
            s,
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0])
        );
        assert!(build_s(&[4]).is_err());
        assert!(build_s(&[2, 0]).is_err());
    }

    #[test]
    fn s_rows_sum_to_zero_and_psd() {
        let s = build_s(&[3, 1, 5, 2]).unwrap();
        for r in s.row_iter() {
            assert!(r.sum().abs() < 1e-12);
        }
        assert!(symmetric_eigen(&s).values.min() > -1e-10);
    }

    #[test]
    fn pairwise_dist_cases() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(pairwise_dist(&a, &a, None).unwrap(), 0.0);
        let x0 = DMatrix::from_element(1, 1, 0.0);
        let x2 = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(pairwise_dist(&x0, &x2, None).unwrap(), 4.0);
        assert!(pairwise_dist(&x0, &DMatrix::zeros(1, 0), None).is_err());
    }

    #[test]
    fn three_domain_distance_matches_trace_form() {
        let mut rng = Rng::new(1);
        let sizes = [3, 2, 4];
        let d = random_matrix(&mut rng, 3, 9);
        let b = random_matrix(&mut rng, 3, 2);
        let blocks = [d.columns(0, 3).into_owned(), d.columns(3, 2).into_owned(), d.columns(5, 4).into_owned()];
        let mut total = 0.0;
        for k in 0..3 {
            for l in 0..k {
                total += pairwise_dist(&blocks[k], &blocks[l], Some(&b)).unwrap();
            }
        }
        let s = build_s(&sizes).unwrap();
        let trace = (b.transpose() * &d * s * d.transpose() * &b).trace();
        assert!((total - trace).abs() < 1e-10);
    }

    #[test]
    fn knn_on_a_line() {
        let d = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0]);
        let w = build_knn_graph(&d, 1).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        let full = build_knn_graph(&d, 2).unwrap();
        assert_eq!(full, DMatrix::from_element(3, 3, 1.0) - DMatrix::identity(3, 3));
        assert!(build_knn_graph(&d, 3).is_err());
        assert!(build_knn_graph(&DMatrix::zeros(1, 1), 1).is_err());
    }

    #[test]
    fn laplacian_cases() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(build_laplacian(&w), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let iso = DMatrix::zeros(2, 2);
        assert_eq!(build_laplacian(&iso), DMatrix::identity(2, 2));

        let mut rng = Rng::new(2);
        let d = random_matrix(&mut rng, 3, 12);
        let l = build_laplacian(&build_knn_graph(&d, 3).unwrap());
        let ev = symmetric_eigen(&l).values;
        assert!(ev.min() > -1e-10 && ev.max() < 2.0 + 1e-10);
    }

    #[test]
    fn laplacian_quadratic_form_matches_edge_sum() {
        let mut rng = Rng::new(3);
        let d = random_matrix(&mut rng, 4, 15);
        let b = random_matrix(&mut rng, 4, 2);
        let w = build_knn_graph(&d, 3).unwrap();
        let l = build_laplacian(&w);
        let psi = b.transpose() * &d;
        let deg: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
        let mut direct = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                let diff = psi.column(i) / deg[i].sqrt() - psi.column(j) / deg[j].sqrt();
                direct += 0.5 * w[(i, j)] * diff.norm_squared();
            }
        }
        let trace = (b.transpose() * &d * l * d.transpose() * &b).trace();
        assert!((direct - trace).abs() < 1e-10);
    }

    #[test]
    fn h_and_j() {
        let h = build_h(2);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        let h5 = build_h(5);
        assert!((&h5 * DVector::from_element(5, 1.0)).norm() < 1e-15);
        assert!((&h5 * &h5 - &h5).abs().max() < 1e-15);
        assert_eq!(h5, h5.transpose());
        assert_eq!(build_j(3, 1.0), DMatrix::identity(4, 4));
        assert_eq!(build_j(1, 3.0), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn pencil_diagonal_case() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0]));
        let sol = solve_pencil(&a, &DMatrix::identity(2, 2), 1, 0.0, 1.0).unwrap();
        assert!((sol.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((sol.b[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pencil_escalates_jitter_for_singular_constraint() {
        let a = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sol = solve_pencil(&a, &c, 1, 0.0, 1.0);
        // zero jitter cannot be escalated multiplicatively
        assert!(sol.is_err());
        let sol = solve_pencil(&a, &c, 1, 1e-8, 1.0).unwrap();
        let cj = &c + DMatrix::identity(2, 2) * sol.jitter;
        let gram = sol.b.transpose() * cj * &sol.b;
        assert!((gram[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(solve_pencil(&a, &c, 3, 1e-8, 1.0).is_err());
    }

    #[test]
    fn solve_transfer_constraint_and_objective() {
        let mut rng = Rng::new(4);
        let d = random_matrix(&mut rng, 4, 20);
        let stack = stack_from(d, vec![8, 7, 5]);
        let cfg = TransferConfig {
            q: 2,
            tau: 0.5,
            knn: 4,
            mu: 0.3,
            beta: 2.0,
            ..TransferConfig::default()
        };
        let names: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
        let fit = fit_transfer(&stack, &cfg, &names).unwrap();
        let b = &fit.map.b;
        let n = stack.len();
        let c = &stack.d * build_h(n) * stack.d.transpose() + DMatrix::identity(4, 4) * fit.map.jitter;
        let gram = b.transpose() * c * b;
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        let m = &fit.s + &fit.l * cfg.tau;
        let a = &stack.d * m * stack.d.transpose() + build_j(3, 2.0) * cfg.mu;
        let objective = (b.transpose() * a * b).trace();
        assert!((objective - fit.eigenvalues.sum()).abs() < 1e-8);
        assert_eq!(fit.map.input_semantics.last().unwrap(), "response");
    }

    #[test]
    fn transform_cases() {
        let map = AffineMap {
            b: DMatrix::identity(3, 3),
            q: 3,
            input_semantics: vec![],
            jitter: 0.0,
            eigenvalues: vec![],
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(transform(&map, &x).unwrap(), x);
        let e1 = AffineMap {
            b: DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
            q: 1,
            ..map.clone()
        };
        assert_eq!(transform(&e1, &x).unwrap(), x.rows(0, 1).into_owned());
        assert!(transform(&e1, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = TransferConfig::default();
        assert!(cfg.validate(1).is_ok());
        assert!(TransferConfig { q: 3, ..cfg.clone() }.validate(1).is_err());
        assert!(TransferConfig { q: 0, ..cfg.clone() }.validate(1).is_err());
        assert!(TransferConfig { mu: -1.0, ..cfg.clone() }.validate(1).is_err());
    }
}
