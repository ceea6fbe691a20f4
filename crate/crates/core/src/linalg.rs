//! Dense symmetric eigen helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs sorted by ascending eigenvalue, vectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn normalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, ascending order.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> EigenPairs {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(&order);
    normalize_signs(&mut vectors);
    EigenPairs { values, vectors }
}

/// Solves the symmetric-definite pencil `A v = λ C v` by reducing it with
/// the Cholesky factor `C = L Lᵀ` to the standard problem
/// `L⁻¹ A L⁻ᵀ w = λ w`, `v = L⁻ᵀ w`. The returned vectors satisfy
/// `Vᵀ C V = I`. Fails when `C` is not positive definite.
pub fn generalized_symmetric_eigen(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<EigenPairs> {
    let k = a.nrows();
    if a.shape() != (k, k) || c.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "pencil shapes {:?} and {:?} must be equal and square",
            a.shape(),
            c.shape()
        )));
    }
    let c_sym = (c + c.transpose()) * 0.5;
    let l = c_sym
        .cholesky()
        .ok_or_else(|| Error::Numerical("constraint matrix is not positive definite".into()))?
        .l();
    let a_sym = (a + a.transpose()) * 0.5;
    let y = l
        .solve_lower_triangular(&a_sym)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let reduced = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let std = symmetric_eigen(&reduced);
    let mut vectors = l
        .transpose()
        .solve_upper_triangular(&std.vectors)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    normalize_signs(&mut vectors);
    Ok(EigenPairs {
        values: std.values,
        vectors,
    })
}
