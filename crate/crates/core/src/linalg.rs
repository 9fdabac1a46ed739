//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::Real;

pub type Mat<T> = DMatrix<T>;
pub type Vect<T> = DVector<T>;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &Mat<T>) -> Mat<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn all_finite<T: Real>(m: &Mat<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec<T: Real>(v: &Vect<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// First non-finite entry of `m`, as `(row, col)`.
pub fn first_non_finite<T: Real>(m: &Mat<T>) -> Option<(usize, usize)> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue<T: Real>(m: &Mat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let eig = symmetrize(m).symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |a, b| a.min(b))
}

/// Largest absolute entry; `0` for empty matrices.
pub fn max_abs<T: Real>(m: &Mat<T>) -> T {
    m.iter().fold(T::zero(), |a, b| a.max(b.abs()))
}

/// Spectral norm (largest singular value).
pub fn op_norm<T: Real>(m: &Mat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().svd(false, false).singular_values.iter().fold(T::zero(), |a, b| a.max(*b))
}

/// Solves `h x = rhs` for symmetric positive-definite `h`. `None` when the
/// Cholesky factorization fails.
pub fn spd_solve<T: Real>(h: &Mat<T>, rhs: &Mat<T>) -> Option<Mat<T>> {
    let chol = h.clone().cholesky()?;
    Some(chol.solve(rhs))
}

pub fn spd_solve_vec<T: Real>(h: &Mat<T>, rhs: &Vect<T>) -> Option<Vect<T>> {
    let chol = h.clone().cholesky()?;
    Some(chol.solve(rhs))
}

/// Symmetric square-root factor `F` with `F Fᵀ = m` for a PSD matrix.
/// Negative eigenvalues from round-off are clipped to zero.
pub fn psd_factor<T: Real>(m: &Mat<T>) -> Mat<T> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&roots)
}

/// `true` when all eigenvalues of the symmetric matrix are at least
/// `-tol * max(1, ‖m‖_F)`.
pub fn is_psd<T: Real>(m: &Mat<T>, tol: T) -> bool {
    if m.is_empty() {
        return true;
    }
    let scale = m.norm().max(T::one());
    min_eigenvalue(m) >= -tol * scale
}

pub fn is_symmetric_exact<T: Real>(m: &Mat<T>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}
