//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor, or `None` if the matrix is not numerically PD.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.unpack())
}

/// Cholesky with escalating diagonal jitter.
///
/// Tries `m` as given, then `m + j·I` for `j = base, 10·base, ...` (`attempts`
/// jittered tries). Returns the factor and the jitter that was used.
pub fn cholesky_escalating(
    m: &DMatrix<f64>,
    base_jitter: f64,
    attempts: usize,
) -> Option<(DMatrix<f64>, f64)> {
    if let Some(l) = cholesky_lower(m) {
        return Some((l, 0.0));
    }
    let mut jitter = base_jitter;
    for _ in 0..attempts {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(l) = cholesky_lower(&shifted) {
            return Some((l, jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Mean of the diagonal; 1.0 for an empty matrix.
pub fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.diagonal().mean()
    }
}

/// `log det(L Lᵀ)` from a lower factor.
pub fn logdet_from_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Replace `m` with `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a lower-triangular matrix with positive diagonal.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::identity(n, n);
    l.solve_lower_triangular_mut(&mut inv);
    // Clear round-off above the diagonal so products stay triangular.
    for j in 0..n {
        for i in 0..j {
            inv[(i, j)] = 0.0;
        }
    }
    inv
}

/// A matrix square root `S` with `S Sᵀ ≈ m` for a symmetric PSD `m`.
///
/// Cholesky is attempted with jitter `1e-10·mean diag`, escalated ×10 for three
/// attempts; if all fail the symmetric eigendecomposition is used with negative
/// eigenvalues clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let scale = mean_diagonal(m).abs().max(f64::MIN_POSITIVE);
    if let Some((l, _)) = cholesky_escalating(m, 1e-10 * scale, 3) {
        return Ok(l);
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(
            "matrix square root of non-finite matrix".into(),
        ));
    }
    let eig = sym.symmetric_eigen();
    let mut s = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        s.column_mut(j).scale_mut(r);
    }
    Ok(s)
}

/// Solve `A x = b` given the lower Cholesky factor of `A`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// `A⁻¹` from the lower Cholesky factor of `A`.
pub fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let li = lower_inverse(l);
    li.tr_mul(&li)
}

/// Relative symmetric error `max|m − mᵀ| / max(1, max|m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}
