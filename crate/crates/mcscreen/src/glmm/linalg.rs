//! Small dense symmetric linear algebra: Cholesky factor, solve, inverse.
//! Fixed-effect designs here have at most a couple dozen columns, so a
//! hand-rolled O(p^3) routine is plenty.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// (row-major, square). Returns None when the matrix is not PD.
pub(crate) fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    Some(l)
}

/// Solves A x = b given A's Cholesky factor L (A = L L^T).
pub(crate) fn chol_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    // forward: L y = b
    for i in 0..p {
        let mut sum = x[i];
        for k in 0..i {
            sum -= l[i * p + k] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    // backward: L^T x = y
    for i in (0..p).rev() {
        let mut sum = x[i];
        for k in (i + 1)..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub(crate) fn chol_inverse(l: &[f64], p: usize) -> Vec<f64> {
    let mut inv = vec![0.0; p * p];
    let mut unit = vec![0.0; p];
    for j in 0..p {
        unit.iter_mut().for_each(|v| *v = 0.0);
        unit[j] = 1.0;
        let col = chol_solve(l, p, &unit);
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    // symmetrize against rounding
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (inv[i * p + j] + inv[j * p + i]);
            inv[i * p + j] = m;
            inv[j * p + i] = m;
        }
    }
    inv
}

/// Inverts a symmetric matrix, escalating a diagonal jitter when it is not
/// numerically PD. Returns the inverse and the jitter used.
pub(crate) fn robust_inverse(a: &[f64], p: usize) -> Option<(Vec<f64>, f64)> {
    for jitter in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut work = a.to_vec();
        if jitter > 0.0 {
            let scale: f64 = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(1.0);
            for i in 0..p {
                work[i * p + i] += jitter * scale;
            }
        }
        if let Some(l) = cholesky(&work, p) {
            return Some((chol_inverse(&l, p), jitter));
        }
    }
    None
}
