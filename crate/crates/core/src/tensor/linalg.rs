use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;
/// First jitter tried when the plain factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-9;

fn check_symmetric(k: &Matrix) -> Result<()> {
    if k.rows() != k.cols() {
        return Err(Error::shape("symmetric matrix", k.shape(), (k.cols(), k.rows())));
    }
    let asym = k.max_asymmetry();
    if asym > SYMMETRY_TOL * k.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Plain Cholesky factor `L` with `L Lᵀ = K`, or `None` if `K` is not
/// numerically positive definite.
pub fn cholesky(k: &Matrix) -> Option<Matrix> {
    let n = k.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = k.get(j, j);
        for p in 0..j {
            d -= l.get(j, p) * l.get(j, p);
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = k.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

/// Cholesky factor with jitter escalation.
///
/// The unmodified matrix is tried first; after that `start_jitter · I` is
/// added and multiplied by ten until [`MAX_JITTER`]. Returns the factor and
/// the jitter that was used (0 for none).
pub fn cholesky_jittered(k: &Matrix, start_jitter: f64) -> Result<(Matrix, f64)> {
    check_symmetric(k)?;
    if let Some(l) = cholesky(k) {
        return Ok((l, 0.0));
    }
    let mut jitter = start_jitter.max(f64::MIN_POSITIVE);
    loop {
        let mut kj = k.clone();
        for i in 0..kj.rows() {
            let v = kj.get(i, i);
            kj.set(i, i, v + jitter);
        }
        if let Some(l) = cholesky(&kj) {
            return Ok((l, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Factorization { jitter });
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn lower_triangular_inverse(l: &Matrix) -> Matrix {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for p in col..i {
                s -= l.get(i, p) * inv.get(p, col);
            }
            inv.set(i, col, s / l.get(i, i));
        }
    }
    inv
}

/// Inverse square root of a symmetric positive definite matrix, `M = L⁻¹`
/// for the Cholesky factor `L`, so that `M K Mᵀ = I`.
///
/// This is the triangular (not the symmetric) root: `K Mᵀ = L`, and
/// `K(x,Z) Mᵀ` has inner products `K(x,Z) K⁻¹ K(Z,x')`.
pub fn chol_inverse_sqrt(k: &Matrix, jitter: f64) -> Result<Matrix> {
    let (l, _) = cholesky_jittered(k, jitter)?;
    Ok(lower_triangular_inverse(&l))
}

/// Solves `K X = B` for symmetric positive definite `K`.
pub fn spd_solve(k: &Matrix, b: &Matrix) -> Result<Matrix> {
    if k.rows() != b.rows() {
        return Err(Error::shape("spd_solve", k.shape(), b.shape()));
    }
    let (l, _) = cholesky_jittered(k, DEFAULT_JITTER)?;
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // L y = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for p in 0..i {
                s -= l.get(i, p) * x.get(p, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for p in (i + 1)..n {
                s -= l.get(p, i) * x.get(p, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// General square solve by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::shape("solve", a.shape(), b.shape()));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        if m.get(pivot, col).abs() < 1e-300 {
            return Err(Error::InvalidArgument("singular matrix in solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                let t = m.get(col, j);
                m.set(col, j, m.get(pivot, j));
                m.set(pivot, j, t);
            }
            for j in 0..x.cols() {
                let t = x.get(col, j);
                x.set(col, j, x.get(pivot, j));
                x.set(pivot, j, t);
            }
        }
        let d = m.get(col, col);
        for i in (col + 1)..n {
            let f = m.get(i, col) / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m.set(i, j, m.get(i, j) - f * m.get(col, j));
            }
            for j in 0..x.cols() {
                x.set(i, j, x.get(i, j) - f * x.get(col, j));
            }
        }
    }
    for col in (0..n).rev() {
        let d = m.get(col, col);
        for j in 0..x.cols() {
            let mut s = x.get(col, j);
            for p in (col + 1)..n {
                s -= m.get(col, p) * x.get(p, j);
            }
            x.set(col, j, s / d);
        }
    }
    Ok(x)
}

/// 1-norm condition number estimate via an explicit inverse. Only meant for
/// the small matrices used in the equivalence checks.
pub fn condition_number(a: &Matrix) -> f64 {
    let n = a.rows();
    let Ok(inv) = solve(a, &Matrix::identity(n)) else {
        return f64::INFINITY;
    };
    let norm1 = |m: &Matrix| (0..m.cols()).map(|j| (0..m.rows()).map(|i| m.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max);
    norm1(a) * norm1(&inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.sub(b).unwrap().max_abs() <= tol
    }

    #[test]
    fn identity_inverse_sqrt_is_identity() {
        let m = chol_inverse_sqrt(&Matrix::identity(3), DEFAULT_JITTER).unwrap();
        assert!(close(&m, &Matrix::identity(3), 0.0));
    }

    #[test]
    fn scaled_identity() {
        let m = chol_inverse_sqrt(&Matrix::identity(4).scale(4.0), DEFAULT_JITTER).unwrap();
        assert!(close(&m, &Matrix::identity(4).scale(0.5), 1e-15));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let k = Matrix::new(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(chol_inverse_sqrt(&k, DEFAULT_JITTER), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn singular_psd_needs_jitter() {
        // rank one
        let k = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (_, jitter) = cholesky_jittered(&k, DEFAULT_JITTER).unwrap();
        assert!(jitter > 0.0 && jitter <= MAX_JITTER);
    }

    #[test]
    fn indefinite_matrix_fails_after_escalation() {
        let k = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(chol_inverse_sqrt(&k, DEFAULT_JITTER), Err(Error::Factorization { .. })));
    }

    #[test]
    fn solvers_agree() {
        let a = Matrix::new(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let b = Matrix::column(vec![1.0, -2.0, 0.5]);
        let x1 = spd_solve(&a, &b).unwrap();
        let x2 = solve(&a, &b).unwrap();
        assert!(close(&x1, &x2, 1e-12));
        assert!(close(&a.matmul(&x1).unwrap(), &b, 1e-12));
    }
}
