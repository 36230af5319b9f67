//! Small dense complex-matrix helpers.
//!
//! Every matrix that reaches an inversion in this crate is a Hermitian
//! positive-definite exponent block of at most eight modes, so a Cholesky
//! factorization doubles as the positive-definiteness test and as a stable
//! route to the determinant and the inverse.  Inputs are symmetrized as
//! `(Q + Q†)/2` first; near-singular or badly conditioned blocks are rejected
//! instead of silently amplifying roundoff.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Determinants below this magnitude are treated as singular.
pub const MIN_DET: f64 = 1e-300;
/// One-norm condition estimates above this are rejected.
pub const MAX_COND: f64 = 1e12;

/// `(A + A†)/2`.
pub fn hermitize(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)].conj());
        }
    }
    h
}

/// Largest deviation from Hermitian symmetry, `max |A_ij - conj(A_ji)|`.
pub fn hermitian_deviation(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Errors unless `A` is Hermitian within `tol` relative to its scale.
pub fn require_hermitian(a: &Array2<C64>, tol: f64) -> Result<()> {
    let scale = frobenius(a).max(1.0);
    let dev = hermitian_deviation(a);
    if dev > tol * scale {
        return Err(Error::NotHermitian { max_dev: dev });
    }
    Ok(())
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Max-column-sum (one-) norm.
pub fn one_norm(a: &Array2<C64>) -> f64 {
    let (n, m) = a.dim();
    (0..m)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Cholesky factorization `A = L L†` of a Hermitian positive-definite matrix.
///
/// Returns the lower factor.  The input is symmetrized before use; a
/// non-positive pivot reports which leading minor failed.
pub fn cholesky(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let h = hermitize(a);
    let mut l: Array2<C64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let dj = d.sqrt();
        l[(j, j)] = C64::new(dj, 0.0);
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Determinant and inverse of a Hermitian positive-definite matrix, via
/// Cholesky, with singularity and conditioning guards.
pub fn hpd_det_inverse(a: &Array2<C64>) -> Result<(f64, Array2<C64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((1.0, Array2::zeros((0, 0))));
    }
    let l = cholesky(a)?;
    let mut det = 1.0_f64;
    for j in 0..n {
        det *= l[(j, j)].re * l[(j, j)].re;
    }
    if !det.is_finite() || det.abs() < MIN_DET {
        return Err(Error::SingularMatrix { det_mag: det.abs() });
    }
    // Solve L L† X = I column by column.
    let mut inv: Array2<C64> = Array2::zeros((n, n));
    for col in 0..n {
        // Forward substitution: L y = e_col.
        let mut y = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut s = if i == col { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        // Back substitution: L† x = y.
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)].re;
        }
    }
    let cond = one_norm(a) * one_norm(&inv);
    if !cond.is_finite() || cond > MAX_COND {
        return Err(Error::IllConditioned { cond });
    }
    Ok((det, inv))
}

/// Errors unless `A` is Hermitian positive semidefinite (within `tol` of its
/// scale).  Implemented as a Cholesky attempt with a tolerance shift.
pub fn require_psd(a: &Array2<C64>, tol: f64) -> Result<()> {
    require_hermitian(a, tol)?;
    let n = a.nrows();
    let scale = frobenius(a);
    if scale == 0.0 {
        return Ok(());
    }
    let mut shifted = hermitize(a);
    for i in 0..n {
        shifted[(i, i)] += C64::new(tol * scale, 0.0);
    }
    cholesky(&shifted).map(|_| ()).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => {
            Error::NotPositiveSemidefinite { pivot, value }
        }
        other => other,
    })
}

/// `a · b` for rectangular complex matrices (thin wrapper over `ndarray::dot`).
pub fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b)
}

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let (n, m) = a.dim();
    let mut out = Array2::zeros((m, n));
    for i in 0..n {
        for j in 0..m {
            out[(j, i)] = a[(i, j)].conj();
        }
    }
    out
}

/// Trace.
pub fn trace(a: &Array2<C64>) -> C64 {
    (0..a.nrows()).map(|i| a[(i, i)]).sum()
}

/// `v† A v` for a column vector `v`.
pub fn quad(v: &[C64], a: &Array2<C64>) -> C64 {
    let n = v.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += v[i].conj() * a[(i, j)] * v[j];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn cholesky_recovers_det_and_inverse() {
        // Hermitian positive definite by construction: B†B + I.
        let b = array![
            [c(0.3, 0.1), c(-0.2, 0.4), c(0.0, 0.7)],
            [c(1.1, 0.0), c(0.5, -0.3), c(0.2, 0.2)],
            [c(-0.4, 0.6), c(0.9, 0.1), c(0.3, 0.0)],
        ];
        let mut a = dagger(&b).dot(&b);
        for i in 0..3 {
            a[(i, i)] += c(1.0, 0.0);
        }
        let (det, inv) = hpd_det_inverse(&a).unwrap();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - c(want, 0.0)).norm() < 1e-12);
            }
        }
        // Determinant cross-check against explicit 3x3 cofactor expansion.
        let m = &a;
        let cof = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
        assert!((cof.im).abs() < 1e-12);
        assert!((det - cof.re).abs() < 1e-12 * cof.re.abs());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(2.0, 0.0), c(1.0, 0.0)]];
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn zero_dimensional_matrix_has_unit_determinant() {
        let a: Array2<C64> = Array2::zeros((0, 0));
        let (det, inv) = hpd_det_inverse(&a).unwrap();
        assert_eq!(det, 1.0);
        assert_eq!(inv.dim(), (0, 0));
    }

    #[test]
    fn psd_check_accepts_boundary_and_rejects_negative() {
        // Rank-one projector: PSD but not PD.
        let a = array![[c(1.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(1.0, 0.0)]];
        require_psd(&a, 1e-12).unwrap();
        let b = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1e-3, 0.0)]];
        assert!(require_psd(&b, 1e-12).is_err());
    }
}
