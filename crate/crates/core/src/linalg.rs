//! Dense linear algebra for the small matrices that appear here (random
//! effect covariances, per-subject normal equations, spline constraint
//! projections). Matrices are row-major `&[f64]` with an explicit dimension.

use crate::error::{Error, Result};
use crate::prelude::*;

/// Lower Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L x = b` in place.
pub fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn solve_lower_transpose(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Solves `A x = b` in place given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    solve_lower(l, n, b);
    solve_lower_transpose(l, n, b);
}

/// `A⁻¹` from the Cholesky factor of `A`.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve(l, n, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    symmetrize(&mut inv, n);
    inv
}

/// `log det A` from the Cholesky factor of `A`.
pub fn cholesky_log_det(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// `out = L z` for lower-triangular `L`.
pub fn lower_mul(l: &[f64], n: usize, z: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..=i).map(|k| l[i * n + k] * z[k]).sum();
    }
}

/// `out = A x`.
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = (0..cols).map(|k| a[i * cols + k] * x[k]).sum();
    }
}

pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
}

/// Log density of `N(mean, A)` at `x` given the Cholesky factor of `A`.
pub fn mvn_log_density(x: &[f64], mean: &[f64], l: &[f64], n: usize) -> f64 {
    let mut r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    solve_lower(l, n, &mut r);
    let quad: f64 = r.iter().map(|v| v * v).sum();
    -0.5 * (n as f64 * (2.0 * core::f64::consts::PI).ln() + cholesky_log_det(l, n) + quad)
}

/// Full orthogonal factor `Q` (rows × rows) of the Householder QR
/// decomposition of `a` (rows × cols, rows ≥ cols).
pub fn householder_q(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut r = a.to_vec();
    let mut q = vec![0.0; rows * rows];
    for i in 0..rows {
        q[i * rows + i] = 1.0;
    }
    for k in 0..cols.min(rows.saturating_sub(1)) {
        let norm = (k..rows).map(|i| r[i * cols + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; rows];
        for i in k..rows {
            v[i] = r[i * cols + k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // R <- H R
        for j in 0..cols {
            let dot: f64 = (k..rows).map(|i| v[i] * r[i * cols + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..rows {
                r[i * cols + j] -= f * v[i];
            }
        }
        // Q <- Q H
        for i in 0..rows {
            let dot: f64 = (k..rows).map(|j| q[i * rows + j] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k..rows {
                q[i * rows + j] -= f * v[j];
            }
        }
    }
    q
}

/// Solves the symmetric positive-definite system `A x = b`, returning `x`.
pub fn spd_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a, n)?;
    let mut x = b.to_vec();
    cholesky_solve(&l, n, &mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_roundtrip_and_inverse() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        let inv = cholesky_inverse(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert_eq!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn householder_q_is_orthogonal_and_spans_columns() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 0.5, -1.0];
        let (rows, cols) = (4, 2);
        let q = householder_q(&a, rows, cols);
        for i in 0..rows {
            for j in 0..rows {
                let v: f64 = (0..rows).map(|k| q[k * rows + i] * q[k * rows + j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12);
            }
        }
        // trailing columns of Q are orthogonal to the columns of A
        for c in cols..rows {
            for j in 0..cols {
                let v: f64 = (0..rows).map(|k| q[k * rows + c] * a[k * cols + j]).sum();
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mvn_density_matches_univariate() {
        let l = cholesky(&[4.0], 1).unwrap();
        let got = mvn_log_density(&[1.0], &[0.0], &l, 1);
        let expected = -0.5 * (2.0 * core::f64::consts::PI * 4.0).ln() - 1.0 / 8.0;
        assert!((got - expected).abs() < 1e-14);
    }
}
