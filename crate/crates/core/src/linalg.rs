//! Small dense linear-algebra helpers.
//!
//! Linear solves delegate to `nalgebra`. The symmetric eigensolver is a
//! cyclic Jacobi iteration: feature dimensions here stay small (d ≤ 64) and
//! Jacobi is deterministic and keeps the iterate exactly symmetric.

use nalgebra::{DMatrix, DVector};

/// Solves `a · x = b` by LU with partial pivoting. `a` is row-major `n × n`.
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = DVector::from_column_slice(b);
    m.lu().solve(&rhs).map(|x| x.as_slice().to_vec())
}

/// Solves a symmetric positive-definite system by Cholesky.
pub fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = DVector::from_column_slice(b);
    m.cholesky().map(|c| c.solve(&rhs).as_slice().to_vec())
}

/// Eigenvalues of a symmetric row-major `n × n` matrix, ascending.
///
/// Sweeps rotate every off-diagonal pair in row order until the
/// off-diagonal Frobenius mass drops below `tol` relative to the total.
pub fn symmetric_eigenvalues(a: &[f64], n: usize, tol: f64) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "matrix must be n × n");
    let mut m = a.to_vec();
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= 1 || total == 0.0 {
        let mut d: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
        d.sort_by(f64::total_cmp);
        return d;
    }
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                // exact symmetry and zeroed pivot
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    d.sort_by(f64::total_cmp);
    d
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
