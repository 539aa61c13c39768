use crate::error::{FedError, Result};
use crate::numkit::DenseMatrix;

/// Solve `A x = b` for symmetric positive definite `A` by Cholesky factorization.
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(FedError::dim(format!(
            "spd solve needs square A and matching b, got {}x{} and {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(FedError::Numerical(format!(
                        "matrix is not positive definite (pivot {s:e} at {i})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Largest eigenvalue magnitude of a symmetric linear operator by power iteration.
///
/// The start vector is fixed so the estimate is deterministic.
pub fn power_iteration(dim: usize, iterations: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let mut x: Vec<f64> = (0..dim).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let y = apply(&x);
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        lambda = ny;
        x = y.into_iter().map(|v| v / ny).collect();
    }
    lambda
}
