//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use crate::error::{FedError, Result};
use crate::numkit::{DenseMatrix, DenseVector};

/// `A = U · diag(sigma) · Vᵀ` with `k = min(rows, cols)` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Descending, nonnegative.
    pub sigma: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(&self.sigma)
    }

    /// `U · diag(values) · Vᵀ` using the stored singular vectors.
    pub fn reconstruct_with(&self, values: &[f64]) -> DenseMatrix {
        let (rows, k) = self.u.shape();
        let cols = self.v.rows();
        let mut out = DenseMatrix::zeros(rows, cols);
        for (j, s) in values.iter().enumerate().take(k) {
            if *s == 0.0 {
                continue;
            }
            for i in 0..rows {
                let us = self.u[(i, j)] * s;
                if us == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (c, o) in row.iter_mut().enumerate() {
                    *o += us * self.v[(c, j)];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Relative off-diagonal tolerance `|⟨a_p, a_q⟩| ≤ tol · ‖a_p‖‖a_q‖`.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_sweeps: 60 }
    }
}

pub fn svd(a: &DenseMatrix) -> Result<SvdResult> {
    svd_with(a, SvdOptions::default())
}

pub fn svd_with(a: &DenseMatrix, opts: SvdOptions) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(FedError::NonFinite("svd input"));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a, opts)
    } else {
        let t = jacobi_tall(&a.transpose(), opts)?;
        Ok(SvdResult { u: t.v, sigma: t.sigma, v: t.u })
    }
}

pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.sigma.iter().sum())
}

pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.sigma.first().copied().unwrap_or(0.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(p: &mut [f64], q: &mut [f64], c: f64, s: f64) {
    for (x, y) in p.iter_mut().zip(q.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Requires `rows >= cols`.
fn jacobi_tall(a: &DenseMatrix, opts: SvdOptions) -> Result<SvdResult> {
    let (rows, cols) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j).into_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == opts.max_sweeps {
            return Err(FedError::Numerical(format!(
                "one-sided Jacobi SVD did not converge in {} sweeps ({}x{} matrix, Frobenius norm {:e})",
                opts.max_sweeps,
                rows,
                cols,
                a.frobenius_norm()
            )));
        }
        sweeps += 1;
        converged = true;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= f64::MIN_POSITIVE || gamma.abs() <= opts.tolerance * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let negligible = f64::EPSILON * sigma_max.max(f64::MIN_POSITIVE) * rows as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > negligible {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            deficient.push(k);
        }
    }
    for k in deficient {
        let col = orthonormal_completion(&u_cols, k, rows);
        u_cols[k] = col;
    }

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = DenseMatrix::from_fn(rows, cols, |i, k| u_cols[k][i]);
    let vm = DenseMatrix::from_fn(cols, cols, |i, k| v[order[k]][i]);
    Ok(SvdResult { u, sigma, v: vm })
}

/// A unit vector orthogonal to every nonzero column in `cols` other than `skip`.
fn orthonormal_completion(cols: &[Vec<f64>], skip: usize, rows: usize) -> Vec<f64> {
    let mut best = vec![0.0; rows];
    let mut best_norm = -1.0;
    for e in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj = dot(&cand, c);
                if proj != 0.0 {
                    cand.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
                }
            }
        }
        let n = dot(&cand, &cand).sqrt();
        if n > best_norm {
            best_norm = n;
            best = cand;
        }
        if n > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Singular values only, as a vector.
pub fn singular_values(a: &DenseMatrix) -> Result<DenseVector> {
    DenseVector::new(svd(a)?.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_invariants(a: &DenseMatrix, s: &SvdResult) {
        let scale = a.frobenius_norm().max(1.0);
        let err = a.sub(&s.reconstruct()).frobenius_norm();
        assert!(err <= 1e-8 * scale, "reconstruction error {err}");
        for w in s.sigma.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(s.sigma.iter().all(|x| *x >= 0.0));
        for m in [&s.u, &s.v] {
            let g = m.gram();
            let k = g.rows();
            let dev = g.sub(&DenseMatrix::identity(k)).frobenius_norm();
            assert!(dev <= 1e-8, "orthonormality deviation {dev}");
        }
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        let s = svd(&DenseMatrix::from_diag(&[2.0, 5.0])).unwrap();
        assert_eq!(s.sigma, vec![5.0, 2.0]);
    }

    #[test]
    fn rank_deficient_and_wide() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.v.shape(), (3, 2));
        assert!(s.sigma[1].abs() < 1e-12);
        check_invariants(&a, &s);

        let z = DenseMatrix::zeros(4, 3);
        let s = svd(&z).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        check_invariants(&z, &s);
    }

    #[test]
    fn sweep_limit_reports_failure() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let err = svd_with(&a, SvdOptions { tolerance: 0.0, max_sweeps: 0 }).unwrap_err();
        assert!(matches!(err, FedError::Numerical(msg) if msg.contains("Frobenius")));
    }
}
