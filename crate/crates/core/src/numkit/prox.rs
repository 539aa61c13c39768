//! Proximal operators of the l1 norm, the nuclear norm and the row-wise l2,1 norm.

use crate::error::{FedError, Result};
use crate::numkit::svd::svd;
use crate::numkit::{DenseMatrix, DenseVector};

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(FedError::param(format!("threshold must be a finite nonnegative number, got {tau}")))
    }
}

/// Scalar shrinkage `sign(x) · max(|x| − tau, 0)`.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// `prox_{tau‖·‖₁}(v)`, applied componentwise.
pub fn soft_threshold_l1(v: &DenseVector, tau: f64) -> Result<DenseVector> {
    check_tau(tau)?;
    Ok(v.map(|x| shrink(x, tau)))
}

/// Singular value thresholding: the exact minimizer of `tau‖Z‖_* + ½‖Z − A‖²_F`.
pub fn svt(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    let s = svd(a)?;
    let shrunk: Vec<f64> = s.sigma.iter().map(|x| (x - tau).max(0.0)).collect();
    Ok(s.reconstruct_with(&shrunk))
}

/// `prox_{tau‖·‖_{2,1}}(U)`: each row `u` becomes `max(1 − tau/‖u‖₂, 0) · u`.
/// Zero rows stay zero.
pub fn row_group_shrink(u: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    let mut out = u.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let factor = if norm > tau { 1.0 - tau / norm } else { 0.0 };
        row.iter_mut().for_each(|x| *x *= factor);
    }
    Ok(out)
}

/// Group shrinkage of a single vector (one row of [`row_group_shrink`]).
pub fn group_shrink(v: &DenseVector, tau: f64) -> Result<DenseVector> {
    check_tau(tau)?;
    let norm = v.norm2();
    let factor = if norm > tau { 1.0 - tau / norm } else { 0.0 };
    Ok(v.scaled(factor))
}

/// `‖U‖_{2,1}`: sum of row l2 norms.
pub fn l21_norm(u: &DenseMatrix) -> f64 {
    (0..u.rows())
        .map(|i| u.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        let v = DenseVector::new(vec![2.0, -0.5, 0.0]).unwrap();
        assert_eq!(soft_threshold_l1(&v, 1.0).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(soft_threshold_l1(&v, 0.0).unwrap(), v);
        let w = DenseVector::new(vec![3.0, -4.0]).unwrap();
        assert_eq!(soft_threshold_l1(&w, 2.5).unwrap().as_slice(), &[0.5, -1.5]);
        assert!(matches!(soft_threshold_l1(&v, -1.0), Err(FedError::Parameter(_))));
    }

    #[test]
    fn svt_examples() {
        let a = DenseMatrix::from_diag(&[3.0, 1.0]);
        let z = svt(&a, 2.0).unwrap();
        let expected = DenseMatrix::from_diag(&[1.0, 0.0]);
        assert!(z.sub(&expected).frobenius_norm() < 1e-12);

        let b = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 4.0, -1.0]]).unwrap();
        assert!(svt(&b, 0.0).unwrap().sub(&b).frobenius_norm() < 1e-8);
        assert!(svt(&b, -0.1).is_err());
    }

    #[test]
    fn row_group_shrink_examples() {
        let u = DenseMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let full = row_group_shrink(&u, 5.0).unwrap();
        assert_eq!(full.row(0), &[0.0, 0.0]);
        let half = row_group_shrink(&u, 2.5).unwrap();
        assert_eq!(half.row(0), &[1.5, 2.0]);
        assert_eq!(half.row(1), &[0.0, 0.0]);
        assert_eq!(row_group_shrink(&u, 0.0).unwrap(), u);
    }
}
