use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::DenseVector;

/// Strictly convex generator `h` of a Bregman distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BregmanGenerator {
    /// `h(x) = ½‖x‖²`
    SquaredEuclidean,
    /// `h(x) = Σ x_j ln x_j`, defined on strictly positive vectors.
    NegativeEntropy,
}

/// `D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩`.
pub fn bregman_distance(x: &DenseVector, y: &DenseVector, h: BregmanGenerator) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FedError::dim(format!("bregman distance of lengths {} and {}", x.len(), y.len())));
    }
    match h {
        BregmanGenerator::SquaredEuclidean => Ok(0.5 * x.sub(y).norm_sq()),
        BregmanGenerator::NegativeEntropy => {
            if x.iter().chain(y.iter()).any(|v| *v <= 0.0) {
                return Err(FedError::Domain(
                    "negative entropy requires strictly positive entries".into(),
                ));
            }
            // Σ x ln(x/y) − x + y, clamped at zero against rounding
            let d: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| a * (a / b).ln() - a + b)
                .sum();
            Ok(d.max(0.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn squared_euclidean() {
        let x = v(&[1.0, 0.0]);
        assert_eq!(bregman_distance(&x, &x, BregmanGenerator::SquaredEuclidean).unwrap(), 0.0);
        let d = bregman_distance(&x, &v(&[0.0, 1.0]), BregmanGenerator::SquaredEuclidean).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn negative_entropy_direct_evaluation() {
        let x = v(&[0.5, 0.5]);
        let y = v(&[0.25, 0.75]);
        // h(x) − h(y) − ⟨ln y + 1, x − y⟩ evaluated term by term
        let h = |p: &[f64]| p.iter().map(|a| a * a.ln()).sum::<f64>();
        let grad_dot: f64 = [0.25f64, 0.75]
            .iter()
            .zip([0.5 - 0.25, 0.5 - 0.75])
            .map(|(yy, dx)| (yy.ln() + 1.0) * dx)
            .sum();
        let expected = h(&[0.5, 0.5]) - h(&[0.25, 0.75]) - grad_dot;
        let d = bregman_distance(&x, &y, BregmanGenerator::NegativeEntropy).unwrap();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.143_841_036_225_890_3).abs() < 1e-12);
        assert!(matches!(
            bregman_distance(&v(&[0.0, 1.0]), &y, BregmanGenerator::NegativeEntropy),
            Err(FedError::Domain(_))
        ));
    }
}
