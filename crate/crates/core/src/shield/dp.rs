use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::DenseVector;
use crate::sim::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpMechanism {
    Laplace,
    Gaussian,
}

/// Clip-then-perturb privacy mechanism applied to each upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSpec {
    pub mechanism: DpMechanism,
    pub epsilon: f64,
    pub delta: f64,
    /// Clip norm `C`: l1 for Laplace, l2 for Gaussian.
    pub clip: f64,
}

impl DpSpec {
    pub fn laplace(epsilon: f64, clip: f64) -> Result<Self> {
        Self { mechanism: DpMechanism::Laplace, epsilon, delta: 0.0, clip }.validated()
    }

    pub fn gaussian(epsilon: f64, delta: f64, clip: f64) -> Result<Self> {
        Self { mechanism: DpMechanism::Gaussian, epsilon, delta, clip }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(FedError::param(format!("privacy epsilon must be positive, got {}", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(FedError::param(format!("privacy delta must lie in [0, 1), got {}", self.delta)));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(FedError::param(format!("clip norm must be positive, got {}", self.clip)));
        }
        if self.mechanism == DpMechanism::Gaussian && self.delta == 0.0 {
            return Err(FedError::param("the gaussian mechanism needs delta > 0"));
        }
        Ok(self)
    }

    /// Per-coordinate noise scale: the Laplace scale `C/ε` or the Gaussian `σ`.
    pub fn noise_scale(&self) -> f64 {
        match self.mechanism {
            DpMechanism::Laplace => self.clip / self.epsilon,
            DpMechanism::Gaussian => self.clip * (2.0 * (1.25 / self.delta).ln()).sqrt() / self.epsilon,
        }
    }
}

pub fn clip_l2(v: &DenseVector, c: f64) -> DenseVector {
    let n = v.norm2();
    if n > c {
        v.scaled(c / n)
    } else {
        v.clone()
    }
}

pub fn clip_l1(v: &DenseVector, c: f64) -> DenseVector {
    let n = v.norm1();
    if n > c {
        v.scaled(c / n)
    } else {
        v.clone()
    }
}

/// Clips `update` and adds i.i.d. noise calibrated to `spec`.
pub fn dp_perturb(update: &DenseVector, spec: &DpSpec, rng: &mut impl rand::Rng) -> Result<DenseVector> {
    let spec = spec.validated()?;
    let scale = spec.noise_scale();
    let out = match spec.mechanism {
        DpMechanism::Laplace => {
            let clipped = clip_l1(update, spec.clip);
            clipped.map(|x| {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                x + scale * (a - b)
            })
        }
        DpMechanism::Gaussian => clip_l2(update, spec.clip).map(|x| x + scale * standard_normal(rng)),
    };
    if !out.is_finite() {
        return Err(FedError::NonFinite("dp_perturb"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_checks() {
        assert!(DpSpec::gaussian(1.0, 0.0, 1.0).is_err());
        assert!(DpSpec::laplace(0.0, 1.0).is_err());
        assert!(DpSpec::laplace(1.0, -1.0).is_err());
        assert!(DpSpec::gaussian(1.0, 1e-5, 1.0).is_ok());
    }

    #[test]
    fn clipping_to_unit_norm() {
        let v = DenseVector::new(vec![6.0, 8.0]).unwrap();
        assert!((clip_l2(&v, 1.0).norm2() - 1.0).abs() < 1e-15);
        assert_eq!(clip_l2(&v, 20.0), v);
    }

    #[test]
    fn vanishing_noise_returns_input() {
        let v = DenseVector::new(vec![0.5, -0.25, 1.0]).unwrap();
        let spec = DpSpec::laplace(1e12, 1e6).unwrap();
        let out = dp_perturb(&v, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(out.sub(&v).norm_inf() < 1e-4);
    }
}
