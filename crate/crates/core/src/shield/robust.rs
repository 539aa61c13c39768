use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::DenseVector;

fn check_shapes(vectors: &[DenseVector]) -> Result<usize> {
    let first = vectors.first().ok_or_else(|| FedError::param("robust aggregation needs at least one vector"))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(FedError::dim("robust aggregation inputs differ in length"));
    }
    Ok(first.len())
}

/// Krum scores: sum of squared distances to the `n − f − 2` nearest other vectors.
pub fn krum_scores(vectors: &[DenseVector], f: usize) -> Result<Vec<f64>> {
    check_shapes(vectors)?;
    let n = vectors.len();
    if n < f + 3 {
        return Err(FedError::param(format!("krum with f = {f} needs at least {} vectors, got {n}", f + 3)));
    }
    let keep = n - f - 2;
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<f64> =
                (0..n).filter(|&j| j != i).map(|j| vectors[i].sub(&vectors[j]).norm_sq()).collect();
            d.sort_by(f64::total_cmp);
            d[..keep].iter().sum()
        })
        .collect())
}

/// Index of the lowest Krum score, lowest index on ties.
pub fn krum_select(vectors: &[DenseVector], f: usize) -> Result<usize> {
    let scores = krum_scores(vectors, f)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Coordinate-wise median; the mean of the middle two for an even count.
pub fn coordinate_median(vectors: &[DenseVector]) -> Result<DenseVector> {
    let d = check_shapes(vectors)?;
    let n = vectors.len();
    let mut col = vec![0.0; n];
    let out = (0..d)
        .map(|j| {
            col.iter_mut().zip(vectors).for_each(|(c, v)| *c = v[j]);
            col.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            }
        })
        .collect();
    Ok(DenseVector::from_vec_unchecked(out))
}

/// Coordinate-wise mean after discarding the `⌊βn⌋` smallest and largest values.
pub fn trimmed_mean(vectors: &[DenseVector], beta: f64) -> Result<DenseVector> {
    if !(0.0..0.5).contains(&beta) {
        return Err(FedError::param(format!("trim fraction must lie in [0, 0.5), got {beta}")));
    }
    let d = check_shapes(vectors)?;
    let n = vectors.len();
    let cut = (beta * n as f64).floor() as usize;
    let kept = &mut vec![0.0; n];
    let out = (0..d)
        .map(|j| {
            kept.iter_mut().zip(vectors).for_each(|(c, v)| *c = v[j]);
            kept.sort_by(f64::total_cmp);
            let mid = &kept[cut..n - cut];
            mid.iter().sum::<f64>() / mid.len() as f64
        })
        .collect();
    Ok(DenseVector::from_vec_unchecked(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobustRule {
    Krum { f: usize },
    Median,
    TrimmedMean { beta: f64 },
}

/// A Byzantine-robust replacement for the weighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustAggSpec {
    pub rule: RobustRule,
}

impl RobustAggSpec {
    pub fn new(rule: RobustRule) -> Result<Self> {
        if let RobustRule::TrimmedMean { beta } = rule {
            if !(0.0..0.5).contains(&beta) {
                return Err(FedError::param(format!("trim fraction must lie in [0, 0.5), got {beta}")));
            }
        }
        Ok(Self { rule })
    }

    /// Checks the rule is usable with `n` inputs per round.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        match self.rule {
            RobustRule::Krum { f } if n < f + 3 => Err(FedError::param(format!(
                "krum with f = {f} needs at least {} participating clients, got {n}",
                f + 3
            ))),
            _ => Ok(()),
        }
    }

    pub fn aggregate(&self, vectors: &[DenseVector]) -> Result<DenseVector> {
        match self.rule {
            RobustRule::Krum { f } => Ok(vectors[krum_select(vectors, f)?].clone()),
            RobustRule::Median => coordinate_median(vectors),
            RobustRule::TrimmedMean { beta } => trimmed_mean(vectors, beta),
        }
    }
}
