//! Client sampling and the deterministic aggregation folds.

use rand::seq::index;

use crate::error::{FedError, Result};
use crate::numkit::{DenseMatrix, DenseVector};
use crate::problems::Model;
use crate::sim::topology::{validate_mixing, TreeTopology};
use crate::sim::Rng;

/// Anything that can be viewed as a flat list of reals and rebuilt with the same shape.
pub trait Parameters: Sized {
    fn values(&self) -> Vec<f64>;
    fn with_values(&self, values: Vec<f64>) -> Result<Self>;
}

impl Parameters for DenseVector {
    fn values(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }
    fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(FedError::dim("vector length changed during aggregation"));
        }
        DenseVector::new(values)
    }
}

impl Parameters for DenseMatrix {
    fn values(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }
    fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        DenseMatrix::new(self.rows(), self.cols(), values)
    }
}

impl Parameters for Model {
    fn values(&self) -> Vec<f64> {
        self.flatten()
    }
    fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        crate::problems::rebuild_like(self, values)
    }
}

/// Uniform sample without replacement of `⌈fraction·N⌉` clients, sorted ascending.
pub fn sample_clients(n: usize, fraction: f64, rng: &Rng, round: usize) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FedError::param(format!("sampling fraction must lie in (0, 1], got {fraction}")));
    }
    // guard against 0.3 * 10 = 3.0000000000000004
    let k = ((fraction * n as f64) * (1.0 - 1e-12)).ceil() as usize;
    if k == 0 {
        return Err(FedError::param(format!("fraction {fraction} of {n} clients samples nobody")));
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let mut stream = rng.stream("sample", round as u64, 0);
    let mut ids = index::sample(&mut stream, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `Σ w_i m_i / Σ w_i`, folded in input order.
pub fn weighted_average<P: Parameters>(models: &[P], weights: &[f64]) -> Result<P> {
    if models.is_empty() {
        return Err(FedError::param("cannot average an empty model list"));
    }
    if models.len() != weights.len() {
        return Err(FedError::dim(format!("{} models but {} weights", models.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(FedError::param("aggregation weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(FedError::param("aggregation weights sum to zero"));
    }
    let mut acc = vec![0.0; models[0].values().len()];
    for (m, &w) in models.iter().zip(weights) {
        let v = m.values();
        if v.len() != acc.len() {
            return Err(FedError::dim("models of different shapes cannot be averaged"));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    models[0].with_values(acc)
}

/// One gossip exchange: `out_i = Σ_j W_ij model_j`.
pub fn gossip_mix<P: Parameters>(models: &[P], w: &DenseMatrix) -> Result<Vec<P>> {
    validate_mixing(w)?;
    if w.rows() != models.len() {
        return Err(FedError::dim(format!("mixing matrix is {0}x{0} but {1} models were given", w.rows(), models.len())));
    }
    let values: Vec<Vec<f64>> = models.iter().map(|m| m.values()).collect();
    let len = values.first().map_or(0, |v| v.len());
    if values.iter().any(|v| v.len() != len) {
        return Err(FedError::dim("models of different shapes cannot be mixed"));
    }
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut out = vec![0.0; len];
            for (j, v) in values.iter().enumerate() {
                let wij = w[(i, j)];
                if wij != 0.0 {
                    out.iter_mut().zip(v).for_each(|(o, x)| *o += wij * x);
                }
            }
            m.with_values(out)
        })
        .collect()
}

/// Hierarchical weighted mean: each node forwards the weighted mean of its children
/// together with their total weight.
pub fn tree_aggregate<P: Parameters>(models: &[P], tree: &TreeTopology, weights: &[f64]) -> Result<P> {
    tree.validate()?;
    if models.len() != tree.num_clients() || weights.len() != models.len() {
        return Err(FedError::Topology(format!(
            "tree has {} clients but {} models and {} weights were given",
            tree.num_clients(),
            models.len(),
            weights.len()
        )));
    }
    let mut current: Vec<Vec<f64>> = models.iter().map(|m| m.values()).collect();
    let mut current_w: Vec<f64> = weights.to_vec();
    for level in tree.levels() {
        let width = level.iter().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<P>> = Vec::new();
        let mut member_w: Vec<Vec<f64>> = vec![Vec::new(); width];
        members.resize_with(width, Vec::new);
        for (child, &parent) in level.iter().enumerate() {
            members[parent].push(models[0].with_values(current[child].clone())?);
            member_w[parent].push(current_w[child]);
        }
        let mut next = Vec::with_capacity(width);
        let mut next_w = Vec::with_capacity(width);
        for (ms, ws) in members.iter().zip(&member_w) {
            let total: f64 = ws.iter().sum();
            next.push(if total > 0.0 { weighted_average(ms, ws)?.values() } else { vec![0.0; current[0].len()] });
            next_w.push(total);
        }
        current = next;
        current_w = next_w;
    }
    if current_w[0] <= 0.0 {
        return Err(FedError::param("aggregation weights sum to zero"));
    }
    models[0].with_values(current.swap_remove(0))
}
