use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{FedError, Result};
use crate::sim::Rng;

const MAX_ATTEMPTS: usize = 1000;

/// Split sample indices across `clients` with Dirichlet(`alpha`) label skew.
///
/// `labels[k]` is the class (or task) of sample `k`. For every class the samples are
/// shuffled and cut according to one Dirichlet draw over clients. Draws that leave a
/// client empty are discarded and redrawn.
pub fn partition_noniid(labels: &[usize], clients: usize, alpha: f64, rng: &Rng) -> Result<Vec<Vec<usize>>> {
    if clients == 0 {
        return Err(FedError::param("need at least one client"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(FedError::param(format!("dirichlet concentration must be positive, got {alpha}")));
    }
    if labels.len() < clients {
        return Err(FedError::param(format!(
            "{} samples cannot cover {clients} clients",
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (k, &c) in labels.iter().enumerate() {
        by_class[c].push(k);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| FedError::param(format!("dirichlet: {e}")))?;

    for attempt in 0..MAX_ATTEMPTS {
        let mut stream = rng.stream("partition", attempt as u64, 0);
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut stream);
            let props = loop {
                let draw: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut stream)).collect();
                let total: f64 = draw.iter().sum();
                if total > 0.0 && total.is_finite() {
                    break draw.into_iter().map(|g| g / total).collect::<Vec<_>>();
                }
            };
            let n = shuffled.len() as f64;
            let mut cum = 0.0;
            let mut start = 0usize;
            for (i, p) in props.iter().enumerate() {
                cum += p;
                let end = if i + 1 == clients { shuffled.len() } else { ((cum * n).round() as usize).min(shuffled.len()) };
                let end = end.max(start);
                parts[i].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            for p in &mut parts {
                p.sort_unstable();
            }
            return Ok(parts);
        }
    }
    Err(FedError::Numerical(format!(
        "no Dirichlet draw covered all {clients} clients after {MAX_ATTEMPTS} attempts"
    )))
}
