use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::DenseVector;

/// Bytes charged for one dense real.
pub const BYTES_PER_REAL: u64 = 8;
/// Bytes charged for one surviving sparse coordinate (index and value).
pub const BYTES_PER_SPARSE_ENTRY: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    Dense,
    Sign,
    StochasticQuant,
    Topk,
    RandomSparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Body {
    Dense(Vec<f64>),
    /// `negative[j]` is the sign bit; every coordinate decodes to `±scale`.
    Sign { negative: Vec<bool>, scale: f64 },
    /// Coordinate `j` decodes to `norm · code_j / levels`.
    Quantized { norm: f64, levels: u32, codes: Vec<i64> },
    Sparse { indices: Vec<usize>, values: Vec<f64> },
}

/// A compressed transmission together with its nominal wire size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedPayload {
    kind: PayloadKind,
    dim: usize,
    body: Body,
    bytes: u64,
}

impl CompressedPayload {
    pub fn kind(&self) -> PayloadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    /// Number of explicitly transmitted coordinates for sparse payloads, else `dim`.
    pub fn nnz(&self) -> usize {
        match &self.body {
            Body::Sparse { indices, .. } => indices.len(),
            _ => self.dim,
        }
    }

    pub fn decompress(&self) -> DenseVector {
        let out = match &self.body {
            Body::Dense(v) => v.clone(),
            Body::Sign { negative, scale } => negative.iter().map(|&n| if n { -scale } else { *scale }).collect(),
            Body::Quantized { norm, levels, codes } => {
                codes.iter().map(|&c| norm * c as f64 / *levels as f64).collect()
            }
            Body::Sparse { indices, values } => {
                let mut v = vec![0.0; self.dim];
                for (&i, &x) in indices.iter().zip(values) {
                    v[i] = x;
                }
                v
            }
        };
        DenseVector::from_vec_unchecked(out)
    }
}

pub fn dense_bytes(dim: usize) -> u64 {
    BYTES_PER_REAL * dim as u64
}

pub fn sign_bytes(dim: usize) -> u64 {
    (dim as u64).div_ceil(8) + BYTES_PER_REAL
}

/// Sign bit plus `⌈log₂(s+1)⌉` magnitude bits per coordinate, and the norm scalar.
pub fn quantized_bytes(dim: usize, levels: u32) -> u64 {
    let magnitude_bits = u64::from(32 - levels.leading_zeros());
    (dim as u64 * (1 + magnitude_bits)).div_ceil(8) + BYTES_PER_REAL
}

pub fn sparse_bytes(nnz: usize) -> u64 {
    BYTES_PER_SPARSE_ENTRY * nnz as u64
}

pub fn dense_payload(g: &DenseVector) -> CompressedPayload {
    CompressedPayload {
        kind: PayloadKind::Dense,
        dim: g.len(),
        bytes: dense_bytes(g.len()),
        body: Body::Dense(g.as_slice().to_vec()),
    }
}

/// `(‖g‖₁/d)·sign(g)` with `sign(0) = +1`.
pub fn sign_quantize(g: &DenseVector) -> Result<CompressedPayload> {
    if g.is_empty() {
        return Err(FedError::param("cannot sign-compress an empty vector"));
    }
    let d = g.len();
    Ok(CompressedPayload {
        kind: PayloadKind::Sign,
        dim: d,
        bytes: sign_bytes(d),
        body: Body::Sign { negative: g.iter().map(|&x| x < 0.0).collect(), scale: g.norm1() / d as f64 },
    })
}

/// Unbiased stochastic rounding of `|g_j|/‖g‖₂` onto the grid `{0, 1/s, …, 1}`.
pub fn stochastic_quantize(g: &DenseVector, levels: u32, rng: &mut impl rand::Rng) -> Result<CompressedPayload> {
    if levels == 0 {
        return Err(FedError::param("quantization needs at least one level"));
    }
    let d = g.len();
    let norm = g.norm2();
    let s = f64::from(levels);
    let codes: Vec<i64> = if norm == 0.0 {
        vec![0; d]
    } else {
        g.iter()
            .map(|&x| {
                let r = s * x.abs() / norm;
                let mut lower = r.floor();
                let mut frac = r - lower;
                // values on the grid up to rounding stay deterministic
                if frac < 1e-12 {
                    frac = 0.0;
                } else if 1.0 - frac < 1e-12 {
                    lower += 1.0;
                    frac = 0.0;
                }
                let level = if frac > 0.0 && rng.random::<f64>() < frac { lower + 1.0 } else { lower };
                let signed = if x < 0.0 { -level } else { level };
                signed as i64
            })
            .collect()
    };
    Ok(CompressedPayload {
        kind: PayloadKind::StochasticQuant,
        dim: d,
        bytes: quantized_bytes(d, levels),
        body: Body::Quantized { norm, levels, codes },
    })
}

/// Keeps the `k` largest-magnitude coordinates; ties go to the lower index.
pub fn topk_sparsify(g: &DenseVector, k: usize) -> Result<CompressedPayload> {
    let d = g.len();
    if k == 0 || k > d {
        return Err(FedError::param(format!("top-k needs 1 <= k <= {d}, got {k}")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    let values = indices.iter().map(|&i| g[i]).collect();
    Ok(CompressedPayload {
        kind: PayloadKind::Topk,
        dim: d,
        bytes: sparse_bytes(k),
        body: Body::Sparse { indices, values },
    })
}

/// Keep probabilities `p_j = min(1, |g_j|/t)` with the smallest expected density whose
/// variance satisfies `Σ g_j²/p_j = ε`; all ones when `ε` is (numerically) `‖g‖²`.
pub fn keep_probabilities(g: &DenseVector, epsilon: f64) -> Result<Vec<f64>> {
    let sq = g.norm_sq();
    if !(epsilon.is_finite() && epsilon >= sq * (1.0 - 1e-12)) {
        return Err(FedError::param(format!(
            "variance budget {epsilon} is below the squared norm {sq}; no keep probabilities are feasible"
        )));
    }
    if sq == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    if epsilon <= sq * (1.0 + 1e-12) {
        return Ok(g.iter().map(|&x| if x == 0.0 { 0.0 } else { 1.0 }).collect());
    }
    let variance = |t: f64| -> f64 { g.iter().map(|&x| if x.abs() >= t { x * x } else { x.abs() * t }).sum() };
    let mut lo = g.iter().map(|x| x.abs()).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
    let mut hi = g.norm_inf().max(epsilon / g.norm1());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if variance(mid) < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    // the active set is settled; solve the linear constraint exactly on it
    let t0 = 0.5 * (lo + hi);
    let (full, partial): (f64, f64) = g.iter().fold((0.0, 0.0), |(f, p), &x| {
        if x.abs() >= t0 {
            (f + x * x, p)
        } else {
            (f, p + x.abs())
        }
    });
    let t = if partial > 0.0 { (epsilon - full) / partial } else { t0 };
    Ok(g.iter().map(|&x| if x == 0.0 { 0.0 } else { (x.abs() / t).min(1.0) }).collect())
}

/// Drops coordinate `j` with probability `1 − p_j` and rescales survivors by `1/p_j`.
pub fn variance_budget_sparsify(
    g: &DenseVector,
    epsilon: f64,
    rng: &mut impl rand::Rng,
) -> Result<CompressedPayload> {
    let p = keep_probabilities(g, epsilon)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 && (pj >= 1.0 || rng.random::<f64>() < pj) {
            indices.push(j);
            values.push(g[j] / pj);
        }
    }
    Ok(CompressedPayload {
        kind: PayloadKind::RandomSparse,
        dim: g.len(),
        bytes: sparse_bytes(indices.len()),
        body: Body::Sparse { indices, values },
    })
}

/// Compression applied to every upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compressor {
    None,
    Sign,
    Qsgd { levels: u32 },
    Topk { k: usize },
    /// Variance budget `ε = factor · ‖g‖²` for each transmitted vector `g`.
    VarBudget { factor: f64 },
}

impl Compressor {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Compressor::Qsgd { levels: 0 } => Err(FedError::param("qsgd needs at least one level")),
            Compressor::Topk { k } if k == 0 || k > dim => {
                Err(FedError::param(format!("topk needs 1 <= K <= {dim}, got {k}")))
            }
            Compressor::VarBudget { factor } if !(factor.is_finite() && factor >= 1.0) => {
                Err(FedError::param(format!("varbudget factor must be at least 1, got {factor}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, g: &DenseVector, rng: &mut impl rand::Rng) -> Result<CompressedPayload> {
        match *self {
            Compressor::None => Ok(dense_payload(g)),
            Compressor::Sign => sign_quantize(g),
            Compressor::Qsgd { levels } => stochastic_quantize(g, levels, rng),
            Compressor::Topk { k } => topk_sparsify(g, k),
            Compressor::VarBudget { factor } => variance_budget_sparsify(g, factor * g.norm_sq(), rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn sign_examples() {
        assert_eq!(sign_quantize(&v(&[2.0, -2.0])).unwrap().decompress().as_slice(), &[2.0, -2.0]);
        assert_eq!(sign_quantize(&v(&[3.0, -1.0])).unwrap().decompress().as_slice(), &[2.0, -2.0]);
        assert_eq!(sign_quantize(&v(&[0.0, 4.0])).unwrap().decompress().as_slice(), &[2.0, 2.0]);
        assert_eq!(sign_quantize(&v(&[1.0; 64])).unwrap().bytes(), 16);
    }

    #[test]
    fn on_grid_quantization_is_exact() {
        let g = v(&[3.0, -4.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(stochastic_quantize(&g, 5, &mut rng).unwrap().decompress(), g);
        }
        let zero = stochastic_quantize(&v(&[0.0, 0.0]), 4, &mut rng).unwrap();
        assert_eq!(zero.decompress().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn fine_grid_is_nearly_exact() {
        let g = v(&[0.3, -1.7, 2.2, 0.01]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = stochastic_quantize(&g, 1 << 20, &mut rng).unwrap().decompress();
        assert!(q.sub(&g).norm2() <= 1e-4 * g.norm2());
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_sparsify(&v(&[1.0, -5.0, 3.0]), 1).unwrap().decompress().as_slice(), &[0.0, -5.0, 0.0]);
        assert_eq!(topk_sparsify(&v(&[2.0, 2.0]), 1).unwrap().decompress().as_slice(), &[2.0, 0.0]);
        let g = v(&[1.0, -2.0, 0.5]);
        let full = topk_sparsify(&g, 3).unwrap();
        assert_eq!(full.decompress(), g);
        assert_eq!(full.bytes(), 36);
        assert!(topk_sparsify(&g, 0).is_err());
    }

    #[test]
    fn tight_budget_keeps_everything() {
        let g = v(&[0.3, -1.2, 2.0]);
        let p = keep_probabilities(&g, g.norm_sq()).unwrap();
        assert_eq!(p, vec![1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(variance_budget_sparsify(&g, g.norm_sq(), &mut rng).unwrap().decompress(), g);
        assert!(keep_probabilities(&g, 0.5 * g.norm_sq()).is_err());
    }

    #[test]
    fn quantized_byte_count() {
        // s = 4 needs 3 magnitude bits plus a sign bit
        assert_eq!(quantized_bytes(16, 4), 8 + 8);
        assert_eq!(quantized_bytes(3, 1), 1 + 8);
    }
}
