//! Communication compression, Byzantine-robust aggregation and differential privacy.

mod compress;
mod dp;
mod robust;

pub use compress::{
    dense_bytes, dense_payload, keep_probabilities, quantized_bytes, sign_bytes, sign_quantize, sparse_bytes,
    stochastic_quantize, topk_sparsify, variance_budget_sparsify, CompressedPayload, Compressor, PayloadKind,
    BYTES_PER_REAL, BYTES_PER_SPARSE_ENTRY,
};
pub use dp::{clip_l1, clip_l2, dp_perturb, DpMechanism, DpSpec};
pub use robust::{coordinate_median, krum_scores, krum_select, trimmed_mean, RobustAggSpec, RobustRule};

use serde::{Deserialize, Serialize};

/// Everything applied to a client upload between local training and aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldSpec {
    pub compress: Compressor,
    pub robust: Option<RobustAggSpec>,
    pub dp: Option<DpSpec>,
}

impl Default for ShieldSpec {
    fn default() -> Self {
        Self { compress: Compressor::None, robust: None, dp: None }
    }
}

impl ShieldSpec {
    pub fn is_inactive(&self) -> bool {
        self.compress == Compressor::None && self.robust.is_none() && self.dp.is_none()
    }
}
