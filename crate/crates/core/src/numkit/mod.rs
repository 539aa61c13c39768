//! Dense linear algebra and proximal-operator kernels.
//!
//! Every function here is a pure function of its arguments.

mod bregman;
mod dense;
mod linalg;
mod prox;
mod svd;

pub use bregman::{bregman_distance, BregmanGenerator};
pub use dense::{DenseMatrix, DenseVector};
pub use linalg::{power_iteration, solve_spd};
pub use prox::{group_shrink, l21_norm, row_group_shrink, shrink, soft_threshold_l1, svt};
pub use svd::{nuclear_norm, singular_values, spectral_norm, svd, svd_with, SvdOptions, SvdResult};
