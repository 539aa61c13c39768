//! Deterministic federated-optimization laboratory.
//!
//! * [`numkit`]: dense linear algebra, SVD and proximal maps.
//! * [`problems`]: synthetic federated problems and centralized oracles.
//! * [`sim`]: topologies, sampling, aggregation, metrics and the round engine.
//! * [`first_order`]: FedAvg-style local/global acceleration and federated mirror descent.
//! * [`admm`]: consensus ADMM solvers for low-rank estimation, multi-task learning and
//!   matrix factorization.
//! * [`shield`]: compression, robust aggregation and differential privacy.

pub mod admm;
pub mod error;
pub mod first_order;
pub mod numkit;
pub mod problems;
pub mod shield;
pub mod sim;

pub use error::{FedError, Result};
