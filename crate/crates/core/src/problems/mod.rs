//! Synthetic federated problems: generators, non-IID partitioning, and the
//! loss/gradient oracles of each problem kind.
//!
//! Conventions for the reported objective `F`:
//!
//! | kind        | model            | objective                                             |
//! |-------------|------------------|-------------------------------------------------------|
//! | `lasso`     | vector `w`       | `(1/N) Σ f_i(w) + α‖w‖₁`, `f_i = (1/n_i)‖A_i w − b_i‖²` |
//! | `quadratic` | vector `w`       | `(1/N) Σ f_i(w)`, same `f_i`                          |
//! | `lrme`      | `d×d` matrix `X` | `Σ f_i(X) + λ‖X‖_*`, `f_i = Σ_j (⟨X, D_j⟩ − y_j)²`      |
//! | `mtl`       | `d×m` matrix `Z` | `Σ f_i(z_ψ(i)) + R(Z)`, `f_i = ‖A_i x − b_i‖²`         |
//! | `mf`        | factors `(U, V)` | `Σ ‖R_i − u_i Vᵀ‖² + λ‖U‖_{2,1} + μ‖V‖_*`              |
//!
//! Client ids and task ids are zero-based.

mod generators;
mod loss;
mod model;
mod oracle;
mod partition;

pub use generators::{
    gen_lasso, gen_lrme, gen_mf, gen_mtl, gen_quadratic, LassoParams, LrmeParams, MfParams, MtlParams,
    Partition, QuadraticParams, TaskMapping,
};
pub use loss::local_gradient;
pub(crate) use loss::rebuild_like;
pub use model::Model;
pub use oracle::{compute_oracle, OracleOptions};
pub use partition::partition_noniid;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Lasso,
    Lrme,
    Mtl,
    Mf,
    Quadratic,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Lasso => "lasso",
            ProblemKind::Lrme => "lrme",
            ProblemKind::Mtl => "mtl",
            ProblemKind::Mf => "mf",
            ProblemKind::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegKind {
    L1,
    Nuclear,
    L21,
    /// `(weight/2)·Tr(ZZᵀ)`
    TraceSquare,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSpec {
    pub kind: RegKind,
    pub weight: f64,
}

impl RegSpec {
    pub fn new(kind: RegKind, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(FedError::param(format!("regularizer weight must be nonnegative, got {weight}")));
        }
        Ok(Self { kind, weight })
    }

    pub fn none() -> Self {
        Self { kind: RegKind::None, weight: 0.0 }
    }
}

/// The raw data one client holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientData {
    /// `f(x) = scale · ‖A x − b‖²` with `A` of shape `n×d`.
    Regression { features: DenseMatrix, labels: DenseVector, scale: f64 },
    /// `f(X) = Σ_j (⟨X, D_j⟩ − y_j)²`
    Measurements { sensing: Vec<DenseMatrix>, labels: DenseVector },
    /// One full rating row `R_i` (length M).
    Ratings { row: DenseVector },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub data: ClientData,
    /// `ψ(i)` for multi-task problems.
    pub task: Option<usize>,
}

impl ClientDataset {
    /// Number of samples (rows, measurements or rated items).
    pub fn num_samples(&self) -> usize {
        match &self.data {
            ClientData::Regression { labels, .. } => labels.len(),
            ClientData::Measurements { labels, .. } => labels.len(),
            ClientData::Ratings { row } => row.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub solution: Model,
    pub objective: f64,
    /// Name of the centralized solver that produced the solution.
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Feature dimension `d` (latent dimension for `mf`).
    pub dim: usize,
    /// Number of tasks `m` (`mtl` only, else 1).
    pub tasks: usize,
    /// Number of items `M` (`mf` only, else 0).
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub seed: u64,
    pub dims: Dims,
    pub clients: Vec<ClientDataset>,
    /// For `mf` the first entry is the l2,1 penalty on `U`, the second the nuclear penalty on `V`.
    pub regularizers: Vec<RegSpec>,
    pub ground_truth: Option<Model>,
    /// Singular values of the ground-truth matrix (`lrme`) or of the rating matrix (`mf`).
    pub spectrum: Option<Vec<f64>>,
    pub oracle: Option<OracleSolution>,
}

impl ProblemInstance {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, i: usize) -> Result<&ClientDataset> {
        self.clients
            .get(i)
            .ok_or_else(|| FedError::param(format!("client {i} out of range (N = {})", self.clients.len())))
    }

    /// Sample counts `n_i`, the FedAvg data-size weights.
    pub fn sample_counts(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.num_samples() as f64).collect()
    }

    pub fn regularizer(&self, kind: RegKind) -> Option<RegSpec> {
        self.regularizers.iter().copied().find(|r| r.kind == kind)
    }

    /// Weight of the first regularizer of `kind`, zero when absent.
    pub fn reg_weight(&self, kind: RegKind) -> f64 {
        self.regularizer(kind).map_or(0.0, |r| r.weight)
    }

    pub fn task_of(&self, i: usize) -> Result<usize> {
        self.client(i)?
            .task
            .ok_or_else(|| FedError::State(format!("client {i} has no task assignment")))
    }

    /// Shape of the global model this instance is solved for.
    pub fn zero_model(&self) -> Model {
        let d = self.dims.dim;
        match self.kind {
            ProblemKind::Lasso | ProblemKind::Quadratic => Model::Vector(DenseVector::zeros(d)),
            ProblemKind::Lrme => Model::Matrix(DenseMatrix::zeros(d, d)),
            ProblemKind::Mtl => Model::Matrix(DenseMatrix::zeros(d, self.dims.tasks)),
            ProblemKind::Mf => Model::Factors {
                users: DenseMatrix::zeros(self.num_clients(), d),
                items: DenseMatrix::zeros(self.dims.items, d),
            },
        }
    }

    /// Checks every structural invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(FedError::param("instance needs at least one client"));
        }
        let d = self.dims.dim;
        for (i, c) in self.clients.iter().enumerate() {
            if c.num_samples() == 0 {
                return Err(FedError::param(format!("client {i} has an empty dataset")));
            }
            match (&c.data, self.kind) {
                (
                    ClientData::Regression { features, labels, scale },
                    ProblemKind::Lasso | ProblemKind::Quadratic | ProblemKind::Mtl,
                ) => {
                    features.ensure_shape(labels.len(), d, "client features")?;
                    if !(scale.is_finite() && *scale > 0.0) {
                        return Err(FedError::param(format!("client {i} loss scale must be positive")));
                    }
                }
                (ClientData::Measurements { sensing, labels }, ProblemKind::Lrme) => {
                    if sensing.len() != labels.len() {
                        return Err(FedError::dim(format!("client {i}: measurement/label count mismatch")));
                    }
                    for m in sensing {
                        m.ensure_shape(d, d, "sensing matrix")?;
                    }
                }
                (ClientData::Ratings { row }, ProblemKind::Mf) => row.ensure_len(self.dims.items, "rating row")?,
                _ => return Err(FedError::param(format!("client {i} data does not match kind {}", self.kind.name()))),
            }
            if self.kind == ProblemKind::Mtl {
                match c.task {
                    Some(t) if t < self.dims.tasks => {}
                    _ => return Err(FedError::param(format!("client {i} has an invalid task id"))),
                }
            }
        }
        if let Some(o) = &self.oracle {
            if !o.objective.is_finite() {
                return Err(FedError::param("oracle objective must be finite"));
            }
            if o.method.is_empty() {
                return Err(FedError::param("oracle must record the method that produced it"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: ProblemInstance =
            serde_json::from_str(text).map_err(|e| FedError::param(format!("malformed instance file: {e}")))?;
        inst.validate()?;
        Ok(inst)
    }
}
