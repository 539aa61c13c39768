use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{DenseMatrix, DenseVector};

/// A point in the parameter space of some problem kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Vector(DenseVector),
    Matrix(DenseMatrix),
    /// Matrix factorization `R ≈ U Vᵀ`: `users` is N×d, `items` is M×d.
    Factors { users: DenseMatrix, items: DenseMatrix },
}

impl Model {
    pub fn as_vector(&self) -> Result<&DenseVector> {
        match self {
            Model::Vector(v) => Ok(v),
            other => Err(FedError::dim(format!("expected a vector model, got {}", other.describe()))),
        }
    }

    pub fn as_matrix(&self) -> Result<&DenseMatrix> {
        match self {
            Model::Matrix(m) => Ok(m),
            other => Err(FedError::dim(format!("expected a matrix model, got {}", other.describe()))),
        }
    }

    pub fn as_factors(&self) -> Result<(&DenseMatrix, &DenseMatrix)> {
        match self {
            Model::Factors { users, items } => Ok((users, items)),
            other => Err(FedError::dim(format!("expected factor matrices, got {}", other.describe()))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Model::Vector(v) => format!("vector of length {}", v.len()),
            Model::Matrix(m) => format!("{}x{} matrix", m.rows(), m.cols()),
            Model::Factors { users, items } => format!(
                "factors {}x{} / {}x{}",
                users.rows(),
                users.cols(),
                items.rows(),
                items.cols()
            ),
        }
    }

    /// Total number of real entries.
    pub fn num_entries(&self) -> usize {
        match self {
            Model::Vector(v) => v.len(),
            Model::Matrix(m) => m.rows() * m.cols(),
            Model::Factors { users, items } => users.as_slice().len() + items.as_slice().len(),
        }
    }

    /// All entries, concatenated in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Model::Vector(v) => v.as_slice().to_vec(),
            Model::Matrix(m) => m.as_slice().to_vec(),
            Model::Factors { users, items } => [users.as_slice(), items.as_slice()].concat(),
        }
    }

    /// Euclidean (Frobenius) distance between two models of the same shape.
    pub fn distance(&self, other: &Model) -> Result<f64> {
        let (a, b) = (self.flatten(), other.flatten());
        if a.len() != b.len() {
            return Err(FedError::dim(format!("{} vs {}", self.describe(), other.describe())));
        }
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}
