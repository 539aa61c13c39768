use crate::error::{FedError, Result};
use crate::numkit::{l21_norm, nuclear_norm, DenseMatrix, DenseVector};
use crate::problems::{ClientData, Model, ProblemInstance, ProblemKind, RegKind, RegSpec};

impl ClientData {
    /// `A x − b` for regression data.
    fn regression_residual(features: &DenseMatrix, labels: &DenseVector, x: &DenseVector) -> Vec<f64> {
        features
            .matvec(x.as_slice())
            .into_iter()
            .zip(labels.iter())
            .map(|(ax, b)| ax - b)
            .collect()
    }

    /// Unbiased minibatch estimate of the regression gradient over the given rows.
    ///
    /// With all rows this is the exact gradient `2·scale·Aᵀ(A x − b)`.
    pub fn regression_gradient_rows(&self, x: &DenseVector, rows: &[usize]) -> Result<DenseVector> {
        let ClientData::Regression { features, labels, scale } = self else {
            return Err(FedError::State("minibatch gradients need regression data".into()));
        };
        x.ensure_len(features.cols(), "model")?;
        if rows.is_empty() {
            return Err(FedError::State("empty minibatch".into()));
        }
        let factor = 2.0 * scale * labels.len() as f64 / rows.len() as f64;
        let mut g = vec![0.0; features.cols()];
        for &k in rows {
            let a = features.row(k);
            let r: f64 = a.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() - labels[k];
            for (gj, aj) in g.iter_mut().zip(a) {
                *gj += factor * r * aj;
            }
        }
        Ok(DenseVector::from_vec_unchecked(g))
    }
}

fn regression_loss(data: &ClientData, x: &DenseVector) -> Result<f64> {
    match data {
        ClientData::Regression { features, labels, scale } => {
            x.ensure_len(features.cols(), "model")?;
            let r = ClientData::regression_residual(features, labels, x);
            Ok(scale * r.iter().map(|v| v * v).sum::<f64>())
        }
        _ => Err(FedError::State("expected regression data".into())),
    }
}

fn regression_gradient(data: &ClientData, x: &DenseVector) -> Result<DenseVector> {
    match data {
        ClientData::Regression { features, labels, scale } => {
            x.ensure_len(features.cols(), "model")?;
            let r = ClientData::regression_residual(features, labels, x);
            let g = features.tr_matvec(&r);
            Ok(DenseVector::from_vec_unchecked(g.into_iter().map(|v| 2.0 * scale * v).collect()))
        }
        _ => Err(FedError::State("expected regression data".into())),
    }
}

fn measurement_residuals(sensing: &[DenseMatrix], labels: &DenseVector, x: &DenseMatrix) -> Vec<f64> {
    sensing.iter().zip(labels.iter()).map(|(d, y)| x.inner(d) - y).collect()
}

/// Gradient of `Σ_j (⟨X, D_j⟩ − y_j)²`, i.e. `Σ_j 2(⟨X, D_j⟩ − y_j) D_j`.
pub(crate) fn measurement_gradient(sensing: &[DenseMatrix], labels: &DenseVector, x: &DenseMatrix) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(x.rows(), x.cols());
    for (d, r) in sensing.iter().zip(measurement_residuals(sensing, labels, x)) {
        g.axpy(2.0 * r, d);
    }
    g
}

impl ProblemInstance {
    /// Smooth loss `f_i` of one client at `point`.
    pub fn smooth_loss(&self, client: usize, point: &Model) -> Result<f64> {
        let c = self.client(client)?;
        match (self.kind, point) {
            (ProblemKind::Lasso | ProblemKind::Quadratic, Model::Vector(x)) => regression_loss(&c.data, x),
            (ProblemKind::Mtl, Model::Vector(x)) => regression_loss(&c.data, x),
            (ProblemKind::Mtl, Model::Matrix(z)) => {
                z.ensure_shape(self.dims.dim, self.dims.tasks, "task matrix")?;
                regression_loss(&c.data, &z.column(self.task_of(client)?))
            }
            (ProblemKind::Lrme, Model::Matrix(x)) => {
                x.ensure_shape(self.dims.dim, self.dims.dim, "lrme model")?;
                let ClientData::Measurements { sensing, labels } = &c.data else {
                    return Err(FedError::State("expected measurement data".into()));
                };
                Ok(measurement_residuals(sensing, labels, x).iter().map(|r| r * r).sum())
            }
            (ProblemKind::Mf, Model::Factors { users, items }) => {
                let (_, r) = self.mf_row_residual(client, users, items)?;
                Ok(r.iter().map(|v| v * v).sum())
            }
            (kind, p) => Err(FedError::dim(format!("{} is not a valid point for {}", p.describe(), kind.name()))),
        }
    }

    /// `u_i Vᵀ − R_i` together with `u_i`.
    fn mf_row_residual(&self, client: usize, users: &DenseMatrix, items: &DenseMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        users.ensure_shape(self.num_clients(), self.dims.dim, "user factors")?;
        items.ensure_shape(self.dims.items, self.dims.dim, "item factors")?;
        let ClientData::Ratings { row } = &self.client(client)?.data else {
            return Err(FedError::State("expected rating data".into()));
        };
        let u = users.row(client).to_vec();
        let pred = items.matvec(&u);
        Ok((u, pred.iter().zip(row.iter()).map(|(p, r)| p - r).collect()))
    }

    /// Exact gradient of the smooth loss `f_i` at `point` (regularizer excluded).
    pub fn local_gradient(&self, client: usize, point: &Model) -> Result<Model> {
        let c = self.client(client)?;
        match (self.kind, point) {
            (ProblemKind::Lasso | ProblemKind::Quadratic | ProblemKind::Mtl, Model::Vector(x)) => {
                Ok(Model::Vector(regression_gradient(&c.data, x)?))
            }
            (ProblemKind::Mtl, Model::Matrix(z)) => {
                z.ensure_shape(self.dims.dim, self.dims.tasks, "task matrix")?;
                let t = self.task_of(client)?;
                let g = regression_gradient(&c.data, &z.column(t))?;
                let mut out = DenseMatrix::zeros(z.rows(), z.cols());
                out.set_column(t, g.as_slice());
                Ok(Model::Matrix(out))
            }
            (ProblemKind::Lrme, Model::Matrix(x)) => {
                x.ensure_shape(self.dims.dim, self.dims.dim, "lrme model")?;
                let ClientData::Measurements { sensing, labels } = &c.data else {
                    return Err(FedError::State("expected measurement data".into()));
                };
                Ok(Model::Matrix(measurement_gradient(sensing, labels, x)))
            }
            (ProblemKind::Mf, Model::Factors { users, items }) => {
                let (u, r) = self.mf_row_residual(client, users, items)?;
                let mut gu = DenseMatrix::zeros(users.rows(), users.cols());
                let gu_row: Vec<f64> = items.tr_matvec(&r).into_iter().map(|v| 2.0 * v).collect();
                gu.set_row(client, &gu_row);
                let gv = DenseMatrix::from_fn(items.rows(), items.cols(), |j, k| 2.0 * r[j] * u[k]);
                Ok(Model::Factors { users: gu, items: gv })
            }
            (kind, p) => Err(FedError::dim(format!("{} is not a valid point for {}", p.describe(), kind.name()))),
        }
    }

    /// Smooth part of the global objective: the client mean for `lasso`/`quadratic`,
    /// the client sum otherwise.
    pub fn smooth_objective(&self, point: &Model) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.num_clients() {
            total += self.smooth_loss(i, point)?;
        }
        Ok(match self.kind {
            ProblemKind::Lasso | ProblemKind::Quadratic => total / self.num_clients() as f64,
            _ => total,
        })
    }

    /// Gradient of [`Self::smooth_objective`].
    pub fn smooth_gradient(&self, point: &Model) -> Result<Model> {
        let n = self.num_clients();
        let scale = match self.kind {
            ProblemKind::Lasso | ProblemKind::Quadratic => 1.0 / n as f64,
            _ => 1.0,
        };
        let mut acc: Option<Vec<f64>> = None;
        for i in 0..n {
            let g = self.local_gradient(i, point)?.flatten();
            match acc.as_mut() {
                None => acc = Some(g.iter().map(|v| scale * v).collect()),
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += scale * y),
            }
        }
        rebuild_like(point, acc.unwrap_or_default())
    }

    /// Value of all regularizers at `point`.
    pub fn regularization(&self, point: &Model) -> Result<f64> {
        let mut total = 0.0;
        for reg in &self.regularizers {
            total += reg_value(reg, point)?;
        }
        Ok(total)
    }

    /// The reported global objective `F` (see the module table).
    pub fn objective(&self, point: &Model) -> Result<f64> {
        Ok(self.smooth_objective(point)? + self.regularization(point)?)
    }
}

fn reg_value(reg: &RegSpec, point: &Model) -> Result<f64> {
    let w = reg.weight;
    if reg.kind == RegKind::None || w == 0.0 {
        return Ok(0.0);
    }
    Ok(match (reg.kind, point) {
        (RegKind::L1, Model::Vector(x)) => w * x.norm1(),
        (RegKind::L1, Model::Matrix(x)) => w * x.as_slice().iter().map(|v| v.abs()).sum::<f64>(),
        (RegKind::TraceSquare, Model::Vector(x)) => 0.5 * w * x.norm_sq(),
        (RegKind::TraceSquare, Model::Matrix(x)) => 0.5 * w * x.frobenius_norm().powi(2),
        (RegKind::Nuclear, Model::Matrix(x)) => w * nuclear_norm(x)?,
        (RegKind::L21, Model::Matrix(x)) => w * l21_norm(x),
        (RegKind::L21, Model::Factors { users, .. }) => w * l21_norm(users),
        (RegKind::Nuclear, Model::Factors { items, .. }) => w * nuclear_norm(items)?,
        (kind, p) => {
            return Err(FedError::Configuration(format!(
                "regularizer {kind:?} is not defined on a {}",
                p.describe()
            )))
        }
    })
}

/// Rebuild a model with the shape of `like` from flattened entries.
pub(crate) fn rebuild_like(like: &Model, flat: Vec<f64>) -> Result<Model> {
    if flat.len() != like.num_entries() {
        return Err(FedError::dim("flattened entry count does not match the model shape"));
    }
    Ok(match like {
        Model::Vector(_) => Model::Vector(DenseVector::new(flat)?),
        Model::Matrix(m) => Model::Matrix(DenseMatrix::new(m.rows(), m.cols(), flat)?),
        Model::Factors { users, items } => {
            let split = users.as_slice().len();
            let (a, b) = flat.split_at(split);
            Model::Factors {
                users: DenseMatrix::new(users.rows(), users.cols(), a.to_vec())?,
                items: DenseMatrix::new(items.rows(), items.cols(), b.to_vec())?,
            }
        }
    })
}

/// Free-function form of [`ProblemInstance::local_gradient`].
pub fn local_gradient(instance: &ProblemInstance, client: usize, point: &Model) -> Result<Model> {
    instance.local_gradient(client, point)
}
