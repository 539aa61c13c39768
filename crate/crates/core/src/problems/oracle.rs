//! Centralized reference solvers used as ground truth for the federated runs.

use crate::error::{FedError, Result};
use crate::numkit::{
    power_iteration, row_group_shrink, soft_threshold_l1, solve_spd, spectral_norm, svd, svt, DenseMatrix,
    DenseVector,
};
use crate::problems::loss::rebuild_like;
use crate::problems::{ClientData, Model, OracleSolution, ProblemInstance, ProblemKind, RegKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Stationarity tolerance: gradient-mapping norm for proximal gradient,
    /// relative objective change for alternating minimization.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 200_000 }
    }
}

/// Solve the centralized version of `instance` to tight tolerance.
pub fn compute_oracle(instance: &ProblemInstance, opts: OracleOptions) -> Result<OracleSolution> {
    match instance.kind {
        ProblemKind::Quadratic if instance.regularizers.iter().all(|r| r.weight == 0.0) => normal_equations(instance),
        ProblemKind::Quadratic | ProblemKind::Lasso | ProblemKind::Lrme | ProblemKind::Mtl => {
            proximal_gradient(instance, opts)
        }
        ProblemKind::Mf => alternating_minimization(instance, opts),
    }
}

fn normal_equations(instance: &ProblemInstance) -> Result<OracleSolution> {
    let d = instance.dims.dim;
    let n = instance.num_clients() as f64;
    let mut h = DenseMatrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    for c in &instance.clients {
        let ClientData::Regression { features, labels, scale } = &c.data else {
            return Err(FedError::State("quadratic oracle needs regression data".into()));
        };
        h.axpy(2.0 * scale / n, &features.gram());
        for (r, v) in rhs.iter_mut().zip(features.tr_matvec(labels.as_slice())) {
            *r += 2.0 * scale / n * v;
        }
    }
    let x = Model::Vector(DenseVector::new(solve_spd(&h, &rhs)?)?);
    Ok(OracleSolution { objective: instance.objective(&x)?, solution: x, method: "normal-equations".into() })
}

/// Lipschitz constant of the gradient of the smooth objective.
fn smooth_lipschitz(instance: &ProblemInstance) -> Result<f64> {
    let n = instance.num_clients() as f64;
    let d = instance.dims.dim;
    match instance.kind {
        ProblemKind::Lasso | ProblemKind::Quadratic => {
            let mut h = DenseMatrix::zeros(d, d);
            for c in &instance.clients {
                if let ClientData::Regression { features, scale, .. } = &c.data {
                    h.axpy(2.0 * scale / n, &features.gram());
                }
            }
            let trace = instance.reg_weight(RegKind::TraceSquare);
            Ok(spectral_norm(&h)? + trace)
        }
        ProblemKind::Mtl => {
            let mut per_task = vec![DenseMatrix::zeros(d, d); instance.dims.tasks];
            for (i, c) in instance.clients.iter().enumerate() {
                if let ClientData::Regression { features, scale, .. } = &c.data {
                    per_task[instance.task_of(i)?].axpy(2.0 * scale, &features.gram());
                }
            }
            let mut l: f64 = 0.0;
            for h in &per_task {
                l = l.max(spectral_norm(h)?);
            }
            Ok(l + instance.reg_weight(RegKind::TraceSquare))
        }
        ProblemKind::Lrme => {
            let sensing: Vec<&DenseMatrix> = instance
                .clients
                .iter()
                .filter_map(|c| match &c.data {
                    ClientData::Measurements { sensing, .. } => Some(sensing.iter()),
                    _ => None,
                })
                .flatten()
                .collect();
            let l = power_iteration(d * d, 300, |x| {
                let mut out = vec![0.0; d * d];
                for s in &sensing {
                    let ip: f64 = s.as_slice().iter().zip(x).map(|(a, b)| a * b).sum();
                    for (o, a) in out.iter_mut().zip(s.as_slice()) {
                        *o += 2.0 * ip * a;
                    }
                }
                out
            });
            // power iteration underestimates slightly
            Ok(1.05 * l)
        }
        ProblemKind::Mf => Err(FedError::State("matrix factorization has no global Lipschitz constant".into())),
    }
}

fn prox(instance: &ProblemInstance, point: &Model, step: f64) -> Result<Model> {
    let mut out = point.clone();
    for reg in &instance.regularizers {
        let tau = step * reg.weight;
        out = match (reg.kind, &out) {
            (RegKind::None, _) | (RegKind::TraceSquare, _) => out,
            (RegKind::L1, Model::Vector(v)) => Model::Vector(soft_threshold_l1(v, tau)?),
            (RegKind::Nuclear, Model::Matrix(m)) => Model::Matrix(svt(m, tau)?),
            (RegKind::L21, Model::Matrix(m)) => Model::Matrix(row_group_shrink(m, tau)?),
            (kind, p) => {
                return Err(FedError::Configuration(format!("no proximal map for {kind:?} on a {}", p.describe())))
            }
        };
    }
    Ok(out)
}

/// Gradient of the smooth part including the trace-square term.
fn smooth_gradient_full(instance: &ProblemInstance, point: &Model) -> Result<Model> {
    let g = instance.smooth_gradient(point)?;
    let w = instance.reg_weight(RegKind::TraceSquare);
    if w == 0.0 {
        return Ok(g);
    }
    let flat: Vec<f64> = g.flatten().iter().zip(point.flatten()).map(|(a, b)| a + w * b).collect();
    rebuild_like(point, flat)
}

/// Accelerated proximal gradient with adaptive restart, stopped on the gradient-mapping norm.
fn proximal_gradient(instance: &ProblemInstance, opts: OracleOptions) -> Result<OracleSolution> {
    let lipschitz = smooth_lipschitz(instance)?.max(1e-12);
    let step = 1.0 / lipschitz;
    let mut x = instance.zero_model().flatten();
    let like = instance.zero_model();
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    for _ in 0..opts.max_iterations {
        let ym = rebuild_like(&like, y.clone())?;
        let g = smooth_gradient_full(instance, &ym)?.flatten();
        let step_point: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let x_new = prox(instance, &rebuild_like(&like, step_point)?, step)?.flatten();
        let mapping: f64 = x_new.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() * lipschitz;
        if mapping <= opts.tolerance {
            x = x_new;
            let sol = rebuild_like(&like, x)?;
            return Ok(OracleSolution {
                objective: instance.objective(&sol)?,
                solution: sol,
                method: "accelerated-proximal-gradient".into(),
            });
        }
        let restart: f64 = y.iter().zip(&x_new).zip(&x).map(|((yy, xn), xo)| (yy - xn) * (xn - xo)).sum();
        if restart > 0.0 {
            t = 1.0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        y = x_new.iter().zip(&x).map(|(xn, xo)| xn + beta * (xn - xo)).collect();
        x = x_new;
        t = t_new;
    }
    Err(FedError::Numerical(format!(
        "proximal gradient oracle did not reach stationarity {:e} in {} iterations",
        opts.tolerance, opts.max_iterations
    )))
}

/// Proximal alternating minimization over `(U, V)` started from the truncated SVD of `R`.
fn alternating_minimization(instance: &ProblemInstance, opts: OracleOptions) -> Result<OracleSolution> {
    let n = instance.num_clients();
    let m = instance.dims.items;
    let d = instance.dims.dim;
    let mut ratings = DenseMatrix::zeros(n, m);
    for (i, c) in instance.clients.iter().enumerate() {
        let ClientData::Ratings { row } = &c.data else {
            return Err(FedError::State("mf oracle needs rating rows".into()));
        };
        ratings.set_row(i, row.as_slice());
    }
    let lambda = instance.reg_weight(RegKind::L21);
    let mu = instance.reg_weight(RegKind::Nuclear);

    let s = svd(&ratings)?;
    let k = d.min(s.sigma.len());
    let mut users = DenseMatrix::from_fn(n, d, |i, j| if j < k { s.u[(i, j)] * s.sigma[j].sqrt() } else { 0.0 });
    let mut items = DenseMatrix::from_fn(m, d, |i, j| if j < k { s.v[(i, j)] * s.sigma[j].sqrt() } else { 0.0 });

    let objective = |u: &DenseMatrix, v: &DenseMatrix| {
        instance.objective(&Model::Factors { users: u.clone(), items: v.clone() })
    };
    let mut prev = objective(&users, &items)?;
    for _ in 0..opts.max_iterations {
        // U block: gradient 2 (U Vᵀ − R) V
        let resid = users.matmul(&items.transpose())?.sub(&ratings);
        let gu = resid.matmul(&items)?.scaled(2.0);
        let lu = (2.0 * spectral_norm(&items.gram())?).max(1e-12);
        users = row_group_shrink(&users.sub(&gu.scaled(1.0 / lu)), lambda / lu)?;
        // V block: gradient 2 (V Uᵀ − Rᵀ) U
        let resid = users.matmul(&items.transpose())?.sub(&ratings);
        let gv = resid.transpose().matmul(&users)?.scaled(2.0);
        let lv = (2.0 * spectral_norm(&users.gram())?).max(1e-12);
        items = svt(&items.sub(&gv.scaled(1.0 / lv)), mu / lv)?;

        let obj = objective(&users, &items)?;
        if (prev - obj).abs() <= opts.tolerance * (1.0 + obj.abs()) {
            prev = obj;
            break;
        }
        prev = obj;
    }
    Ok(OracleSolution {
        solution: Model::Factors { users, items },
        objective: prev,
        method: "proximal-alternating-minimization".into(),
    })
}
