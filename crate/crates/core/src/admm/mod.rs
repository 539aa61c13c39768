//! Consensus ADMM solvers: linearized federated ADMM for low-rank matrix estimation,
//! the multi-task solver with its three server rules, and the three-block
//! matrix-factorization solver.
//!
//! Every client-side update is a pure function; [`AdmmRunner`] wires them into rounds.

mod runner;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{group_shrink, solve_spd, spectral_norm, svt, DenseMatrix, DenseVector};
use crate::problems::{ClientData, ProblemInstance, ProblemKind, RegKind};
use crate::sim::Parameters;

pub use runner::AdmmRunner;

/// Server rule for the multi-task consensus matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MtlServerCase {
    /// Identity task map with a nuclear penalty: one singular value thresholding.
    A,
    /// Any task map with a nuclear penalty: proximal gradient iterations.
    B,
    /// Any task map with `(α/2)·Tr(ZZᵀ)`: column-wise closed form.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmmVariant {
    Lrme,
    MtlA,
    MtlB,
    MtlC,
    Mf,
}

impl AdmmVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AdmmVariant::Lrme => "lrme",
            AdmmVariant::MtlA => "mtl-a",
            AdmmVariant::MtlB => "mtl-b",
            AdmmVariant::MtlC => "mtl-c",
            AdmmVariant::Mf => "mf",
        }
    }

    pub fn mtl_case(&self) -> Option<MtlServerCase> {
        match self {
            AdmmVariant::MtlA => Some(MtlServerCase::A),
            AdmmVariant::MtlB => Some(MtlServerCase::B),
            AdmmVariant::MtlC => Some(MtlServerCase::C),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub rho: f64,
    /// Linearization step of the local update.
    pub eta_l: f64,
    /// Server proximal step. `None` picks the inverse curvature of the server subproblem.
    pub eta_g: Option<f64>,
    /// Local iterations `T`.
    pub local_steps: usize,
    /// Server proximal iterations `I`.
    pub server_iters: usize,
    /// Proximal-gradient steps for the MF user profile, `J`.
    pub user_iters: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self { rho: 1.0, eta_l: 0.01, eta_g: None, local_steps: 5, server_iters: 20, user_iters: 10 }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rho) {
            return Err(FedError::param(format!("rho must be positive, got {}", self.rho)));
        }
        if !positive(self.eta_l) {
            return Err(FedError::param(format!("eta_l must be positive, got {}", self.eta_l)));
        }
        if let Some(e) = self.eta_g {
            if !positive(e) {
                return Err(FedError::param(format!("eta_g must be positive, got {e}")));
            }
        }
        if self.local_steps == 0 || self.server_iters == 0 || self.user_iters == 0 {
            return Err(FedError::param("T, I and J must all be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSpec {
    pub variant: AdmmVariant,
    pub params: AdmmParams,
}

impl AdmmSpec {
    pub fn new(variant: AdmmVariant, params: AdmmParams) -> Self {
        Self { variant, params }
    }

    /// Defaults tuned for the synthetic instances of each kind.
    pub fn with_defaults(variant: AdmmVariant) -> Self {
        let params = match variant {
            // stable on the 8-client, d = 20 sensing problem at λ = 1
            AdmmVariant::Lrme => AdmmParams { rho: 2.0, eta_l: 0.4, local_steps: 5, ..AdmmParams::default() },
            AdmmVariant::MtlA | AdmmVariant::MtlB | AdmmVariant::MtlC => AdmmParams::default(),
            // ρ = 2 makes the server objective the exact augmented-Lagrangian block
            AdmmVariant::Mf => AdmmParams { rho: 2.0, ..AdmmParams::default() },
        };
        Self { variant, params }
    }

    /// Rejects instances whose kind, task map or regularizer does not fit the variant.
    pub fn check_instance(&self, instance: &ProblemInstance) -> Result<()> {
        self.params.validate()?;
        let cfg = |msg: String| Err(FedError::Configuration(msg));
        let want = match self.variant {
            AdmmVariant::Lrme => ProblemKind::Lrme,
            AdmmVariant::Mf => ProblemKind::Mf,
            _ => ProblemKind::Mtl,
        };
        if instance.kind != want {
            return cfg(format!(
                "ADMM variant {} needs a {} problem, got {}",
                self.variant.name(),
                want.name(),
                instance.kind.name()
            ));
        }
        match self.variant.mtl_case() {
            Some(MtlServerCase::A) => {
                let identity = instance.dims.tasks == instance.num_clients()
                    && (0..instance.num_clients()).all(|i| instance.task_of(i).ok() == Some(i));
                if !identity {
                    return cfg("ADMM variant mtl-a needs the identity task mapping (one task per client)".into());
                }
                if instance.regularizer(RegKind::Nuclear).is_none() {
                    return cfg("ADMM variant mtl-a needs a nuclear-norm regularizer".into());
                }
            }
            Some(MtlServerCase::B) if instance.regularizer(RegKind::Nuclear).is_none() => {
                return cfg("ADMM variant mtl-b needs a nuclear-norm regularizer".into());
            }
            Some(MtlServerCase::C) if instance.regularizer(RegKind::TraceSquare).is_none() => {
                return cfg("ADMM variant mtl-c needs a trace-square regularizer".into());
            }
            _ => {}
        }
        Ok(())
    }
}

/// `X⁺ = (ρη_l Z − η_l π + X − η_l ∇f(X)) / (1 + ρη_l)`.
pub fn lfedadmm_local_x(
    x: &DenseMatrix,
    z: &DenseMatrix,
    pi: &DenseMatrix,
    grad: &DenseMatrix,
    params: &AdmmParams,
) -> Result<DenseMatrix> {
    x.ensure_shape(z.rows(), z.cols(), "local model")?;
    pi.ensure_shape(z.rows(), z.cols(), "multiplier")?;
    grad.ensure_shape(z.rows(), z.cols(), "gradient")?;
    let (rho, eta) = (params.rho, params.eta_l);
    let scale = 1.0 / (1.0 + rho * eta);
    Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        scale * (rho * eta * z[(r, c)] - eta * pi[(r, c)] + x[(r, c)] - eta * grad[(r, c)])
    }))
}

/// `π + ρ(local − consensus)`.
pub fn multiplier_update<P: Parameters>(pi: &P, local: &P, consensus: &P, rho: f64) -> Result<P> {
    let (p, l, c) = (pi.values(), local.values(), consensus.values());
    if p.len() != l.len() || l.len() != c.len() {
        return Err(FedError::dim("multiplier update needs equally shaped arguments"));
    }
    pi.with_values(p.iter().zip(&l).zip(&c).map(|((p, l), c)| p + rho * (l - c)).collect())
}

/// `I` proximal-gradient iterations `Z ← svt(Z − η_g(NρZ − Σ(π_i+ρX_i)), λη_g)`.
pub fn lfedadmm_server_z(
    z: &DenseMatrix,
    received_sum: &DenseMatrix,
    clients: usize,
    params: &AdmmParams,
    lambda: f64,
) -> Result<DenseMatrix> {
    received_sum.ensure_shape(z.rows(), z.cols(), "received sum")?;
    let curvature = clients as f64 * params.rho;
    let eta = params.eta_g.unwrap_or(1.0 / curvature);
    let mut z = z.clone();
    for _ in 0..params.server_iters {
        let step = z.zip_with(received_sum, |zv, s| zv - eta * (curvature * zv - s));
        z = svt(&step, lambda * eta)?;
    }
    Ok(z)
}

/// Exact minimizer of `f_i(x) + ⟨λ_i, x − z⟩ + (ρ/2)‖x − z‖²` for the quadratic loss
/// `f_i(x) = s·‖Ax − b‖²`.
pub fn mtl_local_x(
    instance: &ProblemInstance,
    client: usize,
    z_task: &DenseVector,
    lambda_i: &DenseVector,
    rho: f64,
) -> Result<DenseVector> {
    let ClientData::Regression { features, labels, scale } = &instance.client(client)?.data else {
        return Err(FedError::State("multi-task clients hold regression data".into()));
    };
    let d = features.cols();
    z_task.ensure_len(d, "task column")?;
    lambda_i.ensure_len(d, "multiplier")?;
    let mut h = features.gram().scaled(2.0 * scale);
    for k in 0..d {
        h[(k, k)] += rho;
    }
    let atb = features.tr_matvec(labels.as_slice());
    let rhs: Vec<f64> = (0..d).map(|k| 2.0 * scale * atb[k] + rho * z_task.as_slice()[k] - lambda_i.as_slice()[k]).collect();
    DenseVector::new(solve_spd(&h, &rhs)?)
}

/// Column sums `S_j = Σ_{ψ(i)=j}(ρx_i + λ_i)` and the per-task client counts.
pub fn mtl_task_sums(
    xs: &[DenseVector],
    lambdas: &[DenseVector],
    tasks: &[usize],
    dim: usize,
    num_tasks: usize,
    rho: f64,
) -> Result<(DenseMatrix, Vec<usize>)> {
    if xs.len() != lambdas.len() || xs.len() != tasks.len() {
        return Err(FedError::dim("one local model, multiplier and task per client"));
    }
    let mut sums = DenseMatrix::zeros(dim, num_tasks);
    let mut counts = vec![0usize; num_tasks];
    for ((x, l), &t) in xs.iter().zip(lambdas).zip(tasks) {
        if t >= num_tasks {
            return Err(FedError::param(format!("task {t} out of range (m = {num_tasks})")));
        }
        x.ensure_len(dim, "local model")?;
        l.ensure_len(dim, "multiplier")?;
        counts[t] += 1;
        for k in 0..dim {
            sums[(k, t)] += rho * x[k] + l[k];
        }
    }
    Ok((sums, counts))
}

/// `G(Z) = Σ_i ⟨λ_i, x_i − z_ψ(i)⟩ + (ρ/2)‖x_i − z_ψ(i)‖²`.
pub fn mtl_g_value(z: &DenseMatrix, xs: &[DenseVector], lambdas: &[DenseVector], tasks: &[usize], rho: f64) -> Result<f64> {
    let mut total = 0.0;
    for ((x, l), &t) in xs.iter().zip(lambdas).zip(tasks) {
        let r = x.sub(&z.column(t));
        total += l.dot(&r) + 0.5 * rho * r.norm_sq();
    }
    Ok(total)
}

/// Column `j` of the gradient is `Σ_{ψ(i)=j} ρz_j − (ρx_i + λ_i)`.
pub fn mtl_g_gradient(
    z: &DenseMatrix,
    xs: &[DenseVector],
    lambdas: &[DenseVector],
    tasks: &[usize],
    rho: f64,
) -> Result<DenseMatrix> {
    let (sums, counts) = mtl_task_sums(xs, lambdas, tasks, z.rows(), z.cols(), rho)?;
    Ok(DenseMatrix::from_fn(z.rows(), z.cols(), |k, j| rho * counts[j] as f64 * z[(k, j)] - sums[(k, j)]))
}

/// One server update of the consensus task matrix.
///
/// `weight` is `α`: the nuclear weight for cases a and b, the trace-square weight for case c.
#[allow(clippy::too_many_arguments)]
pub fn mtl_server_z(
    case: MtlServerCase,
    z: &DenseMatrix,
    xs: &[DenseVector],
    lambdas: &[DenseVector],
    tasks: &[usize],
    params: &AdmmParams,
    weight: f64,
) -> Result<DenseMatrix> {
    let rho = params.rho;
    let (sums, counts) = mtl_task_sums(xs, lambdas, tasks, z.rows(), z.cols(), rho)?;
    match case {
        MtlServerCase::A => {
            let identity = tasks.len() == z.cols() && tasks.iter().enumerate().all(|(i, &t)| i == t);
            if !identity {
                return Err(FedError::Configuration("server case a needs the identity task mapping".into()));
            }
            // X + Λ/ρ
            svt(&sums.scaled(1.0 / rho), weight / rho)
        }
        MtlServerCase::B => {
            let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
            let eta = params.eta_g.unwrap_or(1.0 / (rho * max_count));
            let mut z = z.clone();
            for _ in 0..params.server_iters {
                let step = DenseMatrix::from_fn(z.rows(), z.cols(), |k, j| {
                    z[(k, j)] - eta * (rho * counts[j] as f64 * z[(k, j)] - sums[(k, j)])
                });
                z = svt(&step, weight * eta)?;
            }
            Ok(z)
        }
        MtlServerCase::C => Ok(DenseMatrix::from_fn(z.rows(), z.cols(), |k, j| {
            sums[(k, j)] / (weight + rho * counts[j] as f64)
        })),
    }
}

/// `G_V(V) = Σ_i ‖x_i − u_iVᵀ‖² − ⟨π_i, u_iVᵀ⟩`.
pub fn mf_gv_value(v: &DenseMatrix, xs: &[DenseVector], pis: &[DenseVector], us: &[DenseVector]) -> Result<f64> {
    let mut total = 0.0;
    for ((x, p), u) in xs.iter().zip(pis).zip(us) {
        let pred = DenseVector::new(v.matvec(u.as_slice()))?;
        total += x.sub(&pred).norm_sq() - p.dot(&pred);
    }
    Ok(total)
}

/// `∇_V G_V = Σ_i 2V u_iᵀu_i − (2x_i + π_i)ᵀ u_i`.
pub fn mf_gv_gradient(v: &DenseMatrix, xs: &[DenseVector], pis: &[DenseVector], us: &[DenseVector]) -> Result<DenseMatrix> {
    if xs.len() != pis.len() || xs.len() != us.len() {
        return Err(FedError::dim("one row, multiplier and profile per user"));
    }
    let mut g = DenseMatrix::zeros(v.rows(), v.cols());
    for ((x, p), u) in xs.iter().zip(pis).zip(us) {
        x.ensure_len(v.rows(), "consensus row")?;
        p.ensure_len(v.rows(), "multiplier")?;
        u.ensure_len(v.cols(), "user profile")?;
        let vu = v.matvec(u.as_slice());
        for j in 0..v.rows() {
            let coef = 2.0 * vu[j] - 2.0 * x[j] - p[j];
            for k in 0..v.cols() {
                g[(j, k)] += coef * u[k];
            }
        }
    }
    Ok(g)
}

/// `I` iterations of `V ← svt(V − η_V ∇G_V(V), μη_V)`.
///
/// Without an explicit step the inverse Lipschitz constant `1/(2‖UᵀU‖₂)` is used.
pub fn mf_server_v(
    v: &DenseMatrix,
    xs: &[DenseVector],
    pis: &[DenseVector],
    us: &[DenseVector],
    params: &AdmmParams,
    mu: f64,
) -> Result<DenseMatrix> {
    if us.is_empty() {
        return Err(FedError::param("the item update needs at least one user"));
    }
    let eta = match params.eta_g {
        Some(e) => e,
        None => {
            let mut gram = DenseMatrix::zeros(v.cols(), v.cols());
            for u in us {
                gram.axpy(1.0, &u.to_column().transpose().gram());
            }
            let l = 2.0 * spectral_norm(&gram)?;
            if l > 1e-12 {
                1.0 / l
            } else {
                1.0
            }
        }
    };
    let mut v = v.clone();
    for _ in 0..params.server_iters {
        let g = mf_gv_gradient(&v, xs, pis, us)?;
        v = svt(&v.sub(&g.scaled(eta)), mu * eta)?;
    }
    Ok(v)
}

/// Ordered user update: closed-form `x_i`, then `J` proximal-gradient steps on `u_i`.
#[allow(clippy::too_many_arguments)]
pub fn mf_user_update(
    x: &DenseVector,
    u: &DenseVector,
    pi: &DenseVector,
    v: &DenseMatrix,
    row: &DenseVector,
    params: &AdmmParams,
    lambda: f64,
) -> Result<(DenseVector, DenseVector)> {
    let m = v.rows();
    x.ensure_len(m, "consensus row")?;
    pi.ensure_len(m, "multiplier")?;
    row.ensure_len(m, "rating row")?;
    u.ensure_len(v.cols(), "user profile")?;
    let rho = params.rho;
    let pred = v.matvec(u.as_slice());
    let x_new = DenseVector::new(
        (0..m).map(|j| (2.0 * row.as_slice()[j] + rho * pred[j] - pi.as_slice()[j]) / (2.0 + rho)).collect(),
    )?;
    let sigma = spectral_norm(v)?;
    if sigma <= 1e-12 {
        // the smooth part is constant in u; only the shrinkage acts
        return Ok((x_new, DenseVector::zeros(v.cols())));
    }
    let eta = 1.0 / (2.0 * rho * sigma * sigma);
    let mut u = u.clone();
    for _ in 0..params.user_iters {
        // ∇_u = −ρ(x − uVᵀ)V − πV
        let pred = v.matvec(u.as_slice());
        let resid: Vec<f64> = (0..m).map(|j| -rho * (x_new.as_slice()[j] - pred[j]) - pi.as_slice()[j]).collect();
        let g = DenseVector::new(v.tr_matvec(&resid))?;
        let step = u.sub(&g.scaled(eta));
        u = group_shrink(&step, lambda * eta)?;
    }
    Ok((x_new, u))
}
