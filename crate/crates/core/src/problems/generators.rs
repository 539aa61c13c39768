//! Seeded synthetic instances. Each generator is a pure function of its parameters.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{singular_values, DenseMatrix, DenseVector};
use crate::problems::oracle::{compute_oracle, OracleOptions};
use crate::problems::{
    partition_noniid, ClientData, ClientDataset, Dims, Model, ProblemInstance, ProblemKind, RegKind, RegSpec,
};
use crate::sim::rng::{normal_vec, standard_normal};
use crate::sim::Rng;

/// How regression samples are spread over clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Partition {
    /// Every client draws `samples_per_client` i.i.d. samples.
    Iid,
    /// A pooled dataset of `N · samples_per_client` samples in `classes` shifted feature
    /// clusters is split with Dirichlet(`alpha`) class skew.
    Dirichlet { alpha: f64, classes: usize },
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(FedError::param(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(FedError::param(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn gaussian_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| std * standard_normal(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    pub clients: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    pub sparsity: usize,
    pub noise_sigma: f64,
    /// `α`, the l1 weight.
    pub reg_weight: f64,
    pub partition: Partition,
    pub seed: u64,
}

/// Sparse linear regression with an l1 penalty.
///
/// `w*` has `sparsity` nonzeros with magnitudes in `[1, 2)` and random signs; features
/// are standard normal and `y = w*ᵀx + N(0, σ²)`.
pub fn gen_lasso(p: &LassoParams) -> Result<ProblemInstance> {
    positive("clients", p.clients)?;
    positive("dim", p.dim)?;
    positive("samples_per_client", p.samples_per_client)?;
    nonnegative("noise_sigma", p.noise_sigma)?;
    nonnegative("reg_weight", p.reg_weight)?;
    if p.sparsity > p.dim {
        return Err(FedError::param(format!("sparsity {} exceeds dimension {}", p.sparsity, p.dim)));
    }
    let rng = Rng::new(p.seed);
    let mut truth_rng = rng.stream("lasso-truth", 0, 0);
    let mut support: Vec<usize> = (0..p.dim).collect();
    support.shuffle(&mut truth_rng);
    let mut w = vec![0.0; p.dim];
    for &j in &support[..p.sparsity] {
        let sign = if truth_rng.random::<bool>() { 1.0 } else { -1.0 };
        w[j] = sign * (1.0 + truth_rng.random::<f64>());
    }
    let truth = DenseVector::new(w)?;
    let (features, labels) = regression_data(&rng, p.clients, p.dim, p.samples_per_client, p.partition, &truth, p.noise_sigma)?;
    let clients = features
        .into_iter()
        .zip(labels)
        .map(|(a, b)| {
            let scale = 1.0 / b.len() as f64;
            ClientDataset { data: ClientData::Regression { features: a, labels: b, scale }, task: None }
        })
        .collect();
    let mut inst = ProblemInstance {
        kind: ProblemKind::Lasso,
        seed: p.seed,
        dims: Dims { dim: p.dim, tasks: 1, items: 0 },
        clients,
        regularizers: vec![RegSpec::new(RegKind::L1, p.reg_weight)?],
        ground_truth: Some(Model::Vector(truth)),
        spectrum: None,
        oracle: None,
    };
    inst.oracle = Some(compute_oracle(&inst, OracleOptions::default())?);
    Ok(inst)
}

/// Per-client `(A_i, b_i)` with `b_i = A_i w + noise`.
fn regression_data(
    rng: &Rng,
    clients: usize,
    dim: usize,
    per_client: usize,
    partition: Partition,
    truth: &DenseVector,
    noise: f64,
) -> Result<(Vec<DenseMatrix>, Vec<DenseVector>)> {
    let label = |x: &[f64], r: &mut rand_chacha::ChaCha8Rng| {
        x.iter().zip(truth.iter()).map(|(a, b)| a * b).sum::<f64>() + noise * standard_normal(r)
    };
    match partition {
        Partition::Iid => {
            let mut feats = Vec::with_capacity(clients);
            let mut labs = Vec::with_capacity(clients);
            for i in 0..clients {
                let mut s = rng.stream("regression-data", 0, i as u64);
                let a = gaussian_matrix(&mut s, per_client, dim, 1.0);
                let b: Vec<f64> = (0..per_client).map(|k| label(a.row(k), &mut s)).collect();
                feats.push(a);
                labs.push(DenseVector::new(b)?);
            }
            Ok((feats, labs))
        }
        Partition::Dirichlet { alpha, classes } => {
            positive("classes", classes)?;
            let total = clients * per_client;
            let mut s = rng.stream("regression-pool", 0, 0);
            let centers: Vec<Vec<f64>> = (0..classes).map(|_| normal_vec(&mut s, dim, 1.0)).collect();
            let classes_of: Vec<usize> = (0..total).map(|k| k % classes).collect();
            let mut rows = Vec::with_capacity(total);
            let mut ys = Vec::with_capacity(total);
            for &c in &classes_of {
                let x: Vec<f64> = centers[c].iter().map(|m| m + standard_normal(&mut s)).collect();
                ys.push(label(&x, &mut s));
                rows.push(x);
            }
            let parts = partition_noniid(&classes_of, clients, alpha, rng)?;
            let mut feats = Vec::with_capacity(clients);
            let mut labs = Vec::with_capacity(clients);
            for part in parts {
                let sel: Vec<Vec<f64>> = part.iter().map(|&k| rows[k].clone()).collect();
                feats.push(DenseMatrix::from_rows(&sel)?);
                labs.push(DenseVector::new(part.iter().map(|&k| ys[k]).collect())?);
            }
            Ok((feats, labs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticParams {
    pub clients: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    /// Standard deviation of each client's minimizer around the shared center.
    pub heterogeneity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Least-squares clients `f_i(x) = (1/n_i)‖A_i x − b_i‖²` with `b_i = A_i c_i + noise`
/// and `c_i = c + heterogeneity · N(0, I)`.
pub fn gen_quadratic(p: &QuadraticParams) -> Result<ProblemInstance> {
    positive("clients", p.clients)?;
    positive("dim", p.dim)?;
    positive("samples_per_client", p.samples_per_client)?;
    nonnegative("heterogeneity", p.heterogeneity)?;
    nonnegative("noise_sigma", p.noise_sigma)?;
    let rng = Rng::new(p.seed);
    let center = normal_vec(&mut rng.stream("quadratic-center", 0, 0), p.dim, 1.0);
    let mut clients = Vec::with_capacity(p.clients);
    for i in 0..p.clients {
        let mut s = rng.stream("quadratic-data", 0, i as u64);
        let local: Vec<f64> = center.iter().map(|c| c + p.heterogeneity * standard_normal(&mut s)).collect();
        let a = gaussian_matrix(&mut s, p.samples_per_client, p.dim, 1.0);
        let b: Vec<f64> = a
            .matvec(&local)
            .into_iter()
            .map(|v| v + p.noise_sigma * standard_normal(&mut s))
            .collect();
        clients.push(ClientDataset {
            data: ClientData::Regression {
                features: a,
                labels: DenseVector::new(b)?,
                scale: 1.0 / p.samples_per_client as f64,
            },
            task: None,
        });
    }
    let mut inst = ProblemInstance {
        kind: ProblemKind::Quadratic,
        seed: p.seed,
        dims: Dims { dim: p.dim, tasks: 1, items: 0 },
        clients,
        regularizers: vec![RegSpec::none()],
        ground_truth: Some(Model::Vector(DenseVector::new(center)?)),
        spectrum: None,
        oracle: None,
    };
    inst.oracle = Some(compute_oracle(&inst, OracleOptions::default())?);
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrmeParams {
    pub clients: usize,
    pub dim: usize,
    pub rank: usize,
    pub measurements_per_client: usize,
    pub noise_sigma: f64,
    /// `λ`, the nuclear-norm weight.
    pub reg_weight: f64,
    pub seed: u64,
}

/// Low-rank matrix sensing: `X* = A Bᵀ` with `A, B` standard normal `d×rank`,
/// sensing matrices with i.i.d. `N(0, 1/d²)` entries and `y_j = ⟨X*, D_j⟩ + N(0, σ²)`.
pub fn gen_lrme(p: &LrmeParams) -> Result<ProblemInstance> {
    gen_lrme_inner(p, true)
}

pub(crate) fn gen_lrme_inner(p: &LrmeParams, with_oracle: bool) -> Result<ProblemInstance> {
    positive("clients", p.clients)?;
    positive("dim", p.dim)?;
    positive("rank", p.rank)?;
    positive("measurements_per_client", p.measurements_per_client)?;
    nonnegative("noise_sigma", p.noise_sigma)?;
    nonnegative("reg_weight", p.reg_weight)?;
    if p.rank > p.dim {
        return Err(FedError::param(format!("rank {} exceeds dimension {}", p.rank, p.dim)));
    }
    let rng = Rng::new(p.seed);
    let mut t = rng.stream("lrme-truth", 0, 0);
    let a = gaussian_matrix(&mut t, p.dim, p.rank, 1.0);
    let b = gaussian_matrix(&mut t, p.dim, p.rank, 1.0);
    let truth = a.matmul(&b.transpose())?;
    let sensing_std = 1.0 / p.dim as f64;
    let mut clients = Vec::with_capacity(p.clients);
    for i in 0..p.clients {
        let mut s = rng.stream("lrme-data", 0, i as u64);
        let mut sensing = Vec::with_capacity(p.measurements_per_client);
        let mut ys = Vec::with_capacity(p.measurements_per_client);
        for _ in 0..p.measurements_per_client {
            let d = gaussian_matrix(&mut s, p.dim, p.dim, sensing_std);
            ys.push(truth.inner(&d) + p.noise_sigma * standard_normal(&mut s));
            sensing.push(d);
        }
        clients.push(ClientDataset {
            data: ClientData::Measurements { sensing, labels: DenseVector::new(ys)? },
            task: None,
        });
    }
    let mut inst = ProblemInstance {
        kind: ProblemKind::Lrme,
        seed: p.seed,
        dims: Dims { dim: p.dim, tasks: 1, items: 0 },
        clients,
        regularizers: vec![RegSpec::new(RegKind::Nuclear, p.reg_weight)?],
        spectrum: Some(singular_values(&truth)?.into_vec()),
        ground_truth: Some(Model::Matrix(truth)),
        oracle: None,
    };
    if with_oracle {
        inst.oracle = Some(compute_oracle(&inst, OracleOptions::default())?);
    }
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMapping {
    /// `ψ(i) = i`; requires as many tasks as clients.
    Identity,
    /// Uniform task ids, redrawn until every task has a client.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlParams {
    pub clients: usize,
    pub tasks: usize,
    pub dim: usize,
    pub mapping: TaskMapping,
    pub samples_per_client: usize,
    /// Rank of the structure shared by the task vectors.
    pub shared_rank: usize,
    /// Scale of the task-specific deviation from the shared structure.
    pub task_noise: f64,
    pub noise_sigma: f64,
    /// `nuclear` (weight `α`) or `trace-square`.
    pub reg: RegSpec,
    pub seed: u64,
}

impl MtlParams {
    pub fn new(clients: usize, tasks: usize, dim: usize, mapping: TaskMapping, seed: u64) -> Self {
        Self {
            clients,
            tasks,
            dim,
            mapping,
            samples_per_client: 20,
            shared_rank: 2,
            task_noise: 0.1,
            noise_sigma: 0.01,
            reg: RegSpec { kind: RegKind::Nuclear, weight: 0.1 },
            seed,
        }
    }
}

/// Multi-task least squares: task vectors `Z* = B C + task_noise · E` share a
/// rank-`shared_rank` structure; client `i` observes `b_i = A_i z*_ψ(i) + noise`
/// with loss `‖A_i x − b_i‖²`.
pub fn gen_mtl(p: &MtlParams) -> Result<ProblemInstance> {
    positive("clients", p.clients)?;
    positive("tasks", p.tasks)?;
    positive("dim", p.dim)?;
    positive("samples_per_client", p.samples_per_client)?;
    nonnegative("noise_sigma", p.noise_sigma)?;
    nonnegative("task_noise", p.task_noise)?;
    if !matches!(p.reg.kind, RegKind::Nuclear | RegKind::TraceSquare | RegKind::None) {
        return Err(FedError::param("multi-task regularizer must be nuclear, trace-square or none"));
    }
    let rng = Rng::new(p.seed);
    let psi: Vec<usize> = match p.mapping {
        TaskMapping::Identity => {
            if p.tasks != p.clients {
                return Err(FedError::param(format!(
                    "identity task mapping needs tasks = clients, got {} tasks for {} clients",
                    p.tasks, p.clients
                )));
            }
            (0..p.clients).collect()
        }
        TaskMapping::Random => {
            if p.clients < p.tasks {
                return Err(FedError::param(format!("{} clients cannot cover {} tasks", p.clients, p.tasks)));
            }
            let mut attempt = 0u64;
            loop {
                let mut s = rng.stream("mtl-mapping", attempt, 0);
                let draw: Vec<usize> = (0..p.clients).map(|_| s.random_range(0..p.tasks)).collect();
                let mut seen = vec![false; p.tasks];
                draw.iter().for_each(|&t| seen[t] = true);
                if seen.iter().all(|&x| x) {
                    break draw;
                }
                attempt += 1;
            }
        }
    };
    let mut t = rng.stream("mtl-truth", 0, 0);
    let r = p.shared_rank.clamp(1, p.dim.min(p.tasks));
    let basis = gaussian_matrix(&mut t, p.dim, r, 1.0);
    let coeffs = gaussian_matrix(&mut t, r, p.tasks, 1.0);
    let noise = gaussian_matrix(&mut t, p.dim, p.tasks, p.task_noise);
    let truth = basis.matmul(&coeffs)?.add(&noise);

    let mut clients = Vec::with_capacity(p.clients);
    for (i, &task) in psi.iter().enumerate() {
        let mut s = rng.stream("mtl-data", 0, i as u64);
        let a = gaussian_matrix(&mut s, p.samples_per_client, p.dim, 1.0);
        let z = truth.column(task);
        let b: Vec<f64> = a
            .matvec(z.as_slice())
            .into_iter()
            .map(|v| v + p.noise_sigma * standard_normal(&mut s))
            .collect();
        clients.push(ClientDataset {
            data: ClientData::Regression { features: a, labels: DenseVector::new(b)?, scale: 1.0 },
            task: Some(task),
        });
    }
    let mut inst = ProblemInstance {
        kind: ProblemKind::Mtl,
        seed: p.seed,
        dims: Dims { dim: p.dim, tasks: p.tasks, items: 0 },
        clients,
        regularizers: vec![RegSpec::new(p.reg.kind, p.reg.weight)?],
        ground_truth: Some(Model::Matrix(truth)),
        spectrum: None,
        oracle: None,
    };
    inst.oracle = Some(compute_oracle(&inst, OracleOptions::default())?);
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfParams {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub noise_sigma: f64,
    /// `λ`, the l2,1 weight on the user factors.
    pub reg_weight: f64,
    /// `μ`, the nuclear weight on the item factors.
    pub item_reg_weight: f64,
    pub seed: u64,
}

/// Rating matrix `R = U* V*ᵀ + N(0, σ²)` with standard normal factors; user `i`
/// holds row `R_i`. The latent dimension of the instance equals `rank`.
pub fn gen_mf(p: &MfParams) -> Result<ProblemInstance> {
    positive("users", p.users)?;
    positive("items", p.items)?;
    positive("rank", p.rank)?;
    nonnegative("noise_sigma", p.noise_sigma)?;
    nonnegative("reg_weight", p.reg_weight)?;
    nonnegative("item_reg_weight", p.item_reg_weight)?;
    if p.rank > p.users.min(p.items) {
        return Err(FedError::param(format!(
            "rank {} exceeds min(users, items) = {}",
            p.rank,
            p.users.min(p.items)
        )));
    }
    let rng = Rng::new(p.seed);
    let mut t = rng.stream("mf-truth", 0, 0);
    let u = gaussian_matrix(&mut t, p.users, p.rank, 1.0);
    let v = gaussian_matrix(&mut t, p.items, p.rank, 1.0);
    let clean = u.matmul(&v.transpose())?;
    let mut s = rng.stream("mf-noise", 0, 0);
    let ratings = DenseMatrix::from_fn(p.users, p.items, |i, j| clean[(i, j)] + p.noise_sigma * standard_normal(&mut s));
    let clients = (0..p.users)
        .map(|i| ClientDataset { data: ClientData::Ratings { row: ratings.row_vector(i) }, task: None })
        .collect();
    let mut inst = ProblemInstance {
        kind: ProblemKind::Mf,
        seed: p.seed,
        dims: Dims { dim: p.rank, tasks: 1, items: p.items },
        clients,
        regularizers: vec![RegSpec::new(RegKind::L21, p.reg_weight)?, RegSpec::new(RegKind::Nuclear, p.item_reg_weight)?],
        ground_truth: Some(Model::Factors { users: u, items: v }),
        spectrum: Some(singular_values(&ratings)?.into_vec()),
        oracle: None,
    };
    inst.oracle = Some(compute_oracle(&inst, OracleOptions::default())?);
    Ok(inst)
}

impl ProblemInstance {
    /// `U* V*ᵀ` for matrix-factorization instances.
    pub fn clean_ratings(&self) -> Result<DenseMatrix> {
        match &self.ground_truth {
            Some(Model::Factors { users, items }) => users.matmul(&items.transpose()),
            _ => Err(FedError::State("instance has no factor ground truth".into())),
        }
    }

    /// The observed rating matrix `R`.
    pub fn ratings(&self) -> Result<DenseMatrix> {
        let mut r = DenseMatrix::zeros(self.num_clients(), self.dims.items.max(1));
        for (i, c) in self.clients.iter().enumerate() {
            match &c.data {
                ClientData::Ratings { row } => r.set_row(i, row.as_slice()),
                _ => return Err(FedError::State("instance has no rating rows".into())),
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lasso(seed: u64) -> LassoParams {
        LassoParams {
            clients: 10,
            dim: 50,
            samples_per_client: 20,
            sparsity: 5,
            noise_sigma: 0.01,
            reg_weight: 0.05,
            partition: Partition::Iid,
            seed,
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_lasso(&lasso(4)).unwrap(), gen_lasso(&lasso(4)).unwrap());
        let p = MtlParams::new(12, 3, 4, TaskMapping::Random, 9);
        assert_eq!(gen_mtl(&p).unwrap(), gen_mtl(&p).unwrap());
    }

    #[test]
    fn lasso_oracle_recovers_support() {
        let inst = gen_lasso(&lasso(1)).unwrap();
        let Some(Model::Vector(truth)) = &inst.ground_truth else { panic!() };
        let oracle = inst.oracle.as_ref().unwrap();
        let w = oracle.solution.as_vector().unwrap();
        for j in 0..truth.len() {
            if truth[j] != 0.0 {
                assert!(w[j] != 0.0, "support index {j} lost");
            }
        }
    }

    #[test]
    fn noiseless_unregularized_single_client_is_least_squares() {
        let p = LassoParams {
            clients: 1,
            dim: 2,
            samples_per_client: 10,
            sparsity: 2,
            noise_sigma: 0.0,
            reg_weight: 0.0,
            partition: Partition::Iid,
            seed: 5,
        };
        let inst = gen_lasso(&p).unwrap();
        let Some(Model::Vector(truth)) = &inst.ground_truth else { panic!() };
        let w = inst.oracle.as_ref().unwrap().solution.as_vector().unwrap();
        assert!(w.sub(truth).norm2() <= 1e-6);
    }

    #[test]
    fn mtl_mappings() {
        let inst = gen_mtl(&MtlParams::new(5, 5, 3, TaskMapping::Identity, 1)).unwrap();
        for i in 0..5 {
            assert_eq!(inst.task_of(i).unwrap(), i);
        }
        let inst = gen_mtl(&MtlParams::new(12, 3, 3, TaskMapping::Random, 2)).unwrap();
        let mut seen = [false; 3];
        (0..12).for_each(|i| seen[inst.task_of(i).unwrap()] = true);
        assert!(seen.iter().all(|&s| s));
        assert!(gen_mtl(&MtlParams::new(5, 4, 3, TaskMapping::Identity, 1)).is_err());
    }

    #[test]
    fn rank_one_ratings_have_vanishing_minors() {
        let p = MfParams { users: 6, items: 5, rank: 1, noise_sigma: 0.0, reg_weight: 0.01, item_reg_weight: 0.01, seed: 3 };
        let r = gen_mf(&p).unwrap().ratings().unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let minor = r[(i, j)] * r[(i + 1, j + 1)] - r[(i, j + 1)] * r[(i + 1, j)];
                assert!(minor.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let mut p = lasso(1);
        p.sparsity = 51;
        assert!(gen_lasso(&p).is_err());
        let l = LrmeParams { clients: 2, dim: 3, rank: 4, measurements_per_client: 5, noise_sigma: 0.0, reg_weight: 0.0, seed: 0 };
        assert!(gen_lrme(&l).is_err());
        let m = MfParams { users: 3, items: 2, rank: 3, noise_sigma: 0.0, reg_weight: 0.0, item_reg_weight: 0.0, seed: 0 };
        assert!(gen_mf(&m).is_err());
    }
}
