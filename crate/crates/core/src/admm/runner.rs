use crate::admm::{
    lfedadmm_local_x, lfedadmm_server_z, mf_server_v, mf_user_update, mtl_local_x, mtl_server_z, multiplier_update,
    AdmmSpec, AdmmVariant,
};
use crate::error::{FedError, Result};
use crate::numkit::{DenseMatrix, DenseVector};
use crate::problems::{ClientData, Model, ProblemInstance, RegKind};
use crate::shield::dense_bytes;
use crate::sim::engine::{Algorithm, ClientState, RoundContext, RoundOutcome};
use crate::sim::rng::normal_vec;
use crate::sim::Rng;

/// Standard deviation of the random MF factor initialization.
const MF_INIT_STD: f64 = 0.1;

/// Drives the ADMM solvers.
///
/// Absent clients keep their local model and multiplier, so the server sum over all
/// clients equals the sum of each client's last transmission.
pub struct AdmmRunner<'a> {
    instance: &'a ProblemInstance,
    spec: AdmmSpec,
    /// `Z` (`lrme`, `mtl`) or the item matrix `V` (`mf`).
    consensus: DenseMatrix,
    clients: Vec<ClientState>,
}

/// Updated client slot produced by one local pass.
struct LocalResult {
    model: Model,
    multiplier: Model,
    factor: Option<DenseVector>,
}

impl<'a> AdmmRunner<'a> {
    pub(crate) fn new(instance: &'a ProblemInstance, spec: &AdmmSpec, rng: &Rng) -> Result<Self> {
        spec.check_instance(instance)?;
        let d = instance.dims.dim;
        let n = instance.num_clients();
        let (consensus, clients) = match spec.variant {
            AdmmVariant::Lrme => {
                let slot = |i| {
                    let mut c = ClientState::new(i, Model::Matrix(DenseMatrix::zeros(d, d)));
                    c.multiplier = Some(Model::Matrix(DenseMatrix::zeros(d, d)));
                    c
                };
                (DenseMatrix::zeros(d, d), (0..n).map(slot).collect())
            }
            AdmmVariant::MtlA | AdmmVariant::MtlB | AdmmVariant::MtlC => {
                let slot = |i| {
                    let mut c = ClientState::new(i, Model::Vector(DenseVector::zeros(d)));
                    c.multiplier = Some(Model::Vector(DenseVector::zeros(d)));
                    c
                };
                (DenseMatrix::zeros(d, instance.dims.tasks), (0..n).map(slot).collect())
            }
            AdmmVariant::Mf => {
                let m = instance.dims.items;
                let mut s = rng.stream("mf-init", 0, n as u64);
                let v = DenseMatrix::new(m, d, normal_vec(&mut s, m * d, MF_INIT_STD))?;
                let mut clients = Vec::with_capacity(n);
                for i in 0..n {
                    let mut s = rng.stream("mf-init", 0, i as u64);
                    let u = DenseVector::new(normal_vec(&mut s, d, MF_INIT_STD))?;
                    let x = DenseVector::new(v.matvec(u.as_slice()))?;
                    let mut c = ClientState::new(i, Model::Vector(x));
                    c.multiplier = Some(Model::Vector(DenseVector::zeros(m)));
                    c.factor = Some(u);
                    clients.push(c);
                }
                (v, clients)
            }
        };
        Ok(Self { instance, spec: *spec, consensus, clients })
    }

    fn local(&self, i: usize) -> Result<LocalResult> {
        let p = &self.spec.params;
        let c = &self.clients[i];
        let mult = c.multiplier.as_ref().ok_or_else(|| FedError::State(format!("client {i} has no multiplier")))?;
        match self.spec.variant {
            AdmmVariant::Lrme => {
                let z = &self.consensus;
                let mut x = c.model.as_matrix()?.clone();
                let mut pi = mult.as_matrix()?.clone();
                for _ in 0..p.local_steps {
                    let g = self.instance.local_gradient(i, &Model::Matrix(x.clone()))?;
                    x = lfedadmm_local_x(&x, z, &pi, g.as_matrix()?, p)?;
                    pi = multiplier_update(&pi, &x, z, p.rho)?;
                }
                Ok(LocalResult { model: Model::Matrix(x), multiplier: Model::Matrix(pi), factor: None })
            }
            AdmmVariant::MtlA | AdmmVariant::MtlB | AdmmVariant::MtlC => {
                let z = self.consensus.column(self.instance.task_of(i)?);
                let lambda = mult.as_vector()?;
                let x = mtl_local_x(self.instance, i, &z, lambda, p.rho)?;
                let lambda = multiplier_update(lambda, &x, &z, p.rho)?;
                Ok(LocalResult { model: Model::Vector(x), multiplier: Model::Vector(lambda), factor: None })
            }
            AdmmVariant::Mf => {
                let ClientData::Ratings { row } = &self.instance.client(i)?.data else {
                    return Err(FedError::State("mf clients hold rating rows".into()));
                };
                let u = c.factor.as_ref().ok_or_else(|| FedError::State(format!("client {i} has no profile")))?;
                let pi = mult.as_vector()?;
                let lambda = self.instance.reg_weight(RegKind::L21);
                let (x, u) = mf_user_update(c.model.as_vector()?, u, pi, &self.consensus, row, p, lambda)?;
                let pred = DenseVector::new(self.consensus.matvec(u.as_slice()))?;
                let pi = multiplier_update(pi, &x, &pred, p.rho)?;
                Ok(LocalResult { model: Model::Vector(x), multiplier: Model::Vector(pi), factor: Some(u) })
            }
        }
    }

    fn vectors(&self, pick: impl Fn(&ClientState) -> Option<&Model>) -> Result<Vec<DenseVector>> {
        self.clients
            .iter()
            .map(|c| {
                pick(c)
                    .ok_or_else(|| FedError::State(format!("client {} is missing ADMM state", c.id)))?
                    .as_vector()
                    .cloned()
            })
            .collect()
    }

    fn server_update(&mut self) -> Result<()> {
        let p = &self.spec.params;
        let n = self.clients.len();
        self.consensus = match self.spec.variant {
            AdmmVariant::Lrme => {
                let z = &self.consensus;
                let mut sum = DenseMatrix::zeros(z.rows(), z.cols());
                for c in &self.clients {
                    let pi = c.multiplier.as_ref().ok_or_else(|| FedError::State("missing multiplier".into()))?;
                    sum.axpy(1.0, pi.as_matrix()?);
                    sum.axpy(p.rho, c.model.as_matrix()?);
                }
                lfedadmm_server_z(z, &sum, n, p, self.instance.reg_weight(RegKind::Nuclear))?
            }
            AdmmVariant::MtlA | AdmmVariant::MtlB | AdmmVariant::MtlC => {
                let case = self.spec.variant.mtl_case().expect("multi-task variant");
                let weight = match case {
                    crate::admm::MtlServerCase::C => self.instance.reg_weight(RegKind::TraceSquare),
                    _ => self.instance.reg_weight(RegKind::Nuclear),
                };
                let xs = self.vectors(|c| Some(&c.model))?;
                let ls = self.vectors(|c| c.multiplier.as_ref())?;
                let tasks: Vec<usize> = (0..n).map(|i| self.instance.task_of(i)).collect::<Result<_>>()?;
                mtl_server_z(case, &self.consensus, &xs, &ls, &tasks, p, weight)?
            }
            AdmmVariant::Mf => {
                let xs = self.vectors(|c| Some(&c.model))?;
                let pis = self.vectors(|c| c.multiplier.as_ref())?;
                let us: Vec<DenseVector> = self
                    .clients
                    .iter()
                    .map(|c| c.factor.clone().ok_or_else(|| FedError::State("missing user profile".into())))
                    .collect::<Result<_>>()?;
                mf_server_v(&self.consensus, &xs, &pis, &us, p, self.instance.reg_weight(RegKind::Nuclear))?
            }
        };
        Ok(())
    }

    /// Mean consensus violation over all clients.
    fn residual(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, c) in self.clients.iter().enumerate() {
            total += match self.spec.variant {
                AdmmVariant::Lrme => c.model.as_matrix()?.sub(&self.consensus).frobenius_norm(),
                AdmmVariant::Mf => {
                    let u = c.factor.as_ref().ok_or_else(|| FedError::State("missing user profile".into()))?;
                    let pred = DenseVector::new(self.consensus.matvec(u.as_slice()))?;
                    c.model.as_vector()?.sub(&pred).norm2()
                }
                _ => c.model.as_vector()?.sub(&self.consensus.column(self.instance.task_of(i)?)).norm2(),
            };
        }
        Ok(total / self.clients.len() as f64)
    }

    /// Reals sent down to and up from each sampled client.
    fn message_sizes(&self) -> (usize, usize) {
        let d = self.instance.dims.dim;
        let m = self.instance.dims.items;
        match self.spec.variant {
            AdmmVariant::Lrme => (d * d, d * d),
            AdmmVariant::Mf => (m * d, m + d),
            _ => (d, d),
        }
    }
}

impl Algorithm for AdmmRunner<'_> {
    fn round(&mut self, ctx: &RoundContext) -> Result<RoundOutcome> {
        let results = ctx.map_clients(|i| self.local(i))?;
        for (&i, r) in ctx.sampled.iter().zip(results) {
            let c = &mut self.clients[i];
            c.model = r.model;
            c.multiplier = Some(r.multiplier);
            if r.factor.is_some() {
                c.factor = r.factor;
            }
            c.participated_round = Some(ctx.round);
        }
        self.server_update()?;
        let (down, up) = self.message_sizes();
        let k = ctx.sampled.len() as u64;
        Ok(RoundOutcome {
            residual: self.residual()?,
            bytes_up: k * dense_bytes(up),
            bytes_down: k * dense_bytes(down),
            epsilon: 0.0,
        })
    }

    fn model(&self) -> Model {
        match self.spec.variant {
            AdmmVariant::Mf => {
                let d = self.instance.dims.dim;
                let users = DenseMatrix::from_fn(self.clients.len(), d, |i, k| {
                    self.clients[i].factor.as_ref().map_or(0.0, |u| u[k])
                });
                Model::Factors { users, items: self.consensus.clone() }
            }
            _ => Model::Matrix(self.consensus.clone()),
        }
    }

    fn clients(&self) -> &[ClientState] {
        &self.clients
    }
}
