use crate::error::{FedError, Result};
use crate::first_order::{
    global_round_accel, local_epochs, local_regularizer, mirror_step, AccelKind, AccelState, ClientReturn,
    FirstOrderSpec, Scope, Weighting,
};
use crate::numkit::DenseVector;
use crate::problems::{Model, ProblemInstance, RegSpec};
use crate::shield::{dense_bytes, dp_perturb, ShieldSpec};
use crate::sim::engine::{Adversary, Algorithm, AlgorithmSpec, ClientState, RoundContext, RoundOutcome};
use crate::sim::rng::normal_vec;
use crate::sim::{gossip_mix, tree_aggregate, weighted_average, HubPattern, Topology};

/// What one sampled client hands back after local training and the upload pipeline.
struct Upload {
    model: DenseVector,
    /// Reconstructed `x_i − x` as received by the server.
    delta: DenseVector,
    state: AccelState,
    bytes: u64,
    epsilon: f64,
}

/// Drives FedAvg, momentum and control-variate rounds on any topology.
pub struct FirstOrderRunner<'a> {
    instance: &'a ProblemInstance,
    spec: FirstOrderSpec,
    shield: ShieldSpec,
    adversary: Option<Adversary>,
    topology: Topology,
    reg: RegSpec,
    weights: Vec<f64>,
    /// Server model; unused by pure gossip.
    x: DenseVector,
    /// Hub models for hub-gossip clusters.
    hubs: Vec<DenseVector>,
    variate: Option<DenseVector>,
    momentum: Option<DenseVector>,
    clients: Vec<ClientState>,
}

impl<'a> FirstOrderRunner<'a> {
    pub(crate) fn new(
        instance: &'a ProblemInstance,
        spec: &FirstOrderSpec,
        run: &AlgorithmSpec,
        topology: &Topology,
    ) -> Result<Self> {
        spec.validate()?;
        let d = instance.dims.dim;
        let n = instance.num_clients();
        let weights = match spec.weighting {
            Weighting::Uniform => vec![1.0; n],
            Weighting::DataSize => instance.sample_counts(),
        };
        let clients = (0..n)
            .map(|i| {
                let mut c = ClientState::new(i, Model::Vector(DenseVector::zeros(d)));
                c.accel = AccelState::initial(spec.accel, d, spec.beta);
                c
            })
            .collect();
        let hubs = match topology {
            Topology::Clustered(c) if c.pattern() == HubPattern::HubGossip => vec![DenseVector::zeros(d); c.num_clusters()],
            _ => Vec::new(),
        };
        Ok(Self {
            instance,
            spec: spec.clone(),
            shield: run.shield,
            adversary: run.adversary,
            topology: topology.clone(),
            reg: local_regularizer(instance),
            weights,
            x: DenseVector::zeros(d),
            hubs,
            variate: (spec.accel == AccelKind::ControlVariate).then(|| DenseVector::zeros(d)),
            momentum: (spec.accel == AccelKind::Momentum && spec.scope == Scope::Global)
                .then(|| DenseVector::zeros(d)),
            clients,
        })
    }

    fn dim(&self) -> usize {
        self.instance.dims.dim
    }

    fn local_model(&self, i: usize) -> Result<&DenseVector> {
        self.clients[i].model.as_vector()
    }

    /// Acceleration state a client starts the round with.
    fn starting_state(&self, i: usize) -> AccelState {
        match (&self.clients[i].accel, &self.variate, &self.momentum) {
            (AccelState::ControlVariate { local, .. }, Some(c), _) => {
                AccelState::ControlVariate { local: local.clone(), global: c.clone() }
            }
            (AccelState::Momentum { beta, .. }, _, Some(m)) => AccelState::Momentum { beta: *beta, buffer: m.clone() },
            (s, _, _) => s.clone(),
        }
    }

    fn is_adversarial(&self, i: usize) -> bool {
        self.adversary.is_some_and(|a| i + a.count >= self.instance.num_clients())
    }

    /// Local training from `start` followed by the upload pipeline
    /// (adversarial replacement, privacy, compression).
    fn train_and_upload(&self, ctx: &RoundContext, i: usize, start: &DenseVector) -> Result<Upload> {
        let round = ctx.round as u64;
        let mut stream = ctx.rng.stream("local", round, i as u64);
        let (model, state) = local_epochs(self.instance, i, start, self.starting_state(i), &self.spec.plan, &mut stream)?;
        let mut delta = model.sub(start);
        if self.is_adversarial(i) {
            let a = self.adversary.expect("checked by is_adversarial");
            let mut s = ctx.rng.stream("adversary", round, i as u64);
            delta = DenseVector::new(normal_vec(&mut s, delta.len(), a.scale))?;
        }
        let mut epsilon = 0.0;
        if let Some(dp) = &self.shield.dp {
            delta = dp_perturb(&delta, dp, &mut ctx.rng.stream("privacy", round, i as u64))?;
            epsilon = dp.epsilon;
        }
        let payload = self.shield.compress.apply(&delta, &mut ctx.rng.stream("compress", round, i as u64))?;
        Ok(Upload { model, delta: payload.decompress(), state, bytes: payload.bytes(), epsilon })
    }

    /// Extra dense vectors exchanged per client for server-held acceleration state.
    fn accel_reals(&self) -> u64 {
        if self.spec.needs_server_state() {
            dense_bytes(self.dim())
        } else {
            0
        }
    }

    /// `‖x − prox_{ηΨ}(x − η∇F(x))‖ / η`.
    fn gradient_mapping(&self, x: &DenseVector) -> Result<f64> {
        let eta = self.spec.plan.eta;
        let g = self.instance.smooth_gradient(&Model::Vector(x.clone()))?;
        let p = mirror_step(x, g.as_vector()?, eta, &self.reg)?;
        Ok(x.sub(&p).norm2() / eta)
    }

    fn commit(&mut self, ctx: &RoundContext, ids: &[usize], uploads: &[Upload]) {
        for (&i, u) in ids.iter().zip(uploads) {
            let c = &mut self.clients[i];
            c.model = Model::Vector(u.model.clone());
            // server-held parts of the state are refreshed at the next broadcast
            c.accel = u.state.clone();
            c.participated_round = Some(ctx.round);
        }
    }

    fn server_round(&mut self, ctx: &RoundContext) -> Result<RoundOutcome> {
        let start = self.x.clone();
        let uploads = ctx.map_clients(|i| self.train_and_upload(ctx, i, &start))?;
        let ids = ctx.sampled;
        let d = self.dim();
        let weights: Vec<f64> = ids.iter().map(|&i| self.weights[i]).collect();
        let mut out = RoundOutcome { epsilon: uploads.iter().map(|u| u.epsilon).fold(0.0, f64::max), ..Default::default() };

        let variate_deltas: Vec<Option<DenseVector>> = ids
            .iter()
            .zip(&uploads)
            .map(|(&i, u)| match (&u.state, &self.clients[i].accel) {
                (AccelState::ControlVariate { local: new, .. }, AccelState::ControlVariate { local: old, .. }) => {
                    Some(new.sub(old))
                }
                _ => None,
            })
            .collect();

        let (new_x, new_c) = match &self.topology {
            Topology::Tree(tree) => {
                let n = self.instance.num_clients();
                let mut all = vec![DenseVector::zeros(d); n];
                let mut w = vec![0.0; n];
                for ((&i, u), &wi) in ids.iter().zip(&uploads).zip(&weights) {
                    all[i] = u.delta.clone();
                    w[i] = wi;
                }
                let agg = tree_aggregate(&all, tree, &w)?;
                let (_, c) = self.aggregate_star(&start, &uploads, &variate_deltas, &weights)?;
                // every active aggregation node forwards one dense model upward
                let active = active_tree_nodes(tree.levels(), ids);
                out.bytes_up += active as u64 * dense_bytes(d);
                out.bytes_down += active as u64 * dense_bytes(d);
                (start.add(&agg), c)
            }
            _ => {
                if let Some(rule) = &self.shield.robust {
                    let deltas: Vec<DenseVector> = uploads.iter().map(|u| u.delta.clone()).collect();
                    let (_, c) = self.aggregate_star(&start, &uploads, &variate_deltas, &weights)?;
                    (start.add(&rule.aggregate(&deltas)?), c)
                } else {
                    self.aggregate_star(&start, &uploads, &variate_deltas, &weights)?
                }
            }
        };
        if let Some(m) = &self.momentum {
            let buffers: Vec<DenseVector> = uploads
                .iter()
                .map(|u| match &u.state {
                    AccelState::Momentum { buffer, .. } => buffer.clone(),
                    _ => m.clone(),
                })
                .collect();
            self.momentum = Some(weighted_average(&buffers, &weights)?);
        }
        out.bytes_up += uploads.iter().map(|u| u.bytes + self.accel_reals()).sum::<u64>();
        out.bytes_down += ids.len() as u64 * (dense_bytes(d) + self.accel_reals());
        self.x = new_x;
        self.variate = new_c;
        self.commit(ctx, ids, &uploads);
        out.residual = self.gradient_mapping(&self.x)?;
        Ok(out)
    }

    fn aggregate_star(
        &self,
        start: &DenseVector,
        uploads: &[Upload],
        variate_deltas: &[Option<DenseVector>],
        weights: &[f64],
    ) -> Result<(DenseVector, Option<DenseVector>)> {
        let returns: Vec<ClientReturn> = uploads
            .iter()
            .zip(variate_deltas)
            .map(|(u, c)| ClientReturn { model: start.add(&u.delta), variate_delta: c.clone() })
            .collect();
        global_round_accel(self.variate.as_ref(), &returns, weights, self.instance.num_clients())
    }

    fn gossip_round(&mut self, ctx: &RoundContext, w: &crate::numkit::DenseMatrix) -> Result<RoundOutcome> {
        let starts: Vec<DenseVector> =
            (0..self.instance.num_clients()).map(|i| self.local_model(i).cloned()).collect::<Result<_>>()?;
        let uploads = ctx.map_clients(|i| self.train_and_upload(ctx, i, &starts[i]))?;
        let trained: Vec<DenseVector> = uploads.iter().map(|u| u.model.clone()).collect();
        let mixed = gossip_mix(&trained, w)?;
        let d = self.dim();
        let edges: usize = (0..w.rows()).map(|i| (0..w.rows()).filter(|&j| j != i && w[(i, j)] > 0.0).count()).sum();
        self.commit(ctx, ctx.sampled, &uploads);
        for (c, m) in self.clients.iter_mut().zip(mixed) {
            c.model = Model::Vector(m);
        }
        let models: Vec<DenseVector> =
            (0..self.instance.num_clients()).map(|i| self.local_model(i).cloned()).collect::<Result<_>>()?;
        Ok(RoundOutcome {
            residual: rms_spread(&models)?,
            bytes_up: edges as u64 * dense_bytes(d),
            bytes_down: 0,
            epsilon: 0.0,
        })
    }

    fn clustered_round(&mut self, ctx: &RoundContext) -> Result<RoundOutcome> {
        let Topology::Clustered(topo) = self.topology.clone() else {
            return Err(FedError::State("clustered round on a non-clustered topology".into()));
        };
        let n = self.instance.num_clients();
        let d = self.dim();
        let assignment = topo.assignment().to_vec();
        let mut out = RoundOutcome::default();
        match topo.pattern() {
            HubPattern::HubGossip => {
                let hubs = self.hubs.clone();
                let uploads = ctx.map_clients(|i| self.train_and_upload(ctx, i, &hubs[assignment[i]]))?;
                let mut merged = Vec::with_capacity(topo.num_clusters());
                for k in 0..topo.num_clusters() {
                    let members = topo.members(k);
                    let models: Vec<DenseVector> = members.iter().map(|&i| uploads[i].model.clone()).collect();
                    let w: Vec<f64> = members.iter().map(|&i| self.weights[i]).collect();
                    merged.push(weighted_average(&models, &w)?);
                }
                let hub_w = topo.hub_mixing()?;
                self.hubs = gossip_mix(&merged, hub_w.mixing())?;
                let hub_edges: usize = (0..hub_w.nodes()).map(|k| hub_w.degree(k)).sum();
                out.bytes_up = (n + hub_edges) as u64 * dense_bytes(d);
                out.bytes_down = n as u64 * dense_bytes(d);
                self.commit(ctx, ctx.sampled, &uploads);
                self.x = weighted_average(&self.hubs, &vec![1.0; self.hubs.len()])?;
                out.residual = rms_spread(&self.hubs)?;
            }
            HubPattern::ClientGossip => {
                let start = self.x.clone();
                let uploads = ctx.map_clients(|i| self.train_and_upload(ctx, i, &start))?;
                let mut reps = Vec::with_capacity(topo.num_clusters());
                let mut sizes = Vec::with_capacity(topo.num_clusters());
                let mut gossip_edges = 0usize;
                let mut mixed_all: Vec<Option<DenseVector>> = vec![None; n];
                for k in 0..topo.num_clusters() {
                    let members = topo.members(k);
                    let intra = topo.intra_mixing(k)?;
                    let models: Vec<DenseVector> = members.iter().map(|&i| uploads[i].model.clone()).collect();
                    let mixed = gossip_mix(&models, intra.mixing())?;
                    gossip_edges += (0..intra.nodes()).map(|j| intra.degree(j)).sum::<usize>();
                    reps.push(mixed[0].clone());
                    sizes.push(members.len() as f64);
                    for (&i, m) in members.iter().zip(mixed) {
                        mixed_all[i] = Some(m);
                    }
                }
                self.commit(ctx, ctx.sampled, &uploads);
                for (c, m) in self.clients.iter_mut().zip(mixed_all) {
                    c.model = Model::Vector(m.expect("every client belongs to a cluster"));
                }
                self.x = weighted_average(&reps, &sizes)?;
                out.bytes_up = (gossip_edges + topo.num_clusters()) as u64 * dense_bytes(d);
                out.bytes_down = n as u64 * dense_bytes(d);
                out.residual = self.gradient_mapping(&self.x)?;
            }
        }
        Ok(out)
    }
}

/// Internal tree nodes with at least one sampled descendant.
fn active_tree_nodes(levels: &[Vec<usize>], sampled: &[usize]) -> usize {
    let mut active: Vec<usize> = sampled.to_vec();
    let mut count = 0;
    for level in &levels[..levels.len() - 1] {
        let mut parents: Vec<usize> = active.iter().map(|&c| level[c]).collect();
        parents.sort_unstable();
        parents.dedup();
        count += parents.len();
        active = parents;
    }
    count
}

/// `sqrt((1/N) Σ ‖x_i − x̄‖²)`.
pub(crate) fn rms_spread(models: &[DenseVector]) -> Result<f64> {
    let mean = weighted_average(models, &vec![1.0; models.len()])?;
    Ok((models.iter().map(|m| m.sub(&mean).norm_sq()).sum::<f64>() / models.len() as f64).sqrt())
}

impl Algorithm for FirstOrderRunner<'_> {
    fn round(&mut self, ctx: &RoundContext) -> Result<RoundOutcome> {
        match &self.topology {
            Topology::Star | Topology::Tree(_) => self.server_round(ctx),
            Topology::Gossip(g) => {
                let w = g.mixing().clone();
                self.gossip_round(ctx, &w)
            }
            Topology::Clustered(_) => self.clustered_round(ctx),
        }
    }

    fn model(&self) -> Model {
        match &self.topology {
            Topology::Gossip(_) => {
                let models: Vec<DenseVector> =
                    self.clients.iter().filter_map(|c| c.model.as_vector().ok().cloned()).collect();
                Model::Vector(weighted_average(&models, &vec![1.0; models.len()]).expect("clients share one shape"))
            }
            _ => Model::Vector(self.x.clone()),
        }
    }

    fn clients(&self) -> &[ClientState] {
        &self.clients
    }
}
