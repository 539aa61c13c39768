//! The round engine.
//!
//! Every algorithm follows the same round: sample, broadcast, local updates, upload,
//! server update, record one [`RoundMetrics`] row.
//!
//! Compatibility table:
//!
//! | family        | variant / accel          | problem kinds                    | topologies                  |
//! |---------------|--------------------------|----------------------------------|-----------------------------|
//! | `first-order` | none, momentum           | `lasso`, `quadratic`             | star, tree, gossip, clustered |
//! | `first-order` | control-variate (global) | `lasso`, `quadratic`             | star, tree                  |
//! | `admm`        | `lrme`                   | `lrme`                           | star                        |
//! | `admm`        | `mtl-a`                  | `mtl`, identity map, nuclear     | star                        |
//! | `admm`        | `mtl-b`                  | `mtl`, nuclear                   | star                        |
//! | `admm`        | `mtl-c`                  | `mtl`, trace-square              | star                        |
//! | `admm`        | `mf`                     | `mf`                             | star                        |
//!
//! Partial participation is available on star and tree; gossip and clustered runs
//! need every client each round. Compression and privacy apply to first-order uploads
//! on star and tree, robust rules and adversarial clients to first-order on star.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmRunner, AdmmSpec};
use crate::error::{FedError, Result};
use crate::first_order::{AccelState, FirstOrderRunner, FirstOrderSpec};
use crate::numkit::DenseVector;
use crate::problems::{Model, ProblemInstance};
use crate::shield::ShieldSpec;
use crate::sim::{sample_clients, Rng, RoundMetrics, Topology};

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum Family {
    FirstOrder(FirstOrderSpec),
    Admm(AdmmSpec),
}

/// Clients that replace their upload with `scale · N(0, I)` every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    /// The adversarial clients are the `count` highest ids.
    pub count: usize,
    pub scale: f64,
}

/// Order in which the sampled clients' local work is evaluated. Results are always
/// folded in ascending id order, so every choice yields identical runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    #[default]
    Serial,
    /// A per-round random permutation.
    Shuffled,
    /// Worker threads.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub family: Family,
    /// Sampling fraction in `(0, 1]`.
    pub participation: f64,
    pub shield: ShieldSpec,
    pub adversary: Option<Adversary>,
    pub execution: Execution,
}

impl AlgorithmSpec {
    pub fn new(family: Family) -> Self {
        Self { family, participation: 1.0, shield: ShieldSpec::default(), adversary: None, execution: Execution::Serial }
    }

    pub fn with_participation(mut self, fraction: f64) -> Self {
        self.participation = fraction;
        self
    }

    pub fn with_shield(mut self, shield: ShieldSpec) -> Self {
        self.shield = shield;
        self
    }

    pub fn with_adversary(mut self, adversary: Adversary) -> Self {
        self.adversary = Some(adversary);
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// Per-client slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub id: usize,
    /// `x_i`, `X_i` or the MF consensus row `x_i`.
    pub model: Model,
    /// `π_i` or `λ_i` for ADMM variants.
    pub multiplier: Option<Model>,
    /// The MF user profile `u_i`.
    pub factor: Option<DenseVector>,
    pub accel: AccelState,
    /// Last round in which the client was sampled.
    pub participated_round: Option<usize>,
}

impl ClientState {
    pub fn new(id: usize, model: Model) -> Self {
        Self { id, model, multiplier: None, factor: None, accel: AccelState::None, participated_round: None }
    }
}

pub(crate) struct RoundContext<'a> {
    pub round: usize,
    pub sampled: &'a [usize],
    pub rng: &'a Rng,
    pub execution: Execution,
}

impl RoundContext<'_> {
    /// Runs `work` for every sampled client and returns the results in id order.
    pub fn map_clients<T: Send>(&self, work: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        match self.execution {
            Execution::Serial => self.sampled.iter().map(|&i| work(i)).collect(),
            Execution::Parallel => self.sampled.par_iter().map(|&i| work(i)).collect(),
            Execution::Shuffled => {
                let mut order: Vec<usize> = (0..self.sampled.len()).collect();
                order.shuffle(&mut self.rng.stream("evaluation-order", self.round as u64, 0));
                let mut slots: Vec<Option<T>> = (0..self.sampled.len()).map(|_| None).collect();
                for k in order {
                    slots[k] = Some(work(self.sampled[k])?);
                }
                Ok(slots.into_iter().map(|s| s.expect("every slot is filled")).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct RoundOutcome {
    pub residual: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Privacy budget charged this round under naive composition.
    pub epsilon: f64,
}

pub(crate) trait Algorithm: Send {
    fn round(&mut self, ctx: &RoundContext) -> Result<RoundOutcome>;
    /// The current global estimate, evaluated for the objective column.
    fn model(&self) -> Model;
    fn clients(&self) -> &[ClientState];
}

/// Everything a finished run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_model: Model,
    /// Naive sum of the per-round privacy budgets of the most frequently sampled client.
    pub dp_epsilon: f64,
}

/// A run that can be advanced one round at a time.
pub struct Simulation<'a> {
    instance: &'a ProblemInstance,
    spec: AlgorithmSpec,
    rng: Rng,
    algorithm: Box<dyn Algorithm + 'a>,
    ledger: Vec<RoundMetrics>,
    epsilon_per_client: Vec<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(instance: &'a ProblemInstance, spec: &AlgorithmSpec, topology: &Topology, rng: &Rng) -> Result<Self> {
        check_compatibility(instance, spec, topology)?;
        let algorithm: Box<dyn Algorithm + 'a> = match &spec.family {
            Family::FirstOrder(f) => Box::new(FirstOrderRunner::new(instance, f, spec, topology)?),
            Family::Admm(a) => Box::new(AdmmRunner::new(instance, a, rng)?),
        };
        Ok(Self {
            instance,
            spec: spec.clone(),
            rng: *rng,
            algorithm,
            ledger: Vec::new(),
            epsilon_per_client: vec![0.0; instance.num_clients()],
        })
    }

    /// Executes one round and appends its ledger row.
    pub fn step(&mut self) -> Result<&RoundMetrics> {
        let round = self.ledger.len() + 1;
        let sampled = sample_clients(self.instance.num_clients(), self.spec.participation, &self.rng, round)?;
        let ctx = RoundContext { round, sampled: &sampled, rng: &self.rng, execution: self.spec.execution };
        let outcome = self.algorithm.round(&ctx)?;
        let objective = self.instance.objective(&self.algorithm.model()).unwrap_or(f64::NAN);
        if !objective.is_finite() || objective.abs() > DIVERGENCE_THRESHOLD {
            return Err(FedError::Divergence { round, objective });
        }
        for &i in &sampled {
            self.epsilon_per_client[i] += outcome.epsilon;
        }
        self.ledger.push(RoundMetrics {
            round,
            objective,
            residual: outcome.residual,
            bytes_up: outcome.bytes_up,
            bytes_down: outcome.bytes_down,
            sampled,
        });
        Ok(self.ledger.last().expect("row was just pushed"))
    }

    pub fn run(&mut self, rounds: usize) -> Result<()> {
        for _ in 0..rounds {
            let row = self.step()?;
            log::debug!("round {} objective {:e} residual {:e}", row.round, row.objective, row.residual);
        }
        Ok(())
    }

    pub fn model(&self) -> Model {
        self.algorithm.model()
    }

    pub fn clients(&self) -> &[ClientState] {
        self.algorithm.clients()
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.ledger
    }

    pub fn dp_epsilon(&self) -> f64 {
        self.epsilon_per_client.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput { dp_epsilon: self.dp_epsilon(), final_model: self.algorithm.model(), metrics: self.ledger }
    }
}

/// Runs `rounds` rounds and returns the ledger and final model.
pub fn run_experiment(
    instance: &ProblemInstance,
    algorithm: &AlgorithmSpec,
    topology: &Topology,
    rounds: usize,
    rng: &Rng,
) -> Result<RunOutput> {
    let mut sim = Simulation::new(instance, algorithm, topology, rng)?;
    sim.run(rounds)?;
    Ok(sim.into_output())
}

/// Rejects algorithm, problem and topology combinations outside the compatibility table.
pub fn check_compatibility(instance: &ProblemInstance, spec: &AlgorithmSpec, topology: &Topology) -> Result<()> {
    use crate::problems::ProblemKind;
    let cfg = |msg: String| Err(FedError::Configuration(msg));
    topology.validate_for(instance.num_clients())?;
    if !(spec.participation > 0.0 && spec.participation <= 1.0) {
        return cfg(format!("participation must lie in (0, 1], got {}", spec.participation));
    }
    let full = spec.participation >= 1.0;
    match &spec.family {
        Family::FirstOrder(f) => {
            if !matches!(instance.kind, ProblemKind::Lasso | ProblemKind::Quadratic) {
                return cfg(format!(
                    "first-order algorithms support lasso and quadratic problems, not {}",
                    instance.kind.name()
                ));
            }
            f.validate()?;
            let decentralized = matches!(topology, Topology::Gossip(_) | Topology::Clustered(_));
            if decentralized && !full {
                return cfg(format!("the {} topology needs full participation", topology.name()));
            }
            if decentralized && f.needs_server_state() {
                return cfg(format!(
                    "{} acceleration with global scope needs a central server; the {} topology has none",
                    f.accel.name(),
                    topology.name()
                ));
            }
            let sh = &spec.shield;
            if decentralized && (sh.compress != crate::shield::Compressor::None || sh.dp.is_some()) {
                return cfg("compression and privacy are available on star and tree topologies only".into());
            }
            if !matches!(topology, Topology::Star) && (sh.robust.is_some() || spec.adversary.is_some()) {
                return cfg("robust aggregation and adversarial clients need the star topology".into());
            }
            sh.compress.validate(instance.dims.dim)?;
            if let Some(r) = &sh.robust {
                let per_round = (spec.participation * instance.num_clients() as f64 * (1.0 - 1e-12)).ceil() as usize;
                r.validate_for(per_round)?;
            }
            if let Some(a) = &spec.adversary {
                if a.count > instance.num_clients() || !(a.scale.is_finite() && a.scale >= 0.0) {
                    return cfg(format!("invalid adversary: {} clients with scale {}", a.count, a.scale));
                }
            }
        }
        Family::Admm(a) => {
            if !matches!(topology, Topology::Star) {
                return cfg(format!("ADMM solvers run on the star topology, not {}", topology.name()));
            }
            if !spec.shield.is_inactive() || spec.adversary.is_some() {
                return cfg("ADMM solvers do not support compression, robust aggregation or privacy".into());
            }
            a.check_instance(instance)?;
        }
    }
    Ok(())
}
