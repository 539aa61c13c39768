//! FedAvg-style local training with pluggable acceleration, and federated mirror
//! descent for composite objectives.
//!
//! A client starts from the broadcast model and takes `T` steps
//! `x ← mirror_step(x, 𝒱, η, Ψ)` along the direction `𝒱` from [`direction`]. With the
//! squared-euclidean generator the mirror step is the proximal gradient step, so
//! plain FedAvg is the case `Ψ = 0`, `accel = none`.

mod runner;

pub use runner::FirstOrderRunner;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{soft_threshold_l1, BregmanGenerator, DenseVector};
use crate::problems::{ClientData, ProblemInstance, RegKind, RegSpec};
use crate::sim::weighted_average;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelKind {
    None,
    Momentum,
    ControlVariate,
}

impl AccelKind {
    pub fn name(&self) -> &'static str {
        match self {
            AccelKind::None => "none",
            AccelKind::Momentum => "momentum",
            AccelKind::ControlVariate => "control-variate",
        }
    }
}

/// Whether acceleration buffers live only on clients or are also aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Uniform,
    /// Proportional to the client sample counts `n_i`.
    DataSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalStepPlan {
    /// `T`, local steps per round.
    pub steps: usize,
    /// `η`
    pub eta: f64,
    /// Minibatch size; `None` or a size of at least `n_i` means the full local dataset.
    pub batch: Option<usize>,
}

impl LocalStepPlan {
    pub fn new(steps: usize, eta: f64, batch: Option<usize>) -> Result<Self> {
        let plan = Self { steps, eta, batch };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(FedError::param("local step count T must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(FedError::param(format!("local step size must be positive, got {}", self.eta)));
        }
        if self.batch == Some(0) {
            return Err(FedError::param("minibatch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSpec {
    pub accel: AccelKind,
    pub scope: Scope,
    pub plan: LocalStepPlan,
    /// Momentum coefficient `β`.
    pub beta: f64,
    pub weighting: Weighting,
}

impl FirstOrderSpec {
    /// Plain FedAvg / FedMirror with uniform weights.
    pub fn fedavg(plan: LocalStepPlan) -> Self {
        Self { accel: AccelKind::None, scope: Scope::Local, plan, beta: 0.9, weighting: Weighting::Uniform }
    }

    pub fn control_variate(plan: LocalStepPlan) -> Self {
        Self { accel: AccelKind::ControlVariate, scope: Scope::Global, ..Self::fedavg(plan) }
    }

    pub fn momentum(plan: LocalStepPlan, beta: f64, scope: Scope) -> Self {
        Self { accel: AccelKind::Momentum, scope, beta, ..Self::fedavg(plan) }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(FedError::param(format!("momentum beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.accel == AccelKind::ControlVariate && self.scope == Scope::Local {
            return Err(FedError::Configuration(
                "control-variate correction needs the server variate; use scope=global".into(),
            ));
        }
        Ok(())
    }

    /// True when the server keeps acceleration state (global variate or momentum).
    pub fn needs_server_state(&self) -> bool {
        match self.accel {
            AccelKind::None => false,
            AccelKind::ControlVariate => true,
            AccelKind::Momentum => self.scope == Scope::Global,
        }
    }
}

/// Acceleration buffers carried by a client between steps and rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelState {
    None,
    Momentum { beta: f64, buffer: DenseVector },
    /// `local` is `c_i`; `global` is the client's copy of the server variate `c`.
    ControlVariate { local: DenseVector, global: DenseVector },
}

impl AccelState {
    pub fn initial(kind: AccelKind, dim: usize, beta: f64) -> Self {
        match kind {
            AccelKind::None => AccelState::None,
            AccelKind::Momentum => AccelState::Momentum { beta, buffer: DenseVector::zeros(dim) },
            AccelKind::ControlVariate => {
                AccelState::ControlVariate { local: DenseVector::zeros(dim), global: DenseVector::zeros(dim) }
            }
        }
    }

    pub fn kind(&self) -> AccelKind {
        match self {
            AccelState::None => AccelKind::None,
            AccelState::Momentum { .. } => AccelKind::Momentum,
            AccelState::ControlVariate { .. } => AccelKind::ControlVariate,
        }
    }
}

/// Search direction `𝒱_i` from the stochastic gradient and the acceleration state.
pub fn direction(g: &DenseVector, accel: &AccelState) -> Result<DenseVector> {
    match accel {
        AccelState::None => Ok(g.clone()),
        AccelState::Momentum { beta, buffer } => {
            buffer.ensure_len(g.len(), "momentum buffer")?;
            let mut d = g.clone();
            d.axpy(*beta, buffer);
            Ok(d)
        }
        AccelState::ControlVariate { local, global } => {
            local.ensure_len(g.len(), "local control variate")?;
            global.ensure_len(g.len(), "global control variate")?;
            Ok(g.sub(local).add(global))
        }
    }
}

/// Acceleration update.
///
/// Momentum: `buffer ← β·buffer + g_i`, applied after every local step.
/// Control variate: `c_i ← c_i − c + (x_global − x_i)/(T·η)`, applied once at the end of
/// the round.
pub fn accel_update(
    accel: &AccelState,
    x_i: &DenseVector,
    g_i: &DenseVector,
    plan: &LocalStepPlan,
    x_global: &DenseVector,
) -> Result<AccelState> {
    Ok(match accel {
        AccelState::None => AccelState::None,
        AccelState::Momentum { beta, buffer } => {
            let mut b = buffer.scaled(*beta);
            b.axpy(1.0, g_i);
            AccelState::Momentum { beta: *beta, buffer: b }
        }
        AccelState::ControlVariate { local, global } => {
            let te = plan.steps as f64 * plan.eta;
            if te == 0.0 {
                return Err(FedError::param("control-variate update divides by T·η = 0"));
            }
            let mut c = local.sub(global);
            c.axpy(1.0 / te, &x_global.sub(x_i));
            AccelState::ControlVariate { local: c, global: global.clone() }
        }
    })
}

/// One mirror-descent step `∇(h + ηΨ)*(∇h(w) − η·grad)`.
///
/// With the squared-euclidean generator this is `prox_{ηΨ}(w − η·grad)`.
pub fn mirror_step(w: &DenseVector, grad: &DenseVector, eta: f64, reg: &RegSpec) -> Result<DenseVector> {
    mirror_step_with(w, grad, eta, reg, BregmanGenerator::SquaredEuclidean)
}

/// [`mirror_step`] for an explicit generator. The negative-entropy generator supports
/// only the unregularized multiplicative update `w·exp(−η·grad)`.
pub fn mirror_step_with(
    w: &DenseVector,
    grad: &DenseVector,
    eta: f64,
    reg: &RegSpec,
    h: BregmanGenerator,
) -> Result<DenseVector> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(FedError::param(format!("mirror step size must be positive, got {eta}")));
    }
    grad.ensure_len(w.len(), "gradient")?;
    let active = reg.kind != RegKind::None && reg.weight > 0.0;
    match (h, reg.kind) {
        (BregmanGenerator::SquaredEuclidean, _) if !active => Ok(w.zip_with(grad, |a, b| a - eta * b)),
        (BregmanGenerator::SquaredEuclidean, RegKind::L1) => {
            soft_threshold_l1(&w.zip_with(grad, |a, b| a - eta * b), eta * reg.weight)
        }
        (BregmanGenerator::SquaredEuclidean, RegKind::TraceSquare) => {
            let shrink = 1.0 / (1.0 + eta * reg.weight);
            Ok(w.zip_with(grad, |a, b| shrink * (a - eta * b)))
        }
        (BregmanGenerator::NegativeEntropy, _) if !active => {
            if w.iter().any(|&x| x <= 0.0) {
                return Err(FedError::Domain("entropic mirror step needs strictly positive iterates".into()));
            }
            Ok(w.zip_with(grad, |a, b| a * (-eta * b).exp()))
        }
        (h, kind) => Err(FedError::Configuration(format!(
            "no mirror map for generator {h:?} with regularizer {kind:?}"
        ))),
    }
}

/// Minibatches drawn without replacement, reshuffled at every epoch boundary.
struct Batches {
    n: usize,
    batch: usize,
    perm: Vec<usize>,
    cursor: usize,
}

impl Batches {
    fn new(n: usize, batch: Option<usize>) -> Self {
        let batch = batch.unwrap_or(n).min(n);
        Self { n, batch, perm: Vec::new(), cursor: n }
    }

    fn full(&self) -> bool {
        self.batch >= self.n
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.cursor + self.batch > self.perm.len() {
            self.perm = (0..self.n).collect();
            self.perm.shuffle(rng);
            self.cursor = 0;
        }
        let out = &self.perm[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

/// `T` local steps from `broadcast`; returns the new local model and acceleration state.
pub fn local_epochs(
    instance: &ProblemInstance,
    client: usize,
    broadcast: &DenseVector,
    accel: AccelState,
    plan: &LocalStepPlan,
    rng: &mut ChaCha8Rng,
) -> Result<(DenseVector, AccelState)> {
    plan.validate()?;
    let data = &instance.client(client)?.data;
    let n = match data {
        ClientData::Regression { labels, .. } => labels.len(),
        _ => return Err(FedError::State("first-order local training needs regression data".into())),
    };
    if n == 0 {
        return Err(FedError::State(format!("client {client} has an empty dataset")));
    }
    broadcast.ensure_len(instance.dims.dim, "broadcast model")?;
    let reg = local_regularizer(instance);
    let mut batches = Batches::new(n, plan.batch);
    let mut x = broadcast.clone();
    let mut state = accel;
    let mut last_g = DenseVector::zeros(x.len());
    for _ in 0..plan.steps {
        let g = if batches.full() {
            instance.local_gradient(client, &crate::problems::Model::Vector(x.clone()))?.as_vector()?.clone()
        } else {
            let rows = batches.next(rng).to_vec();
            data.regression_gradient_rows(&x, &rows)?
        };
        let d = direction(&g, &state)?;
        x = mirror_step(&x, &d, plan.eta, &reg)?;
        if matches!(state, AccelState::Momentum { .. }) {
            state = accel_update(&state, &x, &g, plan, broadcast)?;
        }
        last_g = g;
    }
    if matches!(state, AccelState::ControlVariate { .. }) {
        state = accel_update(&state, &x, &last_g, plan, broadcast)?;
    }
    if !x.is_finite() {
        return Err(FedError::NonFinite("local_epochs"));
    }
    Ok((x, state))
}

/// The regularizer handled inside the local mirror step.
pub(crate) fn local_regularizer(instance: &ProblemInstance) -> RegSpec {
    instance
        .regularizers
        .iter()
        .copied()
        .find(|r| r.kind != RegKind::None && r.weight > 0.0)
        .unwrap_or_else(RegSpec::none)
}

/// What a sampled client returns to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReturn {
    pub model: DenseVector,
    /// `c_i_new − c_i_old` for the control-variate instantiation.
    pub variate_delta: Option<DenseVector>,
}

/// Server side of the global-acceleration round:
/// `x ← weighted_average(x_i)`, `c ← c + (|S|/N)·mean(c_i_new − c_i_old)`.
pub fn global_round_accel(
    variate: Option<&DenseVector>,
    received: &[ClientReturn],
    weights: &[f64],
    total_clients: usize,
) -> Result<(DenseVector, Option<DenseVector>)> {
    if received.is_empty() {
        return Err(FedError::State("no client returned an update this round".into()));
    }
    let models: Vec<DenseVector> = received.iter().map(|r| r.model.clone()).collect();
    let x = weighted_average(&models, weights).map_err(|e| match e {
        FedError::Dimension(m) => FedError::State(m),
        other => other,
    })?;
    let c = match variate {
        None => None,
        Some(c) => {
            let mut acc = DenseVector::zeros(c.len());
            for r in received {
                let d = r
                    .variate_delta
                    .as_ref()
                    .ok_or_else(|| FedError::State("control-variate round without variate deltas".into()))?;
                if d.len() != c.len() {
                    return Err(FedError::State("control variate delta has the wrong length".into()));
                }
                acc.axpy(1.0, d);
            }
            let s = received.len() as f64;
            let mut out = c.clone();
            out.axpy(s / total_clients as f64 / s, &acc);
            Some(out)
        }
    };
    Ok((x, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn direction_cases() {
        let g = v(&[1.0, -2.0]);
        assert_eq!(direction(&g, &AccelState::None).unwrap(), g);
        assert_eq!(direction(&g, &AccelState::initial(AccelKind::Momentum, 2, 0.9)).unwrap(), g);
        let cv = AccelState::ControlVariate { local: v(&[0.3, 0.4]), global: v(&[0.3, 0.4]) };
        assert_eq!(direction(&g, &cv).unwrap(), g);
        let bad = AccelState::Momentum { beta: 0.5, buffer: v(&[1.0]) };
        assert!(direction(&g, &bad).is_err());
    }

    #[test]
    fn momentum_with_zero_beta_stores_gradient() {
        let plan = LocalStepPlan::new(1, 0.1, None).unwrap();
        let s = AccelState::Momentum { beta: 0.0, buffer: v(&[5.0, 5.0]) };
        let g = v(&[1.0, 2.0]);
        let out = accel_update(&s, &g, &g, &plan, &g).unwrap();
        assert_eq!(out, AccelState::Momentum { beta: 0.0, buffer: g });
    }

    #[test]
    fn control_variate_hand_trace() {
        let plan = LocalStepPlan::new(3, 0.1, None).unwrap();
        let s = AccelState::ControlVariate { local: v(&[0.2, -0.1]), global: v(&[0.1, 0.1]) };
        let out = accel_update(&s, &v(&[0.7, 1.3]), &v(&[0.0, 0.0]), &plan, &v(&[1.0, 1.0])).unwrap();
        let AccelState::ControlVariate { local, .. } = out else { panic!("kind changed") };
        // c_i − c + (x − x_i)/(Tη) = [0.1, −0.2] + [1, −1]
        assert!(local.sub(&v(&[1.1, -1.2])).norm_inf() < 1e-12);
    }

    #[test]
    fn mirror_step_examples() {
        let w = v(&[2.0, 0.1]);
        let zero = v(&[0.0, 0.0]);
        let l1 = RegSpec::new(RegKind::L1, 0.5).unwrap();
        assert_eq!(mirror_step(&w, &zero, 1.0, &l1).unwrap().as_slice(), &[1.5, 0.0]);
        let g = v(&[1.0, -1.0]);
        assert_eq!(mirror_step(&w, &g, 0.5, &RegSpec::none()).unwrap().as_slice(), &[1.5, 0.6]);
        let nuclear = RegSpec::new(RegKind::Nuclear, 1.0).unwrap();
        assert!(matches!(mirror_step(&w, &g, 0.5, &nuclear), Err(FedError::Configuration(_))));
        let entropic = mirror_step_with(&w, &zero, 0.5, &RegSpec::none(), BregmanGenerator::NegativeEntropy);
        assert_eq!(entropic.unwrap(), w);
    }

    #[test]
    fn partial_participation_moves_variate_by_fraction() {
        let c = v(&[0.0]);
        let r = |x: f64, d: f64| ClientReturn { model: v(&[x]), variate_delta: Some(v(&[d])) };
        let (x, c2) = global_round_accel(Some(&c), &[r(1.0, 2.0), r(3.0, 4.0)], &[1.0, 1.0], 4).unwrap();
        assert_eq!(x.as_slice(), &[2.0]);
        // (|S|/N) · mean = (2/4) · 3
        assert_eq!(c2.unwrap().as_slice(), &[1.5]);
    }
}
