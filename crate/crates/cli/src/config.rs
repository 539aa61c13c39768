//! Experiment configuration files.
//!
//! One TOML file describes one experiment in five sections:
//!
//! ```toml
//! [problem]
//! kind = "lasso"
//! clients = 10
//! dim = 50
//! samples = 20
//! alpha = 0.05
//!
//! [algorithm]
//! family = "first-order"
//! T = 5
//! eta = 0.01
//!
//! [topology]
//! kind = "star"
//!
//! [shield]
//! compress = "none"
//!
//! [run]
//! rounds = 500
//! seed = 1
//! ```
//!
//! Unknown keys are rejected. Every key except `problem.kind`, `algorithm.family` and
//! `run.rounds` has a default.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fedlab_core::admm::{AdmmParams, AdmmSpec, AdmmVariant};
use fedlab_core::first_order::{AccelKind, FirstOrderSpec, LocalStepPlan, Scope, Weighting};
use fedlab_core::problems::{
    gen_lasso, gen_lrme, gen_mf, gen_mtl, gen_quadratic, LassoParams, LrmeParams, MfParams, MtlParams, Partition,
    ProblemInstance, ProblemKind, QuadraticParams, RegKind, RegSpec, TaskMapping,
};
use fedlab_core::shield::{Compressor, DpSpec, RobustAggSpec, RobustRule, ShieldSpec};
use fedlab_core::sim::{
    check_compatibility, Adversary, AlgorithmSpec, ClusteredTopology, Execution, Family, GossipTopology, HubPattern,
    Topology, TreeTopology,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub shield: ShieldSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Clients (users for `mf`).
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    /// Samples per client (measurements per client for `lrme`).
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    /// Nonzeros of the `lasso` ground truth.
    #[serde(default = "defaults::sparsity")]
    pub sparsity: usize,
    /// `iid` or `dirichlet:<concentration>` (`lasso`).
    #[serde(default = "defaults::partition")]
    pub partition: String,
    /// Feature clusters used by the dirichlet partition.
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    /// Spread of client minimizers (`quadratic`).
    #[serde(default = "defaults::heterogeneity")]
    pub heterogeneity: f64,
    /// Rank of the ground truth (`lrme`, `mf`) or of the shared task structure (`mtl`).
    #[serde(default = "defaults::rank")]
    pub rank: usize,
    #[serde(default = "defaults::tasks")]
    pub tasks: usize,
    /// `identity` or `random` (`mtl`).
    #[serde(default = "defaults::mapping")]
    pub mapping: TaskMapping,
    #[serde(default = "defaults::task_noise")]
    pub task_noise: f64,
    /// `nuclear` or `trace-square` (`mtl`).
    #[serde(default = "defaults::mtl_regularizer")]
    pub regularizer: RegKind,
    #[serde(default = "defaults::items")]
    pub items: usize,
    /// l1 weight (`lasso`) or task-matrix penalty weight (`mtl`).
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Nuclear weight (`lrme`) or l2,1 weight on user factors (`mf`).
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Nuclear weight on item factors (`mf`).
    #[serde(default = "defaults::mu")]
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    /// `first-order` or `admm`.
    pub family: String,
    // first-order
    #[serde(default = "defaults::accel")]
    pub accel: AccelKind,
    #[serde(default = "defaults::scope")]
    pub scope: Scope,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default = "defaults::weighting")]
    pub weighting: Weighting,
    // admm
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<AdmmVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_g: Option<f64>,
    #[serde(rename = "I", default, skip_serializing_if = "Option::is_none")]
    pub server_iters: Option<usize>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub user_iters: Option<usize>,
    // shared
    /// Local steps.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// `star`, `tree`, `gossip` or `clustered`.
    #[serde(default = "defaults::topology")]
    pub kind: String,
    /// Children per node of a balanced tree.
    #[serde(default = "defaults::fan_out")]
    pub fan_out: usize,
    /// `ring` or `complete`.
    #[serde(default = "defaults::graph")]
    pub graph: String,
    #[serde(default = "defaults::clusters")]
    pub clusters: usize,
    #[serde(default = "defaults::pattern")]
    pub pattern: HubPattern,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            kind: defaults::topology(),
            fan_out: defaults::fan_out(),
            graph: defaults::graph(),
            clusters: defaults::clusters(),
            pattern: defaults::pattern(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShieldSection {
    /// `none`, `sign`, `qsgd:<levels>`, `topk:<k>` or `varbudget:<factor>`.
    #[serde(default = "defaults::none")]
    pub compress: String,
    /// `none`, `krum:<f>`, `median` or `tmean:<beta>`.
    #[serde(default = "defaults::none")]
    pub robust: String,
    /// `none`, `laplace:<eps>,<C>` or `gaussian:<eps>,<delta>,<C>`.
    #[serde(default = "defaults::none")]
    pub dp: String,
    /// Number of adversarial clients (the highest ids).
    #[serde(default)]
    pub adversaries: usize,
    #[serde(default = "defaults::adversary_scale")]
    pub adversary_scale: f64,
}

impl Default for ShieldSection {
    fn default() -> Self {
        Self {
            compress: defaults::none(),
            robust: defaults::none(),
            dp: defaults::none(),
            adversaries: 0,
            adversary_scale: defaults::adversary_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    #[serde(default = "defaults::fraction")]
    pub fraction: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub execution: Execution,
    /// Oracle gap that counts as converged in reports.
    #[serde(default = "defaults::tol")]
    pub tol: f64,
}

mod defaults {
    use super::*;

    pub fn clients() -> usize {
        10
    }
    pub fn dim() -> usize {
        20
    }
    pub fn samples() -> usize {
        20
    }
    pub fn noise() -> f64 {
        0.01
    }
    pub fn sparsity() -> usize {
        5
    }
    pub fn partition() -> String {
        "iid".into()
    }
    pub fn classes() -> usize {
        4
    }
    pub fn heterogeneity() -> f64 {
        1.0
    }
    pub fn rank() -> usize {
        2
    }
    pub fn tasks() -> usize {
        2
    }
    pub fn mapping() -> TaskMapping {
        TaskMapping::Random
    }
    pub fn task_noise() -> f64 {
        0.1
    }
    pub fn mtl_regularizer() -> RegKind {
        RegKind::Nuclear
    }
    pub fn items() -> usize {
        20
    }
    pub fn alpha() -> f64 {
        0.05
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn mu() -> f64 {
        0.01
    }
    pub fn accel() -> AccelKind {
        AccelKind::None
    }
    pub fn scope() -> Scope {
        Scope::Local
    }
    pub fn eta() -> f64 {
        0.01
    }
    pub fn beta() -> f64 {
        0.9
    }
    pub fn weighting() -> Weighting {
        Weighting::Uniform
    }
    pub fn topology() -> String {
        "star".into()
    }
    pub fn fan_out() -> usize {
        3
    }
    pub fn graph() -> String {
        "ring".into()
    }
    pub fn clusters() -> usize {
        2
    }
    pub fn pattern() -> HubPattern {
        HubPattern::HubGossip
    }
    pub fn none() -> String {
        "none".into()
    }
    pub fn adversary_scale() -> f64 {
        100.0
    }
    pub fn fraction() -> f64 {
        1.0
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn tol() -> f64 {
        1e-3
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Splits `name:args` into the name and its comma-separated numeric arguments.
fn parse_tagged(key: &str, text: &str, expected: &str) -> Result<(String, Vec<f64>), CliError> {
    let (name, rest) = match text.split_once(':') {
        Some((n, r)) => (n.trim(), Some(r)),
        None => (text.trim(), None),
    };
    let args = match rest {
        None => Vec::new(),
        Some(r) => r
            .split(',')
            .map(|a| {
                f64::from_str(a.trim())
                    .map_err(|_| config_error(format!("{key}: `{a}` is not a number (expected {expected})")))
            })
            .collect::<Result<_, _>>()?,
    };
    Ok((name.to_string(), args))
}

fn want_args(key: &str, text: &str, args: &[f64], n: usize, expected: &str) -> Result<(), CliError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(config_error(format!("{key}: `{text}` needs {n} argument(s); expected {expected}")))
    }
}

fn as_count(key: &str, v: f64) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(config_error(format!("{key}: `{v}` is not a nonnegative integer")))
    }
}

pub fn parse_compressor(text: &str) -> Result<Compressor, CliError> {
    const EXPECTED: &str = "none | sign | qsgd:<levels> | topk:<k> | varbudget:<factor>";
    let (name, args) = parse_tagged("shield.compress", text, EXPECTED)?;
    let one = |args: &[f64]| want_args("shield.compress", text, args, 1, EXPECTED).map(|_| args[0]);
    Ok(match name.as_str() {
        "none" => Compressor::None,
        "sign" => Compressor::Sign,
        "qsgd" => Compressor::Qsgd { levels: as_count("shield.compress", one(&args)?)? as u32 },
        "topk" => Compressor::Topk { k: as_count("shield.compress", one(&args)?)? },
        "varbudget" => Compressor::VarBudget { factor: one(&args)? },
        _ => return Err(config_error(format!("shield.compress: unknown compressor `{text}`; expected {EXPECTED}"))),
    })
}

pub fn parse_robust(text: &str) -> Result<Option<RobustAggSpec>, CliError> {
    const EXPECTED: &str = "none | krum:<f> | median | tmean:<beta>";
    let (name, args) = parse_tagged("shield.robust", text, EXPECTED)?;
    let rule = match name.as_str() {
        "none" => return Ok(None),
        "krum" => {
            want_args("shield.robust", text, &args, 1, EXPECTED)?;
            RobustRule::Krum { f: as_count("shield.robust", args[0])? }
        }
        "median" => RobustRule::Median,
        "tmean" => {
            want_args("shield.robust", text, &args, 1, EXPECTED)?;
            RobustRule::TrimmedMean { beta: args[0] }
        }
        _ => return Err(config_error(format!("shield.robust: unknown rule `{text}`; expected {EXPECTED}"))),
    };
    Ok(Some(RobustAggSpec::new(rule)?))
}

pub fn parse_dp(text: &str) -> Result<Option<DpSpec>, CliError> {
    const EXPECTED: &str = "none | laplace:<eps>,<C> | gaussian:<eps>,<delta>,<C>";
    let (name, args) = parse_tagged("shield.dp", text, EXPECTED)?;
    Ok(match name.as_str() {
        "none" => None,
        "laplace" => {
            want_args("shield.dp", text, &args, 2, EXPECTED)?;
            Some(DpSpec::laplace(args[0], args[1])?)
        }
        "gaussian" => {
            want_args("shield.dp", text, &args, 3, EXPECTED)?;
            Some(DpSpec::gaussian(args[0], args[1], args[2])?)
        }
        _ => return Err(config_error(format!("shield.dp: unknown mechanism `{text}`; expected {EXPECTED}"))),
    })
}

fn parse_partition(text: &str, classes: usize) -> Result<Partition, CliError> {
    const EXPECTED: &str = "iid | dirichlet:<concentration>";
    let (name, args) = parse_tagged("problem.partition", text, EXPECTED)?;
    match name.as_str() {
        "iid" => Ok(Partition::Iid),
        "dirichlet" => {
            want_args("problem.partition", text, &args, 1, EXPECTED)?;
            Ok(Partition::Dirichlet { alpha: args[0], classes })
        }
        _ => Err(config_error(format!("problem.partition: unknown partition `{text}`; expected {EXPECTED}"))),
    }
}

/// A validated configuration with its generated problem.
pub struct Prepared {
    pub instance: ProblemInstance,
    pub spec: AlgorithmSpec,
    pub topology: Topology,
}

impl ExperimentConfig {
    /// Parses and fully validates a configuration, including cross-compatibility.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.prepare()?;
        Ok(cfg)
    }

    /// Parses the key set without generating the problem.
    pub fn parse_unchecked(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Validates every section, generates the problem with its oracle and checks the
    /// algorithm/problem/topology combination.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let spec = self.algorithm_spec()?;
        let topology = self.topology()?;
        if !(self.run.tol.is_finite() && self.run.tol > 0.0) {
            return Err(config_error(format!("run.tol must be positive, got {}", self.run.tol)));
        }
        let instance = self.build_instance()?;
        check_compatibility(&instance, &spec, &topology)?;
        Ok(Prepared { instance, spec, topology })
    }

    pub fn build_instance(&self) -> Result<ProblemInstance, CliError> {
        let p = &self.problem;
        let seed = self.run.seed;
        Ok(match p.kind {
            ProblemKind::Lasso => gen_lasso(&LassoParams {
                clients: p.clients,
                dim: p.dim,
                samples_per_client: p.samples,
                sparsity: p.sparsity,
                noise_sigma: p.noise,
                reg_weight: p.alpha,
                partition: parse_partition(&p.partition, p.classes)?,
                seed,
            }),
            ProblemKind::Quadratic => gen_quadratic(&QuadraticParams {
                clients: p.clients,
                dim: p.dim,
                samples_per_client: p.samples,
                heterogeneity: p.heterogeneity,
                noise_sigma: p.noise,
                seed,
            }),
            ProblemKind::Lrme => gen_lrme(&LrmeParams {
                clients: p.clients,
                dim: p.dim,
                rank: p.rank,
                measurements_per_client: p.samples,
                noise_sigma: p.noise,
                reg_weight: p.lambda,
                seed,
            }),
            ProblemKind::Mtl => {
                let mut params = MtlParams::new(p.clients, p.tasks, p.dim, p.mapping, seed);
                params.samples_per_client = p.samples;
                params.shared_rank = p.rank;
                params.task_noise = p.task_noise;
                params.noise_sigma = p.noise;
                if !matches!(p.regularizer, RegKind::Nuclear | RegKind::TraceSquare) {
                    return Err(config_error("problem.regularizer must be `nuclear` or `trace-square` for mtl"));
                }
                params.reg = RegSpec::new(p.regularizer, p.alpha)?;
                gen_mtl(&params)
            }
            ProblemKind::Mf => gen_mf(&MfParams {
                users: p.clients,
                items: p.items,
                rank: p.rank,
                noise_sigma: p.noise,
                reg_weight: p.lambda,
                item_reg_weight: p.mu,
                seed,
            }),
        }?)
    }

    pub fn algorithm_spec(&self) -> Result<AlgorithmSpec, CliError> {
        let a = &self.algorithm;
        let family = match a.family.as_str() {
            "first-order" => {
                let admm_only = [
                    ("variant", a.variant.is_some()),
                    ("rho", a.rho.is_some()),
                    ("eta_l", a.eta_l.is_some()),
                    ("eta_g", a.eta_g.is_some()),
                    ("I", a.server_iters.is_some()),
                    ("J", a.user_iters.is_some()),
                ];
                if let Some((key, _)) = admm_only.iter().find(|(_, set)| *set) {
                    return Err(config_error(format!("algorithm.{key} applies to family = \"admm\" only")));
                }
                let plan = LocalStepPlan::new(a.local_steps.unwrap_or(1), a.eta, a.batch)?;
                let spec = FirstOrderSpec { accel: a.accel, scope: a.scope, plan, beta: a.beta, weighting: a.weighting };
                spec.validate()?;
                Family::FirstOrder(spec)
            }
            "admm" => {
                let variant = a
                    .variant
                    .ok_or_else(|| config_error("algorithm.variant is required for family = \"admm\""))?;
                let base = AdmmSpec::with_defaults(variant).params;
                let params = AdmmParams {
                    rho: a.rho.unwrap_or(base.rho),
                    eta_l: a.eta_l.unwrap_or(base.eta_l),
                    eta_g: a.eta_g.or(base.eta_g),
                    local_steps: a.local_steps.unwrap_or(base.local_steps),
                    server_iters: a.server_iters.unwrap_or(base.server_iters),
                    user_iters: a.user_iters.unwrap_or(base.user_iters),
                };
                params.validate()?;
                Family::Admm(AdmmSpec::new(variant, params))
            }
            other => {
                return Err(config_error(format!(
                    "algorithm.family: unknown family `{other}`; expected first-order | admm"
                )))
            }
        };
        let shield = ShieldSpec {
            compress: parse_compressor(&self.shield.compress)?,
            robust: parse_robust(&self.shield.robust)?,
            dp: parse_dp(&self.shield.dp)?,
        };
        let mut spec = AlgorithmSpec::new(family)
            .with_participation(self.run.fraction)
            .with_shield(shield)
            .with_execution(self.run.execution);
        if self.shield.adversaries > 0 {
            spec = spec.with_adversary(Adversary { count: self.shield.adversaries, scale: self.shield.adversary_scale });
        }
        Ok(spec)
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        let t = &self.topology;
        let n = self.problem.clients;
        Ok(match t.kind.as_str() {
            "star" => Topology::Star,
            "tree" => Topology::Tree(TreeTopology::balanced(n, t.fan_out)?),
            "gossip" => Topology::Gossip(match t.graph.as_str() {
                "ring" => GossipTopology::ring(n)?,
                "complete" => GossipTopology::complete(n)?,
                other => {
                    return Err(config_error(format!("topology.graph: unknown graph `{other}`; expected ring | complete")))
                }
            }),
            "clustered" => Topology::Clustered(ClusteredTopology::contiguous(n, t.clusters, t.pattern)?),
            other => {
                return Err(config_error(format!(
                    "topology.kind: unknown topology `{other}`; expected star | tree | gossip | clustered"
                )))
            }
        })
    }
}
