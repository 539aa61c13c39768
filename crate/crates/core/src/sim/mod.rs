//! Round-based simulation: topologies, sampling, aggregation, metrics and the engine.

pub mod aggregate;
pub mod engine;
pub mod metrics;
pub mod rng;
pub mod topology;

pub use aggregate::{gossip_mix, sample_clients, tree_aggregate, weighted_average, Parameters};
pub use engine::{
    check_compatibility, run_experiment, Adversary, AlgorithmSpec, ClientState, Execution, Family, RunOutput, Simulation,
    DIVERGENCE_THRESHOLD,
};
pub use metrics::{format_real, to_csv, RoundMetrics, CSV_HEADER};
pub use rng::Rng;
pub use topology::{ClusteredTopology, GossipTopology, HubPattern, Topology, TreeTopology};
