use fedlab_core::admm::{AdmmSpec, AdmmVariant};
use fedlab_core::first_order::{FirstOrderSpec, LocalStepPlan};
use fedlab_core::numkit::{DenseMatrix, DenseVector};
use fedlab_core::problems::{gen_lrme, gen_quadratic, LrmeParams, QuadraticParams};
use fedlab_core::sim::{
    gossip_mix, sample_clients, to_csv, tree_aggregate, weighted_average, AlgorithmSpec, Execution, Family,
    GossipTopology, Rng, Simulation, Topology, TreeTopology, CSV_HEADER,
};
use proptest::prelude::*;

fn vectors(data: &[f64], n: usize) -> Vec<DenseVector> {
    data.chunks(data.len() / n).take(n).map(|c| DenseVector::new(c.to_vec()).unwrap()).collect()
}

fn mean(vs: &[DenseVector]) -> DenseVector {
    weighted_average(vs, &vec![1.0; vs.len()]).unwrap()
}

#[test]
fn ring_of_four_mixes_at_one_third() {
    let g = GossipTopology::ring(4).unwrap();
    let w = g.mixing();
    for i in 0..4 {
        assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g.degree(i), 2);
    }
    // independent power iteration on W − 11ᵀ/4
    let j = DenseMatrix::from_fn(4, 4, |_, _| 0.25);
    let m = w.sub(&j);
    let mut x = vec![1.0, 0.3, -0.7, 0.2];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let y = m.matvec(&m.matvec(&x));
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        lambda = n.sqrt() / x.iter().map(|v| v * v).sum::<f64>().sqrt().sqrt();
        x = y.into_iter().map(|v| v / n).collect();
    }
    assert!((lambda - 1.0 / 3.0).abs() < 1e-9, "{lambda}");
    assert!((g.mixing_rate().unwrap() - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn data_size_weights_match_hand_sum() {
    let vs = vec![DenseVector::new(vec![1.0, 0.0]).unwrap(), DenseVector::new(vec![5.0, 4.0]).unwrap()];
    let avg = weighted_average(&vs, &[10.0, 30.0]).unwrap();
    assert_eq!(avg.as_slice(), &[4.0, 3.0]);
    assert!(weighted_average(&vs, &[0.0, 0.0]).is_err());
    assert!(weighted_average(&vs, &[1.0]).is_err());
}

#[test]
fn sampling_is_sorted_sized_and_seeded() {
    let rng = Rng::new(42);
    let s = sample_clients(10, 0.3, &rng, 1).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s, sample_clients(10, 0.3, &rng, 1).unwrap());
    assert_eq!(sample_clients(10, 1.0, &rng, 1).unwrap(), (0..10).collect::<Vec<_>>());
    assert_eq!(sample_clients(10, 0.01, &rng, 1).unwrap().len(), 1);
    assert!(sample_clients(10, 0.0, &rng, 1).is_err());
    assert!(sample_clients(10, 1.5, &rng, 1).is_err());
    let rounds: Vec<_> = (0..20).map(|r| sample_clients(10, 0.3, &rng, r).unwrap()).collect();
    assert!(rounds.iter().any(|r| *r != rounds[0]));
}

fn quadratic() -> fedlab_core::problems::ProblemInstance {
    gen_quadratic(&QuadraticParams { clients: 6, dim: 4, samples_per_client: 10, heterogeneity: 0.5, noise_sigma: 0.0, seed: 1 })
        .unwrap()
}

fn fedavg() -> AlgorithmSpec {
    AlgorithmSpec::new(Family::FirstOrder(FirstOrderSpec::fedavg(LocalStepPlan::new(2, 0.02, None).unwrap())))
}

#[test]
fn zero_rounds_leave_an_empty_ledger() {
    let inst = quadratic();
    let mut sim = Simulation::new(&inst, &fedavg(), &Topology::Star, &Rng::new(0)).unwrap();
    sim.run(0).unwrap();
    assert!(sim.metrics().is_empty());
    assert_eq!(to_csv(sim.metrics()), format!("{CSV_HEADER}\n"));
    assert_eq!(sim.model(), inst.zero_model());
}

#[test]
fn unsampled_clients_keep_their_state() {
    let inst = gen_lrme(&LrmeParams { clients: 6, dim: 5, rank: 1, measurements_per_client: 30, noise_sigma: 0.0, reg_weight: 0.1, seed: 2 })
        .unwrap();
    let spec = AlgorithmSpec::new(Family::Admm(AdmmSpec::with_defaults(AdmmVariant::Lrme))).with_participation(0.5);
    let mut sim = Simulation::new(&inst, &spec, &Topology::Star, &Rng::new(3)).unwrap();
    for _ in 0..6 {
        let before = sim.clients().to_vec();
        let sampled = sim.step().unwrap().sampled.clone();
        assert_eq!(sampled.len(), 3);
        for (old, new) in before.iter().zip(sim.clients()) {
            if sampled.contains(&old.id) {
                assert_ne!(old.model, new.model);
            } else {
                assert_eq!(old, new);
            }
        }
    }
}

#[test]
fn tree_and_star_runs_coincide() {
    let inst = quadratic();
    let tree = Topology::Tree(TreeTopology::balanced(6, 2).unwrap());
    let mut star = Simulation::new(&inst, &fedavg(), &Topology::Star, &Rng::new(0)).unwrap();
    let mut hier = Simulation::new(&inst, &fedavg(), &tree, &Rng::new(0)).unwrap();
    star.run(10).unwrap();
    hier.run(10).unwrap();
    let d = star.model().distance(&hier.model()).unwrap();
    assert!(d < 1e-12, "{d}");
}

#[test]
fn gossip_run_reaches_near_consensus() {
    let inst = quadratic();
    let gossip = Topology::Gossip(GossipTopology::ring(6).unwrap());
    let mut sim = Simulation::new(&inst, &fedavg(), &gossip, &Rng::new(0)).unwrap();
    sim.run(200).unwrap();
    let last = sim.metrics().last().unwrap();
    let first = &sim.metrics()[0];
    assert!(last.objective < first.objective);
    let oracle = inst.oracle.as_ref().unwrap().objective;
    assert!(last.objective - oracle < 1e-2 * (1.0 + oracle.abs()), "{} vs {oracle}", last.objective);
}

#[test]
fn execution_order_does_not_change_results() {
    let inst = quadratic();
    let mut ledgers = Vec::new();
    for e in [Execution::Serial, Execution::Shuffled, Execution::Parallel] {
        let spec = fedavg().with_participation(0.5).with_execution(e);
        let mut sim = Simulation::new(&inst, &spec, &Topology::Star, &Rng::new(7)).unwrap();
        sim.run(15).unwrap();
        ledgers.push(to_csv(sim.metrics()));
    }
    assert_eq!(ledgers[0], ledgers[1]);
    assert_eq!(ledgers[0], ledgers[2]);
}

#[test]
fn rng_streams_are_independent_and_reproducible() {
    use rand::Rng as _;
    let rng = Rng::new(9);
    let a: u64 = rng.stream("x", 1, 2).random();
    assert_eq!(a, rng.stream("x", 1, 2).random::<u64>());
    assert_ne!(a, rng.stream("x", 1, 3).random::<u64>());
    assert_ne!(a, rng.stream("x", 2, 2).random::<u64>());
    assert_ne!(a, rng.stream("y", 1, 2).random::<u64>());
    assert_ne!(a, Rng::new(10).stream("x", 1, 2).random::<u64>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gossip_preserves_the_mean(n in 3usize..9, data in prop::collection::vec(-5.0f64..5.0, 72)) {
        let g = GossipTopology::ring(n).unwrap();
        let vs = vectors(&data[..n * 3], n);
        let mixed = gossip_mix(&vs, g.mixing()).unwrap();
        let d = mean(&mixed).sub(&mean(&vs)).norm_inf();
        prop_assert!(d < 1e-12);
        // and never widens the spread around it
        let spread = |xs: &[DenseVector]| { let m = mean(xs); xs.iter().map(|x| x.sub(&m).norm_sq()).sum::<f64>() };
        prop_assert!(spread(&mixed) <= spread(&vs) + 1e-12);
    }

    #[test]
    fn tree_fold_equals_flat_weighted_mean(
        n in 2usize..12,
        fan in 2usize..4,
        data in prop::collection::vec(-5.0f64..5.0, 24),
        weights in prop::collection::vec(0.1f64..10.0, 12),
    ) {
        let tree = TreeTopology::balanced(n, fan).unwrap();
        let vs = vectors(&data[..n * 2], n);
        let flat = weighted_average(&vs, &weights[..n]).unwrap();
        let folded = tree_aggregate(&vs, &tree, &weights[..n]).unwrap();
        prop_assert!(flat.sub(&folded).norm_inf() < 1e-12);
    }
}
