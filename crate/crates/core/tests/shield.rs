use fedlab_core::numkit::DenseVector;
use fedlab_core::shield::{
    clip_l1, clip_l2, coordinate_median, dense_bytes, dp_perturb, keep_probabilities, krum_select, quantized_bytes,
    sign_bytes, sign_quantize, sparse_bytes, stochastic_quantize, topk_sparsify, trimmed_mean, variance_budget_sparsify,
    Compressor, DpSpec, PayloadKind, RobustAggSpec, RobustRule,
};
use fedlab_core::sim::Rng;
use proptest::prelude::*;

fn v(x: &[f64]) -> DenseVector {
    DenseVector::new(x.to_vec()).unwrap()
}

#[test]
fn quantizer_is_unbiased_with_bounded_variance() {
    let g = v(&[0.7, -1.3, 0.05, 2.2, -0.4]);
    let (s, draws) = (2u32, 40_000);
    let mut rng = Rng::new(1).stream("qsgd", 0, 0);
    let mut sum = DenseVector::zeros(5);
    let mut err = 0.0;
    for _ in 0..draws {
        let q = stochastic_quantize(&g, s, &mut rng).unwrap().decompress();
        err += q.sub(&g).norm_sq();
        sum.axpy(1.0, &q);
    }
    let mean = sum.scaled(1.0 / draws as f64);
    assert!(mean.sub(&g).norm_inf() < 0.02 * g.norm2(), "{mean:?}");
    let d = 5.0f64;
    let bound = (d / (s * s) as f64).min(d.sqrt() / s as f64) * g.norm_sq();
    assert!(err / draws as f64 <= bound);
}

#[test]
fn keep_probabilities_meet_the_budget_exactly() {
    let g = v(&[3.0, 4.0]);
    let p = keep_probabilities(&g, 49.0).unwrap();
    assert!((p[0] - 3.0 / 7.0).abs() < 1e-12 && (p[1] - 4.0 / 7.0).abs() < 1e-12, "{p:?}");
    let budget: f64 = g.iter().zip(&p).map(|(x, q)| x * x / q).sum();
    assert!((budget - 49.0).abs() < 1e-9);
    // a loose budget saturates the large coordinate
    let p = keep_probabilities(&v(&[1.0, 10.0]), 101.0 + 9.0).unwrap();
    assert_eq!(p[1], 1.0);
    assert!((1.0 / p[0] + 100.0 - 110.0).abs() < 1e-9);
}

#[test]
fn variance_budget_sparsifier_is_unbiased_and_spends_its_budget() {
    let g = v(&[3.0, 4.0, -0.5, 0.0, 1.0]);
    let eps = 2.0 * g.norm_sq();
    let draws = 40_000;
    let mut rng = Rng::new(2).stream("sparse", 0, 0);
    let mut sum = DenseVector::zeros(5);
    let mut second = 0.0;
    for _ in 0..draws {
        let q = variance_budget_sparsify(&g, eps, &mut rng).unwrap();
        assert_eq!(q.kind(), PayloadKind::RandomSparse);
        let q = q.decompress();
        second += q.norm_sq();
        sum.axpy(1.0, &q);
    }
    let mean = sum.scaled(1.0 / draws as f64);
    assert!(mean.sub(&g).norm_inf() < 0.03 * g.norm2(), "{mean:?}");
    assert!((second / draws as f64 / eps - 1.0).abs() < 0.03);
}

#[test]
fn krum_matches_brute_force_scores() {
    let vs: Vec<DenseVector> = [0.0, 0.1, 0.2, 5.0, -5.0].iter().map(|&x| v(&[x])).collect();
    let f = 1;
    let keep = vs.len() - f - 2;
    let scores: Vec<f64> = (0..vs.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..vs.len()).filter(|&j| j != i).map(|j| (vs[i][0] - vs[j][0]).powi(2)).collect();
            d.sort_by(f64::total_cmp);
            d[..keep].iter().sum()
        })
        .collect();
    let best = (0..vs.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    assert_eq!(best, 1);
    assert_eq!(krum_select(&vs, f).unwrap(), best);
    assert!(krum_select(&vs, 3).is_err());
}

#[test]
fn gaussian_and_laplace_noise_have_the_calibrated_spread() {
    let n = 200_000;
    let zero = DenseVector::zeros(n);
    let gauss = DpSpec::gaussian(1.0, 1e-5, 1.0).unwrap();
    let mut rng = Rng::new(3).stream("dp", 0, 0);
    let out = dp_perturb(&zero, &gauss, &mut rng).unwrap();
    let sigma = (out.norm_sq() / n as f64).sqrt();
    let expect = (2.0 * (1.25e5f64).ln()).sqrt();
    assert!((sigma / expect - 1.0).abs() < 0.02, "{sigma} vs {expect}");

    let lap = DpSpec::laplace(2.0, 1.0).unwrap();
    let out = dp_perturb(&zero, &lap, &mut rng).unwrap();
    // Laplace(b) has variance 2b², b = C/ε
    let var = out.norm_sq() / n as f64;
    assert!((var / (2.0 * 0.25) - 1.0).abs() < 0.03, "{var}");
}

#[test]
fn privacy_noise_is_seeded() {
    let u = v(&[1.0, -2.0, 0.5]);
    let spec = DpSpec::gaussian(0.5, 1e-5, 1.0).unwrap();
    let a = dp_perturb(&u, &spec, &mut Rng::new(4).stream("dp", 1, 2)).unwrap();
    let b = dp_perturb(&u, &spec, &mut Rng::new(4).stream("dp", 1, 2)).unwrap();
    let c = dp_perturb(&u, &spec, &mut Rng::new(4).stream("dp", 1, 3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn payload_sizes() {
    assert_eq!(dense_bytes(10), 80);
    assert_eq!(sign_bytes(10), 2 + 8);
    assert_eq!(sign_bytes(64), 8 + 8);
    // 16 coordinates × (1 sign + 3 magnitude bits) = 8 bytes, plus the norm
    assert_eq!(quantized_bytes(16, 4), 16);
    assert_eq!(quantized_bytes(16, 1), 4 + 8);
    assert_eq!(sparse_bytes(3), 36);
    let g = v(&[1.0, -3.0, 2.0, 0.5]);
    assert_eq!(topk_sparsify(&g, 2).unwrap().bytes(), 24);
    assert_eq!(sign_quantize(&g).unwrap().bytes(), 9);
    let mut rng = Rng::new(0).stream("c", 0, 0);
    assert_eq!(Compressor::None.apply(&g, &mut rng).unwrap().bytes(), 32);
    assert_eq!(Compressor::Qsgd { levels: 4 }.apply(&g, &mut rng).unwrap().bytes(), quantized_bytes(4, 4));
}

#[test]
fn sign_compression_keeps_the_mean_magnitude() {
    let g = v(&[1.0, -3.0, 2.0, 0.0]);
    let s = sign_quantize(&g).unwrap().decompress();
    assert_eq!(s.as_slice(), &[1.5, -1.5, 1.5, 1.5]);
    assert!((s.norm1() - g.norm1()).abs() < 1e-15);
}

#[test]
fn compressor_validation() {
    assert!(Compressor::Topk { k: 0 }.validate(4).is_err());
    assert!(Compressor::Topk { k: 5 }.validate(4).is_err());
    assert!(Compressor::Qsgd { levels: 0 }.validate(4).is_err());
    assert!(Compressor::VarBudget { factor: 0.5 }.validate(4).is_err());
    assert!(Compressor::VarBudget { factor: 1.5 }.validate(4).is_ok());
    assert!(RobustAggSpec::new(RobustRule::TrimmedMean { beta: 0.5 }).is_err());
    assert!(RobustAggSpec::new(RobustRule::Krum { f: 2 }).unwrap().validate_for(4).is_err());
}

fn vecs(data: &[f64], n: usize, d: usize) -> Vec<DenseVector> {
    (0..n).map(|i| v(&data[i * d..(i + 1) * d])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn untrimmed_mean_is_the_mean(n in 1usize..10, data in prop::collection::vec(-100.0f64..100.0, 30)) {
        let vs = vecs(&data, n, 3);
        let t = trimmed_mean(&vs, 0.0).unwrap();
        for j in 0..3 {
            let m = vs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            prop_assert!((t[j] - m).abs() < 1e-9);
        }
    }

    #[test]
    fn median_resists_a_minority_of_outliers(
        honest in prop::collection::vec(-1.0f64..1.0, 14),
        bad in prop::collection::vec(-1e6f64..1e6, 6),
        f in 0usize..3,
    ) {
        // 7 honest 2-d vectors, f ≤ 3 arbitrary ones
        let mut vs = vecs(&honest, 7, 2);
        vs.extend(vecs(&bad, 3, 2).into_iter().take(f));
        let m = coordinate_median(&vs).unwrap();
        let t = trimmed_mean(&vs, 0.3).unwrap();
        for j in 0..2 {
            let lo = (0..7).map(|i| honest[2 * i + j]).fold(f64::INFINITY, f64::min);
            let hi = (0..7).map(|i| honest[2 * i + j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m[j] >= lo - 1e-12 && m[j] <= hi + 1e-12);
            prop_assert!(t[j] >= lo - 1e-12 && t[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn keep_probabilities_are_feasible(
        g in prop::collection::vec(-10.0f64..10.0, 1..12),
        factor in 1.0f64..20.0,
    ) {
        let g = v(&g);
        prop_assume!(g.norm_sq() > 1e-6);
        let eps = factor * g.norm_sq();
        let p = keep_probabilities(&g, eps).unwrap();
        prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
        let spent: f64 = g.iter().zip(&p).filter(|(x, _)| **x != 0.0).map(|(x, q)| x * x / q).sum();
        // never above budget; equal unless every coordinate is kept
        prop_assert!(spent <= eps * (1.0 + 1e-9));
        if p.iter().zip(g.iter()).any(|(q, x)| *x != 0.0 && *q < 1.0) {
            prop_assert!((spent / eps - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clipping_bounds_the_norm(x in prop::collection::vec(-10.0f64..10.0, 1..8), c in 0.1f64..5.0) {
        let x = v(&x);
        prop_assert!(clip_l2(&x, c).norm2() <= c * (1.0 + 1e-12));
        prop_assert!(clip_l1(&x, c).norm1() <= c * (1.0 + 1e-12));
    }
}
