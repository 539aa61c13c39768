use fedlab_core::numkit::{
    bregman_distance, nuclear_norm, row_group_shrink, soft_threshold_l1, spectral_norm, svd, svt, BregmanGenerator,
    DenseMatrix, DenseVector,
};
use fedlab_core::sim::rng::standard_normal;
use fedlab_core::sim::Rng;
use proptest::prelude::*;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut s = Rng::new(seed).stream("test-matrix", 0, 0);
    DenseMatrix::from_fn(rows, cols, |_, _| standard_normal(&mut s))
}

fn prox_objective(y: &DenseMatrix, a: &DenseMatrix, tau: f64) -> f64 {
    0.5 * y.sub(a).frobenius_norm().powi(2) + tau * nuclear_norm(y).unwrap()
}

#[test]
fn svt_satisfies_the_nuclear_subgradient_condition() {
    // G ∈ ∂‖Y‖_* iff ‖G‖₂ ≤ 1 and ⟨G, Y⟩ = ‖Y‖_*
    let a = gaussian(5, 5, 1);
    let tau = 0.7;
    let y = svt(&a, tau).unwrap();
    let g = a.sub(&y).scaled(1.0 / tau);
    assert!(spectral_norm(&g).unwrap() <= 1.0 + 1e-5);
    let ny = nuclear_norm(&y).unwrap();
    assert!((g.inner(&y) - ny).abs() <= 1e-5 * ny.max(1.0));
}

#[test]
fn svt_beats_random_perturbations() {
    let a = gaussian(5, 5, 2);
    let tau = 0.7;
    let y = svt(&a, tau).unwrap();
    let best = prox_objective(&y, &a, tau);
    for k in 0..100 {
        let p = gaussian(5, 5, 100 + k).scaled(1e-3);
        assert!(prox_objective(&y.add(&p), &a, tau) >= best - 1e-12);
    }
}

/// Eigenvalues of a symmetric PSD matrix by power iteration with deflation.
fn deflated_eigenvalues(m: &DenseMatrix, count: usize) -> Vec<f64> {
    let n = m.rows();
    let mut work = m.clone();
    let mut out = Vec::new();
    for _ in 0..count {
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let y = work.matvec(&x);
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if ny == 0.0 {
                break;
            }
            lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            x = y.into_iter().map(|v| v / ny).collect();
        }
        out.push(lambda);
        let mut outer = DenseMatrix::from_fn(n, n, |i, j| x[i] * x[j]);
        outer = outer.scaled(lambda);
        work = work.sub(&outer);
    }
    out
}

#[test]
fn singular_values_match_gram_eigenvalues() {
    let a = gaussian(6, 4, 3);
    let s = svd(&a).unwrap();
    let eig = deflated_eigenvalues(&a.gram(), 4);
    for (sigma, lambda) in s.sigma.iter().zip(&eig) {
        assert!((sigma - lambda.max(0.0).sqrt()).abs() < 1e-7, "{sigma} vs {}", lambda.sqrt());
    }
}

#[test]
fn svd_reconstructs_with_orthonormal_factors() {
    for (r, c, seed) in [(6, 4, 4), (4, 6, 5), (7, 7, 6)] {
        let a = gaussian(r, c, seed);
        let s = svd(&a).unwrap();
        assert!(s.reconstruct().sub(&a).frobenius_norm() < 1e-10 * a.frobenius_norm());
        let k = s.sigma.len();
        for f in [&s.u, &s.v] {
            let g = f.gram();
            let e = g.sub(&DenseMatrix::identity(k)).frobenius_norm();
            assert!(e < 1e-10, "{r}x{c}: {e}");
        }
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn squared_euclidean_bregman_is_half_squared_distance() {
    let x = DenseVector::new(vec![1.0, 2.0]).unwrap();
    let y = DenseVector::new(vec![-1.0, 0.5]).unwrap();
    let d = bregman_distance(&x, &y, BregmanGenerator::SquaredEuclidean).unwrap();
    assert!((d - 0.5 * (4.0 + 2.25)).abs() < 1e-15);
    // KL(x‖y) for unnormalized positive vectors
    let kl = bregman_distance(&x, &DenseVector::new(vec![2.0, 1.0]).unwrap(), BregmanGenerator::NegativeEntropy).unwrap();
    let expect = 1.0 * (0.5f64).ln() - 1.0 + 2.0 + 2.0 * 2.0f64.ln() - 2.0 + 1.0;
    assert!((kl - expect).abs() < 1e-14);
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn soft_threshold_is_nonexpansive(a in vec_strategy(8), b in vec_strategy(8), tau in 0.0f64..5.0) {
        let (a, b) = (DenseVector::new(a).unwrap(), DenseVector::new(b).unwrap());
        let pa = soft_threshold_l1(&a, tau).unwrap();
        let pb = soft_threshold_l1(&b, tau).unwrap();
        prop_assert!(pa.sub(&pb).norm2() <= a.sub(&b).norm2() + 1e-12);
    }

    #[test]
    fn row_shrink_never_grows_rows(data in vec_strategy(12), tau in 0.0f64..5.0) {
        let u = DenseMatrix::new(4, 3, data).unwrap();
        let s = row_group_shrink(&u, tau).unwrap();
        for i in 0..4 {
            let before = u.row_vector(i).norm2();
            let after = s.row_vector(i).norm2();
            prop_assert!(after <= before + 1e-12);
            prop_assert!((after - (before - tau).max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn svt_is_nonexpansive(a in vec_strategy(9), b in vec_strategy(9), tau in 0.0f64..3.0) {
        let a = DenseMatrix::new(3, 3, a).unwrap();
        let b = DenseMatrix::new(3, 3, b).unwrap();
        let d = svt(&a, tau).unwrap().sub(&svt(&b, tau).unwrap()).frobenius_norm();
        prop_assert!(d <= a.sub(&b).frobenius_norm() + 1e-8);
    }
}
