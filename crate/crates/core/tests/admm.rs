use fedlab_core::admm::{
    lfedadmm_local_x, lfedadmm_server_z, mf_gv_gradient, mf_gv_value, mf_server_v, mf_user_update, mtl_g_gradient,
    mtl_g_value, mtl_local_x, mtl_server_z, multiplier_update, AdmmParams, AdmmSpec, AdmmVariant, MtlServerCase,
};
use fedlab_core::numkit::{nuclear_norm, svt, DenseMatrix, DenseVector};
use fedlab_core::problems::{
    gen_lrme, gen_mf, gen_mtl, LrmeParams, MfParams, Model, MtlParams, ProblemInstance, RegKind, RegSpec, TaskMapping,
};
use fedlab_core::sim::rng::standard_normal;
use fedlab_core::sim::{AlgorithmSpec, Family, Rng, Simulation, Topology};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut s = Rng::new(seed).stream("admm-test", 0, 0);
    DenseMatrix::from_fn(rows, cols, |_, _| standard_normal(&mut s))
}

fn gvec(len: usize, seed: u64) -> DenseVector {
    gaussian(len, 1, seed).to_vector()
}

#[test]
fn linearized_local_step_is_the_argmin_of_its_model() {
    let (x, z, pi, g) = (gaussian(4, 4, 1), gaussian(4, 4, 2), gaussian(4, 4, 3), gaussian(4, 4, 4));
    let p = AdmmParams { rho: 1.5, eta_l: 0.2, ..AdmmParams::default() };
    let closed = lfedadmm_local_x(&x, &z, &pi, &g, &p).unwrap();
    // gradient descent on ⟨G, Y⟩ + ⟨π, Y − Z⟩ + (ρ/2)‖Y − Z‖² + ‖Y − X‖²/(2η)
    let mut y = DenseMatrix::zeros(4, 4);
    let step = 1.0 / (p.rho + 1.0 / p.eta_l);
    for _ in 0..2000 {
        let grad = DenseMatrix::from_fn(4, 4, |r, c| {
            g[(r, c)] + pi[(r, c)] + p.rho * (y[(r, c)] - z[(r, c)]) + (y[(r, c)] - x[(r, c)]) / p.eta_l
        });
        y = y.sub(&grad.scaled(0.5 * step));
    }
    assert!(closed.sub(&y).frobenius_norm() < 1e-8);
}

#[test]
fn server_step_minimizes_the_nuclear_subproblem() {
    let n = 3;
    let p = AdmmParams { rho: 1.0, server_iters: 200, ..AdmmParams::default() };
    let lambda = 0.8;
    let xs: Vec<DenseMatrix> = (0..n).map(|i| gaussian(4, 4, 10 + i)).collect();
    let pis: Vec<DenseMatrix> = (0..n).map(|i| gaussian(4, 4, 20 + i).scaled(0.3)).collect();
    let mut sum = DenseMatrix::zeros(4, 4);
    for (x, pi) in xs.iter().zip(&pis) {
        sum.axpy(1.0, pi);
        sum.axpy(p.rho, x);
    }
    let z = lfedadmm_server_z(&DenseMatrix::zeros(4, 4), &sum, n as usize, &p, lambda).unwrap();
    let objective = |z: &DenseMatrix| {
        lambda * nuclear_norm(z).unwrap()
            + xs.iter().zip(&pis).map(|(x, pi)| -pi.inner(z) + 0.5 * p.rho * x.sub(z).frobenius_norm().powi(2)).sum::<f64>()
    };
    let best = objective(&z);
    for k in 0..100 {
        let zp = z.add(&gaussian(4, 4, 100 + k).scaled(1e-3));
        assert!(objective(&zp) >= best - 1e-10);
    }
    let exact = svt(&sum.scaled(1.0 / (n as f64 * p.rho)), lambda / (n as f64 * p.rho)).unwrap();
    assert!(z.sub(&exact).frobenius_norm() < 1e-9);
}

#[test]
fn multiplier_ascent() {
    let pi = DenseMatrix::new(1, 2, vec![1.0, -1.0]).unwrap();
    let x = DenseMatrix::new(1, 2, vec![2.0, 0.0]).unwrap();
    let z = DenseMatrix::new(1, 2, vec![1.0, 1.0]).unwrap();
    let out = multiplier_update(&pi, &x, &z, 0.5).unwrap();
    assert_eq!(out.as_slice(), &[1.5, -1.5]);
}

fn mtl(mapping: TaskMapping, clients: usize, tasks: usize, reg: RegSpec) -> ProblemInstance {
    gen_mtl(&MtlParams { reg, ..MtlParams::new(clients, tasks, 4, mapping, 5) }).unwrap()
}

#[test]
fn mtl_local_solve_matches_gradient_descent() {
    let inst = mtl(TaskMapping::Random, 4, 2, RegSpec { kind: RegKind::Nuclear, weight: 0.1 });
    let (z, lam, rho) = (gvec(4, 1), gvec(4, 2), 1.3);
    let exact = mtl_local_x(&inst, 1, &z, &lam, rho).unwrap();
    let mut x = DenseVector::zeros(4);
    for _ in 0..20000 {
        let g = inst.local_gradient(1, &Model::Vector(x.clone())).unwrap();
        let mut d = g.as_vector().unwrap().add(&lam);
        d.axpy(rho, &x.sub(&z));
        x.axpy(-2e-3, &d);
    }
    assert!(exact.sub(&x).norm_inf() < 1e-8, "{}", exact.sub(&x).norm_inf());
}

fn mtl_state(clients: usize, tasks: usize) -> (Vec<DenseVector>, Vec<DenseVector>, Vec<usize>) {
    let xs = (0..clients).map(|i| gvec(4, 30 + i as u64)).collect();
    let ls = (0..clients).map(|i| gvec(4, 60 + i as u64).scaled(0.2)).collect();
    let tasks = (0..clients).map(|i| i % tasks).collect();
    (xs, ls, tasks)
}

#[test]
fn mtl_g_gradient_matches_finite_differences() {
    let (xs, ls, tasks) = mtl_state(5, 3);
    let z = gaussian(4, 3, 7);
    let rho = 0.9;
    let g = mtl_g_gradient(&z, &xs, &ls, &tasks, rho).unwrap();
    for k in 0..4 {
        for j in 0..3 {
            let h = 1e-5;
            let mut zp = z.clone();
            zp[(k, j)] += h;
            let mut zm = z.clone();
            zm[(k, j)] -= h;
            let fd = (mtl_g_value(&zp, &xs, &ls, &tasks, rho).unwrap() - mtl_g_value(&zm, &xs, &ls, &tasks, rho).unwrap()) / (2.0 * h);
            assert!((fd - g[(k, j)]).abs() < 1e-6);
        }
    }
}

#[test]
fn mtl_server_cases_are_stationary() {
    let p = AdmmParams { rho: 1.0, server_iters: 500, ..AdmmParams::default() };
    let alpha = 0.3;
    // case c: α Z + ∇G(Z) = 0
    let (xs, ls, tasks) = mtl_state(5, 3);
    let z0 = DenseMatrix::zeros(4, 3);
    let zc = mtl_server_z(MtlServerCase::C, &z0, &xs, &ls, &tasks, &p, alpha).unwrap();
    let r = mtl_g_gradient(&zc, &xs, &ls, &tasks, p.rho).unwrap().add(&zc.scaled(alpha));
    assert!(r.frobenius_norm() < 1e-12);

    // case b under the identity map reduces to the closed-form case a
    let (xs, ls, _) = mtl_state(3, 3);
    let identity = vec![0, 1, 2];
    let za = mtl_server_z(MtlServerCase::A, &z0, &xs, &ls, &identity, &p, alpha).unwrap();
    let zb = mtl_server_z(MtlServerCase::B, &z0, &xs, &ls, &identity, &p, alpha).unwrap();
    assert!(za.sub(&zb).frobenius_norm() < 1e-9);
    assert!(mtl_server_z(MtlServerCase::A, &z0, &xs, &ls, &[0, 0, 1], &p, alpha).is_err());

    // case b under a shared map beats perturbations of the nuclear subproblem
    let (xs, ls, tasks) = mtl_state(5, 3);
    let zb = mtl_server_z(MtlServerCase::B, &z0, &xs, &ls, &tasks, &p, alpha).unwrap();
    let obj = |z: &DenseMatrix| alpha * nuclear_norm(z).unwrap() + mtl_g_value(z, &xs, &ls, &tasks, p.rho).unwrap();
    let best = obj(&zb);
    for k in 0..100 {
        assert!(obj(&zb.add(&gaussian(4, 3, 200 + k).scaled(1e-3))) >= best - 1e-10);
    }
}

fn mf_state(users: usize, items: usize, rank: usize) -> (Vec<DenseVector>, Vec<DenseVector>, Vec<DenseVector>) {
    let xs = (0..users).map(|i| gvec(items, 300 + i as u64)).collect();
    let pis = (0..users).map(|i| gvec(items, 400 + i as u64).scaled(0.1)).collect();
    let us = (0..users).map(|i| gvec(rank, 500 + i as u64)).collect();
    (xs, pis, us)
}

#[test]
fn mf_item_gradient_matches_finite_differences() {
    let (xs, pis, us) = mf_state(4, 5, 2);
    let v = gaussian(5, 2, 9);
    let g = mf_gv_gradient(&v, &xs, &pis, &us).unwrap();
    for j in 0..5 {
        for k in 0..2 {
            let h = 1e-5;
            let mut vp = v.clone();
            vp[(j, k)] += h;
            let mut vm = v.clone();
            vm[(j, k)] -= h;
            let fd = (mf_gv_value(&vp, &xs, &pis, &us).unwrap() - mf_gv_value(&vm, &xs, &pis, &us).unwrap()) / (2.0 * h);
            assert!((fd - g[(j, k)]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

#[test]
fn mf_item_update_reaches_the_scalar_fixed_point() {
    // rank one, μ = 0: V_j = Σ_i (2x_ij + π_ij) u_i / (2 Σ_i u_i²)
    let (xs, pis, us) = mf_state(6, 4, 1);
    let p = AdmmParams { rho: 2.0, server_iters: 300, ..AdmmParams::default() };
    let v = mf_server_v(&DenseMatrix::zeros(4, 1), &xs, &pis, &us, &p, 0.0).unwrap();
    let uu: f64 = us.iter().map(|u| u[0] * u[0]).sum();
    for j in 0..4 {
        let num: f64 = (0..6).map(|i| (2.0 * xs[i][j] + pis[i][j]) * us[i][0]).sum();
        assert!((v[(j, 0)] - num / (2.0 * uu)).abs() < 1e-10);
    }
}

#[test]
fn mf_user_profile_reaches_least_squares_without_penalty() {
    // orthonormal V, λ = 0, π = 0: u → Vᵀ x_new
    let s = 0.5f64.sqrt();
    let v = DenseMatrix::from_rows(&[vec![s, 0.0], vec![s, 0.0], vec![0.0, s], vec![0.0, -s]]).unwrap();
    let row = DenseVector::new(vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let pi = DenseVector::zeros(4);
    let u0 = DenseVector::new(vec![0.3, -0.2]).unwrap();
    let p = AdmmParams { rho: 2.0, user_iters: 400, ..AdmmParams::default() };
    let (x, u) = mf_user_update(&row, &u0, &pi, &v, &row, &p, 0.0).unwrap();
    let pred = v.matvec(u0.as_slice());
    for j in 0..4 {
        assert!((x[j] - (2.0 * row[j] + 2.0 * pred[j]) / 4.0).abs() < 1e-14);
    }
    let ls = v.tr_matvec(x.as_slice());
    assert!((u[0] - ls[0]).abs() < 1e-10 && (u[1] - ls[1]).abs() < 1e-10, "{u:?} vs {ls:?}");

    let p = AdmmParams { user_iters: 5, ..p };
    let (_, u) = mf_user_update(&row, &u0, &pi, &v, &row, &p, 1e6).unwrap();
    assert_eq!(u.as_slice(), &[0.0, 0.0]);
}

fn residual_drop(inst: &ProblemInstance, spec: AdmmSpec) -> f64 {
    let spec = AlgorithmSpec::new(Family::Admm(spec));
    let mut sim = Simulation::new(inst, &spec, &Topology::Star, &Rng::new(1)).unwrap();
    sim.run(50).unwrap();
    let m = sim.metrics();
    m[0].residual / m[49].residual
}

#[test]
fn consensus_residuals_contract_tenfold_in_fifty_rounds() {
    let lrme = gen_lrme(&LrmeParams { clients: 8, dim: 20, rank: 2, measurements_per_client: 50, noise_sigma: 0.01, reg_weight: 1.0, seed: 1 })
        .unwrap();
    let mtl_b = gen_mtl(&MtlParams::new(12, 4, 10, TaskMapping::Random, 1)).unwrap();
    let mtl_c = gen_mtl(&MtlParams { reg: RegSpec { kind: RegKind::TraceSquare, weight: 0.1 }, ..MtlParams::new(12, 4, 10, TaskMapping::Random, 1) })
        .unwrap();
    let mf = gen_mf(&MfParams { users: 30, items: 20, rank: 3, noise_sigma: 0.01, reg_weight: 0.01, item_reg_weight: 0.01, seed: 1 })
        .unwrap();
    for (name, inst, variant) in [
        ("lrme", &lrme, AdmmVariant::Lrme),
        ("mtl-b", &mtl_b, AdmmVariant::MtlB),
        ("mtl-c", &mtl_c, AdmmVariant::MtlC),
        ("mf", &mf, AdmmVariant::Mf),
    ] {
        let drop = residual_drop(inst, AdmmSpec::with_defaults(variant));
        assert!(drop >= 10.0, "{name}: residual fell only {drop}x");
    }
}

#[test]
fn variants_reject_mismatched_instances() {
    let mtl_c = gen_mtl(&MtlParams { reg: RegSpec { kind: RegKind::TraceSquare, weight: 0.1 }, ..MtlParams::new(4, 2, 3, TaskMapping::Random, 1) })
        .unwrap();
    assert!(AdmmSpec::with_defaults(AdmmVariant::MtlB).check_instance(&mtl_c).is_err());
    assert!(AdmmSpec::with_defaults(AdmmVariant::MtlC).check_instance(&mtl_c).is_ok());
    assert!(AdmmSpec::with_defaults(AdmmVariant::MtlA).check_instance(&mtl_c).is_err());
    assert!(AdmmSpec::with_defaults(AdmmVariant::Lrme).check_instance(&mtl_c).is_err());
    let bad = AdmmSpec::new(AdmmVariant::MtlC, AdmmParams { rho: 0.0, ..AdmmParams::default() });
    assert!(bad.check_instance(&mtl_c).is_err());
}
