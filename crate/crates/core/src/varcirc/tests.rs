use super::*;
use crate::exact::ground_state;
use crate::linalg::{expm_hermitian, CMatrix, ONE, ZERO};
use crate::opalg::{hubbard_ladder, LadderTerm, OpKind, Pauli, PauliString};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pauli_sum(n: usize, terms: usize, rng: &mut ChaCha8Rng, real_only: bool) -> OperatorSum {
    let letters = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    let mut out = Vec::new();
    while out.len() < terms {
        let label: Vec<Pauli> = (0..n).map(|_| letters[rng.random_range(0..4)]).collect();
        let s = PauliString::new(label, C64::new(rng.random_range(-1.0..1.0), 0.0));
        if real_only && s.y_count() % 2 == 1 {
            continue;
        }
        out.push(s);
    }
    OperatorSum::from_paulis(n, out).simplify()
}

fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> CVector {
    let v = CVector::from_fn(dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let n = crate::linalg::norm(&v);
    v.unscale(n)
}

fn pure(sector: Sector, v: CVector) -> Reference {
    Reference::Pure(QuantumState::new(sector, v).unwrap())
}

#[test]
fn test_zero_angles_leave_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sector = Sector::spin(3);
    let v = random_state(8, &mut rng);
    let circ = VariationalCircuit::new(pure(sector, v.clone()))
        .with_layers(&[random_pauli_sum(3, 4, &mut rng, false), random_pauli_sum(3, 4, &mut rng, false)]);
    let out = apply(&circ).unwrap();
    assert_eq!(out.components()[0].1, &v);
}

#[test]
fn test_single_qubit_rotation() {
    let sector = Sector::spin(1);
    let mut circ = VariationalCircuit::new(Reference::Pure(QuantumState::basis_state(sector, 0).unwrap()))
        .with_layers(&[OperatorSum::pauli(1, 0, Pauli::X)]);
    let q = std::f64::consts::FRAC_PI_4;
    circ.set_angles(&[q]).unwrap();
    let out = apply(&circ).unwrap();
    let v = out.components()[0].1.clone();
    assert!((v[0] - C64::new(q.cos(), 0.0)).norm() < 1e-14);
    assert!((v[1] - C64::new(0.0, -q.sin())).norm() < 1e-14);
}

#[test]
fn test_ladder_quench_matches_stepwise_propagation() {
    let rungs = 4;
    let sector = Sector::fermion(2 * rungs, 2, 2);
    let h0 = hubbard_ladder(rungs, -1.0, -1.0, 4.0);
    let gs = ground_state(&h0, &sector).unwrap();
    let gens: Vec<OperatorSum> = [LadderTerm::HopLeg, LadderTerm::HopRung, LadderTerm::Onsite, LadderTerm::HopLeg, LadderTerm::HopRung]
        .iter()
        .map(|t| t.operator(rungs))
        .collect();
    let angles = [0.31, -0.7, 0.15, 1.2, -0.05];
    let mut circ = VariationalCircuit::new(Reference::Pure(gs.state.clone())).with_layers(&gens);
    circ.set_angles(&angles).unwrap();
    let out = apply(&circ).unwrap();
    let v = out.components()[0].1.clone();
    assert!((crate::linalg::norm(&v) - 1.0).abs() < 1e-12);
    let mut oracle = gs.state.amplitudes.clone();
    for (g, &a) in gens.iter().zip(&angles) {
        let m = build_matrix(g, &sector).unwrap();
        oracle = krylov_expm(&m, &oracle, a, 1e-15);
    }
    assert!((v - oracle).camax() < 1e-10);
}

fn fd_check(circ: &VariationalCircuit, cost: &CostSpec) -> f64 {
    let (_, grad) = cost_and_gradient(circ, cost).unwrap();
    let engine = CircuitEngine::for_circuit(circ, &cost.operator()).unwrap();
    let angles = circ.angles();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..angles.len() {
        let mut p = angles.clone();
        p[k] += h;
        let mut m = angles.clone();
        m[k] -= h;
        let fd = (engine.cost_value(&p, &circ.reference).unwrap() - engine.cost_value(&m, &circ.reference).unwrap()) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs());
    }
    worst
}

#[test]
fn test_empty_circuit_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = random_pauli_sum(2, 5, &mut rng, false);
    let v = random_state(4, &mut rng);
    let circ = VariationalCircuit::new(pure(Sector::spin(2), v.clone()));
    let (value, grad) = cost_and_gradient(&circ, &CostSpec::energy_only(h.clone())).unwrap();
    assert!(grad.is_empty());
    let direct = crate::opalg::expectation(&QuantumState::new(Sector::spin(2), v).unwrap(), &h).unwrap();
    assert!((value - direct.re).abs() < 1e-12);
}

#[test]
fn test_gradient_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..5 {
        let gens: Vec<OperatorSum> = (0..4).map(|_| random_pauli_sum(3, 3, &mut rng, false)).collect();
        let cost = CostSpec::new(random_pauli_sum(3, 6, &mut rng, false), random_pauli_sum(3, 2, &mut rng, false), 0.7).unwrap();
        let mut circ = if trial % 2 == 0 {
            VariationalCircuit::new(pure(Sector::spin(3), random_state(8, &mut rng)))
        } else {
            VariationalCircuit::thermal(&random_pauli_sum(3, 5, &mut rng, false), 0.8, &Sector::spin(3)).unwrap()
        }
        .with_layers(&gens);
        let angles: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        circ.set_angles(&angles).unwrap();
        assert!(fd_check(&circ, &cost) < 1e-6);
    }
}

fn dense(op: &OperatorSum, sector: &Sector) -> CMatrix {
    build_matrix(op, sector).unwrap().to_dense()
}

#[test]
fn test_adapt_gradient_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sector = Sector::spin(2);
    let h = random_pauli_sum(2, 6, &mut rng, false);
    let pool = OperatorPool::new((0..3).map(|_| random_pauli_sum(2, 3, &mut rng, false)).collect()).unwrap();
    let v = random_state(4, &mut rng);
    let state = QuantumState::new(sector.clone(), v.clone()).unwrap();
    let grad = adapt_gradient(&pool, &state, &h).unwrap();
    let hd = dense(&h, &sector);
    for (a, g) in pool.candidates().iter().zip(&grad) {
        let ad = dense(a, &sector);
        let comm = &ad * &hd - &hd * &ad;
        let val = (v.adjoint() * comm * &v)[(0, 0)] * crate::linalg::I;
        assert!(val.im.abs() < 1e-12);
        assert!((val.re - g).abs() < 1e-12);
    }
    // commutator of H with itself
    let self_pool = OperatorPool::new(vec![h.clone()]).unwrap();
    assert_eq!(adapt_gradient(&self_pool, &state, &h).unwrap()[0].abs() < 1e-14, true);
}

#[test]
fn test_adapt_gradient_vanishes_for_real_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sector = Sector::spin(3);
    let h = random_pauli_sum(3, 6, &mut rng, true);
    let pool = OperatorPool::new((0..4).map(|_| random_pauli_sum(3, 3, &mut rng, true)).collect()).unwrap();
    let v = CVector::from_fn(8, |_, _| C64::new(rng.random_range(-1.0..1.0), 0.0));
    let v = v.unscale(crate::linalg::norm(&v));
    let state = QuantumState::new(sector, v).unwrap();
    for g in adapt_gradient(&pool, &state, &h).unwrap() {
        assert!(g.abs() < 1e-12);
    }
}

#[test]
fn test_adapt_hessian_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sector = Sector::spin(2);
    let h = random_pauli_sum(2, 6, &mut rng, false);
    let pool = OperatorPool::new((0..3).map(|_| random_pauli_sum(2, 3, &mut rng, false)).collect()).unwrap();
    let v = random_state(4, &mut rng);
    let state = QuantumState::new(sector.clone(), v.clone()).unwrap();
    let report = adapt_hessian(&pool, &state, &h).unwrap();
    let hd = dense(&h, &sector);
    let mats: Vec<CMatrix> = pool.candidates().iter().map(|a| dense(a, &sector)).collect();
    let comm = |a: &CMatrix, b: &CMatrix| a * b - b * a;
    for i in 0..3 {
        for j in 0..3 {
            let nij = comm(&mats[i], &comm(&mats[j], &hd));
            let nji = comm(&mats[j], &comm(&mats[i], &hd));
            let val = (v.adjoint() * (nij + nji) * &v)[(0, 0)] * -0.5;
            assert!((val.re - report.matrix[(i, j)]).abs() < 1e-10);
        }
    }
    assert!((&report.matrix - report.matrix.transpose()).amax() < 1e-12);
    assert!(report.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn test_hessian_at_ground_state_with_self_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random_pauli_sum(3, 6, &mut rng, false);
    let gs = ground_state(&h, &Sector::spin(3)).unwrap();
    let pool = OperatorPool::new(vec![h.clone()]).unwrap();
    let report = adapt_hessian(&pool, &gs.state, &h).unwrap();
    assert!(report.matrix[(0, 0)].abs() < 1e-10);
}

#[test]
fn test_hessian_matches_energy_curvature() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sector = Sector::spin(2);
    let h = random_pauli_sum(2, 6, &mut rng, false);
    let pool = OperatorPool::new((0..3).map(|_| random_pauli_sum(2, 3, &mut rng, false)).collect()).unwrap();
    let v = random_state(4, &mut rng);
    let state = QuantumState::new(sector.clone(), v.clone()).unwrap();
    let report = adapt_hessian(&pool, &state, &h).unwrap();
    let grad = adapt_gradient(&pool, &state, &h).unwrap();
    let w = report.unstable_direction();
    let gen = linear_combination_dense(&pool, &w, &sector);
    let hd = dense(&h, &sector);
    let energy = |t: f64| {
        let u = expm_hermitian(&gen, t);
        let psi = u * &v;
        (psi.adjoint() * &hd * &psi)[(0, 0)].re
    };
    let t = 1e-3;
    let second = (energy(t) - 2.0 * energy(0.0) + energy(-t)) / (t * t);
    let first = (energy(t) - energy(-t)) / (2.0 * t);
    let g_dir: f64 = grad.iter().zip(&w).map(|(a, b)| a * b).sum();
    assert!((first - g_dir).abs() < 1e-6);
    assert!((second - report.min_eigenvalue()).abs() < 1e-4);
}

fn linear_combination_dense(pool: &OperatorPool, w: &[f64], sector: &Sector) -> CMatrix {
    let dim = sector.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for (a, &c) in pool.candidates().iter().zip(w) {
        out += dense(a, sector) * C64::new(c, 0.0);
    }
    out
}

#[test]
fn test_optimize_at_ground_state_returns_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = random_pauli_sum(3, 6, &mut rng, false);
    let gs = ground_state(&h, &Sector::spin(3)).unwrap();
    let pool = OperatorPool::new((0..3).map(|_| random_pauli_sum(3, 2, &mut rng, false)).collect()).unwrap();
    let circ = VariationalCircuit::new(Reference::Pure(gs.state.clone()));
    let opts = OptimizeOptions { growth: Some(pool), ..Default::default() };
    let out = optimize(&circ, &CostSpec::energy_only(h), &opts).unwrap();
    assert_eq!(out.added_layers, 0);
    assert!((out.cost - gs.energy).abs() < 1e-12);
}

#[test]
fn test_optimize_escapes_real_saddle() {
    // real state, real generators: the gradient is exactly zero at θ = 0
    let sector = Sector::spin(2);
    let h = &OperatorSum::parse_pauli("ZZ", 1.0).unwrap() + &OperatorSum::parse_pauli("IZ", 0.5).unwrap();
    let reference = Reference::Pure(QuantumState::basis_state(sector.clone(), 0).unwrap());
    let circ = VariationalCircuit::new(reference).with_layers(&[OperatorSum::parse_pauli("XI", 1.0).unwrap()]);
    let cost = CostSpec::energy_only(h.clone());
    assert_eq!(cost_and_gradient(&circ, &cost).unwrap().1[0], 0.0);
    let out = optimize(&circ, &cost, &OptimizeOptions::default()).unwrap();
    let before = cost_and_gradient(&circ, &cost).unwrap().0;
    assert!(out.cost < before - 0.5);
}

#[test]
fn test_adapt_growth_reaches_ground_state() {
    let sector = Sector::spin(2);
    let h = &(&OperatorSum::parse_pauli("ZZ", 1.0).unwrap() + &OperatorSum::parse_pauli("XI", 0.6).unwrap())
        + &OperatorSum::parse_pauli("IX", 0.4).unwrap();
    let gs = ground_state(&h, &sector).unwrap();
    let pool = OperatorPool::new(
        ["YI", "IY", "YZ", "ZY", "XY", "YX"].iter().map(|l| OperatorSum::parse_pauli(l, 1.0).unwrap()).collect(),
    )
    .unwrap();
    let circ = VariationalCircuit::new(Reference::Pure(QuantumState::basis_state(sector, 0).unwrap()));
    let opts = OptimizeOptions { growth: Some(pool), max_layers: 12, ..Default::default() };
    let out = optimize(&circ, &CostSpec::energy_only(h), &opts).unwrap();
    assert!(out.added_layers > 0);
    assert!((out.cost - gs.energy).abs() < 1e-6);
}

#[test]
fn test_thermal_purity_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sector = Sector::spin(3);
    let mut circ = VariationalCircuit::thermal(&random_pauli_sum(3, 6, &mut rng, false), 0.5, &sector)
        .unwrap()
        .with_layers(&[random_pauli_sum(3, 3, &mut rng, false), random_pauli_sum(3, 3, &mut rng, false)]);
    let before = circ.reference.purity();
    circ.set_angles(&[0.8, -2.1]).unwrap();
    let after = apply(&circ).unwrap().purity();
    assert!((before - after).abs() < 1e-12);
    assert!(before < 1.0);
}

#[test]
fn test_engine_rejects_dimension_mismatch() {
    let circ = VariationalCircuit::new(Reference::Pure(QuantumState::basis_state(Sector::spin(2), 0).unwrap()))
        .with_layers(&[OperatorSum::parse_pauli("XX", 1.0).unwrap()]);
    let engine = CircuitEngine::for_circuit(&circ, &OperatorSum::parse_pauli("ZZ", 1.0).unwrap()).unwrap();
    assert!(matches!(engine.cost_value(&[0.1, 0.2], &circ.reference), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn test_non_hermitian_pool_rejected() {
    let bad = OperatorSum::parse_pauli("XY", 1.0).unwrap().scale(crate::linalg::I);
    assert_eq!(OperatorPool::new(vec![OperatorSum::parse_pauli("ZZ", 1.0).unwrap(), bad]).unwrap_err(), Error::NonHermitianPool(1));
}

#[test]
fn test_sampled_cost_large_shot_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sector = Sector::spin(2);
    let h = random_pauli_sum(2, 6, &mut rng, false);
    let v = random_state(4, &mut rng);
    let circ = VariationalCircuit::new(pure(sector.clone(), v.clone()));
    let cost = CostSpec::energy_only(h.clone());
    let model = ShotModel { shots_per_eval: 1_000_000, rng_seed: 42 };
    let (est, se) = sampled_cost(&circ, &cost, &model, 0).unwrap();
    let exact = crate::opalg::expectation(&QuantumState::new(sector, v).unwrap(), &h).unwrap().re;
    assert!((est - exact).abs() < 3.0 * se);
    // reproducible per seed and stream
    assert_eq!(sampled_cost(&circ, &cost, &model, 0).unwrap(), (est, se));
    assert_ne!(sampled_cost(&circ, &cost, &model, 1).unwrap().0, est);
}

#[test]
fn test_sampled_cost_eigenstate_has_no_variance() {
    let sector = Sector::spin(2);
    let circ = VariationalCircuit::new(Reference::Pure(QuantumState::basis_state(sector, 0b01).unwrap()));
    let h = &OperatorSum::parse_pauli("ZZ", 0.7).unwrap() + &OperatorSum::parse_pauli("ZI", -0.2).unwrap();
    let (est, se) = sampled_cost(&circ, &CostSpec::energy_only(h), &ShotModel { shots_per_eval: 15, rng_seed: 3 }, 9).unwrap();
    assert!((est - (-0.7 - 0.2)).abs() < 1e-14);
    assert_eq!(se, 0.0);
}

#[test]
fn test_sampled_cost_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sector = Sector::spin(2);
    let h = random_pauli_sum(2, 5, &mut rng, false);
    let v = random_state(4, &mut rng);
    let state = QuantumState::new(sector.clone(), v).unwrap();
    let est = ShotEstimator::new(&h, &sector).unwrap();
    let exact = est.exact(&state);
    let runs = 4000;
    let samples: Vec<f64> = (0..runs).map(|k| est.sample(&state, 15, 5, k).0).collect();
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * sd / (runs as f64).sqrt());
}

#[test]
fn test_fermionic_cost_terms_match_exact() {
    let rungs = 2;
    let sector = Sector::fermion(2 * rungs, 1, 1);
    let h = hubbard_ladder(rungs, -1.0, -0.5, 3.0);
    let gs = ground_state(&h, &sector).unwrap();
    let est = ShotEstimator::new(&h, &sector).unwrap();
    assert!((est.exact(&gs.state) - gs.energy).abs() < 1e-12);
}

#[test]
fn test_pattern_search_quadratic_toy() {
    let target = [0.4, -0.9, 0.25];
    let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let opts = PatternOptions { min_step: 1e-3, ..Default::default() };
    let res = pattern_search_with(|x, _| (f(x), 0.0), f, &[0.0; 3], 1, 100_000, &opts);
    for (a, b) in res.theta.iter().zip(&target) {
        assert!((a - b).abs() <= 2e-3);
    }
    let none = pattern_search_with(|x, _| (f(x), 0.0), f, &[0.0; 3], 15, 0, &opts);
    assert_eq!(none.theta, vec![0.0; 3]);
    assert_eq!(none.shots_used, 0);
}

#[test]
fn test_pattern_search_respects_budget() {
    let sector = Sector::spin(2);
    let circ = VariationalCircuit::new(Reference::Pure(QuantumState::basis_state(sector, 0).unwrap()))
        .with_layers(&[OperatorSum::parse_pauli("YI", 1.0).unwrap(), OperatorSum::parse_pauli("IY", 1.0).unwrap()]);
    let h = &OperatorSum::parse_pauli("XI", 1.0).unwrap() + &OperatorSum::parse_pauli("IX", 1.0).unwrap();
    let model = ShotModel { shots_per_eval: 15, rng_seed: 8 };
    let res = pattern_search(&circ, &CostSpec::energy_only(h), &model, 3000, &PatternOptions::default()).unwrap();
    assert!(res.shots_used <= 3000);
    let last = res.trajectory.last().unwrap();
    assert!(last.exact_cost < -1.0);
    let _ = (ONE, ZERO, OpKind::Spin);
}
