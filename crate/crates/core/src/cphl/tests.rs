use super::*;
use crate::exact::low_spectrum;
use crate::linalg::{eigh, norm, CMatrix, CVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pauli_dense(p: Pauli) -> CMatrix {
    let m = p.matrix();
    CMatrix::from_fn(2, 2, |r, c| m[r][c])
}

/// Kronecker product of single-site matrices, site 0 leftmost.
fn kron_string(letters: &[Pauli]) -> CMatrix {
    letters.iter().fold(CMatrix::identity(1, 1), |acc, &p| acc.kronecker(&pauli_dense(p)))
}

fn dense_cim(n: usize, g: f64) -> CMatrix {
    let dim = 1 << n;
    let mut h = CMatrix::zeros(dim, dim);
    let mut add = |sites: &[(usize, Pauli)], w: f64| {
        let mut letters = vec![Pauli::I; n];
        for &(i, p) in sites {
            letters[i] = p;
        }
        h += kron_string(&letters) * C64::new(w, 0.0);
    };
    let a = -(1.0 - g) / 2.0;
    for i in 1..n - 1 {
        add(&[(i - 1, Pauli::Z), (i, Pauli::X), (i + 1, Pauli::Z)], a);
    }
    add(&[(0, Pauli::X), (1, Pauli::Z)], a);
    add(&[(n - 2, Pauli::Z), (n - 1, Pauli::X)], a);
    for i in 0..n - 1 {
        add(&[(i, Pauli::Z), (i + 1, Pauli::Z)], -(1.0 + g) / 2.0);
    }
    h
}

#[test]
fn test_cim_spectrum_matches_dense_oracle() {
    let n = 8;
    let es = eigh(&dense_cim(n, 0.0));
    let spec = low_spectrum(&cim_hamiltonian(n, 0.0).unwrap(), &Sector::spin(n), 6).unwrap();
    for k in 0..6 {
        assert!((es.values[k] - spec.energies[k]).abs() < 1e-10);
    }
}

#[test]
fn test_cluster_point_has_unit_string_order() {
    for n in [6, 7, 8] {
        let gs = ground_state(&cim_hamiltonian(n, -1.0).unwrap(), &Sector::spin(n)).unwrap();
        assert!((string_order(&gs.state).unwrap() - 1.0).abs() < 1e-10, "n={n}");
        // every stabiliser is satisfied
        assert!((gs.energy + n as f64).abs() < 1e-10);
    }
}

#[test]
fn test_ising_point_is_doubly_degenerate() {
    let spec = low_spectrum(&cim_hamiltonian(6, 1.0).unwrap(), &Sector::spin(6), 3).unwrap();
    assert!((spec.energies[1] - spec.energies[0]).abs() < 1e-10);
    assert!(spec.energies[2] - spec.energies[0] > 1.0);
    assert!((spec.energies[0] + 5.0).abs() < 1e-10);
}

#[test]
fn test_string_order_of_product_and_random_states() {
    let n = 6;
    let sector = Sector::spin(n);
    let up = QuantumState::basis_state(sector.clone(), 0).unwrap();
    assert!(string_order(&up).unwrap().abs() < 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = CVector::from_fn(1 << n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let v = v.unscale(norm(&v));
    let psi = QuantumState::new(sector, v.clone()).unwrap();
    let letters = [Pauli::Z, Pauli::Y, Pauli::X, Pauli::X, Pauli::Y, Pauli::Z];
    let oracle = v.dotc(&(kron_string(&letters) * &v)).re;
    assert!((string_order(&psi).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn test_extension_ansatz_weights() {
    let (terms, weights) = extension_ansatz(8, 0.5).unwrap();
    assert_eq!(terms.len(), 16);
    assert_eq!(terms[4].label, "ZIZ");
    assert_eq!(weights[0], 0.5);
    assert_eq!(weights[5], 1.0);
    assert_eq!(weights[15], 2.0);
    assert!(terms.iter().all(|t| t.operator.is_hermitian()));
}

#[test]
fn test_harmonic_evaluation() {
    let (terms, _) = extension_ansatz(6, 1.0).unwrap();
    let mut fam = HamiltonianFamily::new(6, terms, 4);
    fam.harmonics[(2, 0)] = 1.0;
    assert!((fam.eval_coefficients(0.0)[2] - 1.0).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    fam.harmonics = DMatrix::from_fn(16, 4, |_, _| rng.random_range(-1.0..1.0));
    assert!(fam.eval_coefficients(-1.0).iter().chain(&fam.eval_coefficients(1.0)).all(|c| *c == 0.0));
    let g = 0.37;
    let c = fam.eval_coefficients(g);
    for a in 0..16 {
        let mut direct = 0.0;
        for m in 1..=4 {
            direct += fam.harmonics[(a, m - 1)] * (m as f64 * PI * (g + 1.0) / 2.0).sin();
        }
        assert!((c[a] - direct).abs() < 1e-14);
    }
}

#[test]
fn test_fit_harmonics_limits() {
    let grid = uniform_grid(21);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let alpha = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
    let values = DMatrix::from_fn(3, grid.len(), |a, j| (0..5).map(|m| alpha[(a, m)] * harmonic_row(grid[j], 5)[m]).sum());
    let exact = fit_harmonics(&values, &grid, 5, 0.0).unwrap();
    assert!((exact - &alpha).amax() < 1e-12);
    let damped = fit_harmonics(&values, &grid, 5, 1e14).unwrap();
    assert!(damped.amax() < 1e-11);
    // noisy data against a least-squares solve through the SVD
    let noisy = values.map(|x| x + rng.random_range(-0.1..0.1));
    let kappa = 0.3;
    let fit = fit_harmonics(&noisy, &grid, 5, kappa).unwrap();
    let design = DMatrix::from_fn(grid.len(), 5, |j, m| harmonic_row(grid[j], 5)[m]);
    let mut stacked = DMatrix::zeros(grid.len() + 5, 5);
    stacked.view_mut((0, 0), (grid.len(), 5)).copy_from(&design);
    stacked.view_mut((grid.len(), 0), (5, 5)).copy_from(&(DMatrix::identity(5, 5) * kappa.sqrt()));
    for a in 0..3 {
        let mut rhs = nalgebra::DVector::zeros(grid.len() + 5);
        rhs.rows_mut(0, grid.len()).copy_from(&noisy.row(a).transpose());
        let oracle = stacked.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
        assert!((fit.row(a).transpose() - oracle).amax() < 1e-10);
    }
}

#[test]
fn test_fit_harmonics_rank_deficient() {
    let grid = vec![-0.5, 0.0, 0.5];
    let values = DMatrix::zeros(1, 3);
    assert!(matches!(fit_harmonics(&values, &grid, 6, 0.0), Err(Error::SingularSystem { .. })));
    assert!(fit_harmonics(&values, &grid, 6, 1e-3).is_ok());
}

#[test]
fn test_lambda_schedule_decreases() {
    let cfg = CphlConfig::default();
    assert!((0..50).all(|k| cfg.lambda_at(k + 1) < cfg.lambda_at(k)));
}

#[test]
fn test_crossing_interpolates() {
    let grid = [0.0, 0.5, 1.0];
    assert_eq!(crossing(&grid, &[1.0, 0.6, 0.4], 0.5), Some(0.75));
    assert_eq!(crossing(&grid, &[1.0, 0.9, 0.8], 0.5), None);
}

fn small_config(lambda0: f64) -> CphlConfig {
    CphlConfig { grid: uniform_grid(9), m_max: 3, lambda0, max_iters: 3, ..Default::default() }
}

#[test]
fn test_zero_bias_returns_bare_family() {
    let (terms, weights) = extension_ansatz(6, 1.0).unwrap();
    let out = cphl_run(&small_config(0.0), terms, weights, 6, &mut ExactSolver).unwrap();
    assert!(out.family.harmonics.amax() < 1e-9, "{}", out.family.harmonics.amax());
    assert!(out.converged);
}

#[test]
fn test_run_is_reproducible_and_pins_endpoints() {
    let (terms, weights) = extension_ansatz(6, 1.0).unwrap();
    let a = cphl_run(&small_config(1.0), terms.clone(), weights.clone(), 6, &mut ExactSolver).unwrap();
    let b = cphl_run(&small_config(1.0), terms, weights, 6, &mut ExactSolver).unwrap();
    assert_eq!(a.family.harmonics, b.family.harmonics);
    assert!(a.family.harmonics.amax() > 1e-3);
    assert!(a.family.eval_coefficients(-1.0).iter().chain(&a.family.eval_coefficients(1.0)).all(|c| *c == 0.0));
    assert_eq!(a.log.len(), 3);
    assert!(a.log.last().unwrap().phase_boundary.is_some());
}

#[test]
fn test_strict_mode_reports_iteration_cap() {
    let (terms, weights) = extension_ansatz(6, 1.0).unwrap();
    let cfg = CphlConfig { require_convergence: true, max_iters: 1, ..small_config(1.0) };
    assert_eq!(cphl_run(&cfg, terms, weights, 6, &mut ExactSolver).unwrap_err(), Error::IterationCap(1));
}
