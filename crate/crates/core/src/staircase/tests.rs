use super::*;
use crate::cphl::{cim_hamiltonian, string_operator};
use crate::opalg::{build_matrix, expectation};

fn random_gate(rng: &mut ChaCha8Rng) -> TwoQubitGate {
    let mut t = [0.0; GATE_PARAMS];
    for x in &mut t {
        *x = rng.random_range(-1.5..1.5);
    }
    TwoQubitGate::new(t)
}

fn random_pauli(n: usize, rng: &mut ChaCha8Rng) -> PauliString {
    let letters = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    PauliString::new((0..n).map(|_| letters[rng.random_range(0..4)]).collect(), ONE)
}

fn op4_dist(a: &Op4, b: &Op4) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Truncated Taylor series of `exp(-iG)` after scaling by 2^-s, squared back.
fn taylor_exp(g: &Op4) -> Op4 {
    let s = 10;
    let scaled = g * C64::new(0.0, -1.0 / f64::from(1 << s));
    let mut term = Op4::identity();
    let mut sum = Op4::identity();
    for k in 1..30 {
        term = term * scaled / C64::new(k as f64, 0.0);
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

#[test]
fn test_gate_matrix_closed_forms() {
    assert!(op4_dist(&TwoQubitGate::identity().matrix(), &Op4::identity()) < 1e-15);
    let mut t = [0.0; GATE_PARAMS];
    t[8] = std::f64::consts::FRAC_PI_4;
    let u = TwoQubitGate::new(t).matrix();
    let minus = C64::new(0.0, -std::f64::consts::FRAC_PI_4).exp();
    let plus = minus.conj();
    let expected = Op4::from_diagonal(&nalgebra::Vector4::new(minus, plus, plus, minus));
    assert!(op4_dist(&u, &expected) < 1e-15);
}

#[test]
fn test_gate_matrix_unitary_and_matches_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let gate = random_gate(&mut rng);
        let u = gate.matrix();
        assert!(op4_dist(&(u.adjoint() * u), &Op4::identity()) < 1e-12);
        assert!(op4_dist(&u, &taylor_exp(&gate.generator())) < 1e-11);
    }
}

#[test]
fn test_from_unitary_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let gate = TwoQubitGate::new([0.0; GATE_PARAMS].map(|_: f64| rng.random_range(-0.4..0.4)));
        let back = TwoQubitGate::from_unitary(&gate.matrix());
        let u = gate.matrix();
        let v = back.matrix();
        // equal up to a global phase
        let phase = (v.adjoint() * u).trace() / C64::new(4.0, 0.0);
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        assert!(op4_dist(&(v * phase), &u) < 1e-10);
    }
}

#[test]
fn test_identity_gate_statevector() {
    let psi = StaircaseCircuit::new(TwoQubitGate::identity(), 5).unwrap().statevector().unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((psi.amplitudes[0].re - s).abs() < 1e-15);
    assert!((psi.amplitudes[16].re - s).abs() < 1e-15);
    assert!((psi.norm() - 1.0).abs() < 1e-15);
}

#[test]
fn test_random_statevector_is_normalised() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let psi = StaircaseCircuit::new(random_gate(&mut rng), 10).unwrap().statevector().unwrap();
    assert!((psi.norm() - 1.0).abs() < 1e-12);
}

fn cluster_gate() -> TwoQubitGate {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = Op2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0));
    let cz = Op4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, ONE, -ONE));
    TwoQubitGate::from_unitary(&(cz * kron2(&Op2::identity(), &h)))
}

#[test]
fn test_cluster_gate_prepares_stabiliser_state() {
    let n = 4;
    let psi = StaircaseCircuit::new(cluster_gate(), n).unwrap().statevector().unwrap();
    let one = C64::new(1.0, 0.0);
    let mut stabilisers = vec![
        PauliString::from_sites(n, &[(0, Pauli::X), (1, Pauli::Z)], one),
        PauliString::from_sites(n, &[(n - 2, Pauli::Z), (n - 1, Pauli::X)], one),
    ];
    for i in 1..n - 1 {
        stabilisers.push(PauliString::from_sites(n, &[(i - 1, Pauli::Z), (i, Pauli::X), (i + 1, Pauli::Z)], one));
    }
    for s in stabilisers {
        let e = expectation(&psi, &crate::opalg::OperatorSum::from_paulis(n, vec![s])).unwrap().re;
        assert!((e - 1.0).abs() < 1e-10);
    }
}

#[test]
fn test_cluster_gate_string_order() {
    let circuit = StaircaseCircuit::new(cluster_gate(), 8).unwrap();
    let string = string_operator(8).unwrap();
    let value = circuit.pauli_expectation(&string.paulis()[0]).unwrap();
    assert!((value - 1.0).abs() < 1e-10);
}

#[test]
fn test_identity_string_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let circuit = StaircaseCircuit::new(random_gate(&mut rng), 50).unwrap();
    assert!((circuit.pauli_expectation(&PauliString::identity(50)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn test_channel_is_trace_preserving() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let u = random_gate(&mut rng).matrix();
        // Kraus operators (⟨m| ⊗ I) U (|0⟩ ⊗ I) on the surviving qubit
        let mut total = Op2::zeros();
        for m in 0..2 {
            let k = Op2::from_fn(|r, c| u[(2 * m + r, c)]);
            total += k.adjoint() * k;
        }
        assert!((total - Op2::identity()).iter().all(|z| z.norm() < 1e-12));
    }
}

#[test]
fn test_pauli_contraction_matches_statevector() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = 2 + case % 11;
        let circuit = StaircaseCircuit::new(random_gate(&mut rng), n).unwrap();
        let p = random_pauli(n, &mut rng);
        let psi = circuit.statevector().unwrap();
        let oracle = expectation(&psi, &crate::opalg::OperatorSum::from_paulis(n, vec![p.clone()])).unwrap().re;
        worst = worst.max((circuit.pauli_expectation(&p).unwrap() - oracle).abs());
    }
    assert!(worst < 1e-11, "{worst}");
}

#[test]
fn test_pauli_length_mismatch() {
    let circuit = StaircaseCircuit::new(TwoQubitGate::identity(), 4).unwrap();
    assert!(matches!(circuit.pauli_expectation(&PauliString::identity(5)), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn test_cim_mpo_contracts_to_dense_hamiltonian() {
    for n in [4, 6, 8] {
        for g in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let dense = cim_mpo(g, n).unwrap().to_dense();
            let oracle = build_matrix(&cim_hamiltonian(n, g).unwrap(), &Sector::spin(n)).unwrap().to_dense();
            assert!((dense - oracle).camax() < 1e-12);
        }
    }
}

#[test]
fn test_mpo_classical_energy() {
    let n = 9;
    // a gate that leaves |0…0⟩ alone after the first Hadamard keeps ⟨Z_1⟩ = 0; use a plain product state instead
    let mpo = cim_mpo(1.0, n).unwrap();
    let up = QuantumState::basis_state(Sector::spin(n), 0).unwrap();
    let dense = mpo.to_dense();
    let e = up.amplitudes.dotc(&(dense * &up.amplitudes)).re;
    assert!((e + (n as f64 - 1.0)).abs() < 1e-12);
}

#[test]
fn test_mpo_expectation_matches_term_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, g) in [(10, 0.3), (10, -0.8), (6, 0.0)] {
        let circuit = StaircaseCircuit::new(random_gate(&mut rng), n).unwrap();
        let h = cim_hamiltonian(n, g).unwrap();
        let term_sum: f64 = h.paulis().iter().map(|p| circuit.pauli_expectation(p).unwrap()).sum();
        let mpo = circuit.mpo_expectation(&cim_mpo(g, n).unwrap()).unwrap();
        assert!((mpo - term_sum).abs() < 1e-11);
        let dense = expectation(&circuit.statevector().unwrap(), &h).unwrap().re;
        assert!((mpo - dense).abs() < 1e-11);
    }
}

#[test]
fn test_single_string_mpo_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 9;
    let circuit = StaircaseCircuit::new(random_gate(&mut rng), n).unwrap();
    let xs = Mpo::uniform_string(Pauli::X, 0.7, n).unwrap();
    let direct = 0.7 * circuit.pauli_expectation(&PauliString::new(vec![Pauli::X; n], ONE)).unwrap();
    assert!((circuit.mpo_expectation(&xs).unwrap() - direct).abs() < 1e-14);
    let cim = cim_mpo(0.4, n).unwrap();
    let both = circuit.mpo_expectation(&cim.sum(&xs).unwrap()).unwrap();
    let parts = circuit.mpo_expectation(&cim).unwrap() + circuit.mpo_expectation(&xs).unwrap();
    assert!((both - parts).abs() < 1e-11);
}

#[test]
fn test_fidelity_optimize_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let target = StaircaseCircuit::new(random_gate(&mut rng), 5).unwrap().statevector().unwrap();
    let fits = fidelity_optimize(&[target], &FidelityOptions { starts: 8, ..Default::default() }).unwrap();
    assert!(fits[0].fidelity > 1.0 - 1e-8, "{}", fits[0].fidelity);
}

#[test]
fn test_gate_serialises_as_flat_array() {
    let gate = TwoQubitGate::new([0.5; GATE_PARAMS]);
    let json = serde_json::to_string(&gate).unwrap();
    assert!(json.starts_with('[') && json.matches(',').count() == 14);
    let back: TwoQubitGate = serde_json::from_str(&json).unwrap();
    assert_eq!(back, gate);
}
