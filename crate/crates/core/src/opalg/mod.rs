//! Operator algebra: Pauli strings, fermionic products, symmetry sectors,
//! sparse matrix assembly and expectation values.

pub mod fermion;
pub mod models;
pub mod pauli;
pub mod sector;
pub mod state;
pub mod sum;

pub use fermion::{FermionTerm, Ladder, Spin};
pub use models::{dwave_correlator, hubbard_ladder, LadderTerm};
pub use pauli::{Pauli, PauliString};
pub use sector::{build_matrix, build_matrix_projected, Basis, Sector};
pub use state::{expectation, expectation_matrix, variance_matrix, Ensemble, MixedState, QuantumState};
pub use sum::{linear_combination, OpKind, OperatorSum, Terms};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{CMatrix, CVector, C64, ONE, ZERO};

    fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }

    fn pauli_dense(p: Pauli) -> CMatrix {
        let m = p.matrix();
        CMatrix::from_fn(2, 2, |r, c| m[r][c])
    }

    /// Explicit tensor-product construction of an annihilator on `modes` modes.
    fn dense_annihilator(modes: usize, m: usize) -> CMatrix {
        let lower = CMatrix::from_fn(2, 2, |r, c| if r == 0 && c == 1 { ONE } else { ZERO });
        let mut out = CMatrix::identity(1, 1);
        for q in 0..modes {
            let f = if q < m {
                pauli_dense(Pauli::Z)
            } else if q == m {
                lower.clone()
            } else {
                CMatrix::identity(2, 2)
            };
            out = kron(&out, &f);
        }
        out
    }

    #[test]
    fn test_z_on_first_site() {
        let z = OperatorSum::pauli(2, 0, Pauli::Z);
        let m = build_matrix(&z, &Sector::spin(2)).unwrap().to_dense();
        let diag: Vec<f64> = (0..4).map(|k| m[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn test_identity_matrix() {
        let id = OperatorSum::identity(OpKind::Spin, 3);
        let m = build_matrix(&id, &Sector::spin(3)).unwrap().to_dense();
        assert_eq!(m, CMatrix::identity(8, 8));
    }

    #[test]
    fn test_anticommutation_in_fock_space() {
        let sites = 2;
        let sector = Sector::fock(sites);
        let modes = 2 * sites;
        let ladders: Vec<Ladder> = (0..sites)
            .flat_map(|s| [Ladder::annihilate(s, Spin::Up), Ladder::annihilate(s, Spin::Down)])
            .collect();
        for a in &ladders {
            for b in &ladders {
                let ca = OperatorSum::from_fermion(sites, vec![FermionTerm::new(vec![*a], ONE)]);
                let cb = OperatorSum::from_fermion(sites, vec![FermionTerm::new(vec![*b], ONE)]).adjoint();
                let m = build_matrix(&ca.anticommutator(&cb), &sector).unwrap().to_dense();
                let expect = if a == b { CMatrix::identity(1 << modes, 1 << modes) } else { CMatrix::zeros(1 << modes, 1 << modes) };
                assert!((m - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn test_annihilator_matches_tensor_product_construction() {
        let sites = 2;
        for spin in [Spin::Up, Spin::Down] {
            for s in 0..sites {
                let l = Ladder::annihilate(s, spin);
                let op = OperatorSum::from_fermion(sites, vec![FermionTerm::new(vec![l], ONE)]);
                let m = build_matrix(&op, &Sector::fock(sites)).unwrap().to_dense();
                let oracle = dense_annihilator(2 * sites, l.mode(sites));
                assert!((m - oracle).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn test_jordan_wigner_image_agrees() {
        let h = hubbard_ladder(2, 0.7, 1.3, 2.0);
        let fock = Sector::fock(4);
        let direct = build_matrix(&h, &fock).unwrap().to_dense();
        let jw = h.jordan_wigner();
        assert_eq!(jw.kind(), OpKind::Spin);
        let via_spin = build_matrix(&jw, &Sector::spin(8)).unwrap().to_dense();
        assert!((direct - via_spin).norm() < 1e-12);
    }

    #[test]
    fn test_sector_violation() {
        let x = OperatorSum::pauli(3, 1, Pauli::X);
        assert!(matches!(
            build_matrix(&x, &Sector::spin_magnetization(3, 1)),
            Err(crate::error::Error::SectorViolation { .. })
        ));
        // XX + YY conserves magnetization even though each string alone does not
        let xx = OperatorSum::parse_pauli("XX", 1.0).unwrap();
        let yy = OperatorSum::parse_pauli("YY", 1.0).unwrap();
        assert!(build_matrix(&(&xx + &yy), &Sector::spin_magnetization(2, 0)).is_ok());
    }

    #[test]
    fn test_single_rung_free_limit() {
        let h = hubbard_ladder(1, 0.0, 1.0, 0.0);
        let m = build_matrix(&h, &Sector::fermion(2, 1, 1)).unwrap().to_dense();
        let es = crate::linalg::eigh(&m);
        assert!((es.values[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_singlet_density_expectation() {
        let delta = models::singlet_annihilator(1, 0).unwrap();
        let sector = Sector::fermion(2, 1, 1);
        let vacuum = QuantumState::basis_state(Sector::fock(2), 0).unwrap();
        let vac_m = build_matrix(&delta.adjoint(), &Sector::fock(2)).unwrap();
        let pair = vac_m.mul_vec(&vacuum.amplitudes);
        let pair = QuantumState { sector: Sector::fock(2), amplitudes: pair.unscale(2f64.sqrt()) };
        assert!((pair.norm() - 1.0).abs() < 1e-14);
        let corr = dwave_correlator(1, 0, 0).unwrap();
        let value = expectation(&pair, &corr).unwrap();
        assert!((value - C64::new(2.0, 0.0)).norm() < 1e-12);
        // the pair state lives in the (1,1) sector
        assert_eq!(sector.dim(), 4);
    }

    #[test]
    fn test_expectation_against_dense() {
        let op = &OperatorSum::parse_pauli("XZI", 0.3).unwrap() + &OperatorSum::parse_pauli("IYY", -1.1).unwrap();
        let amps = CVector::from_fn(8, |i, _| C64::new((i as f64 * 0.37).cos(), (i as f64 * 0.11).sin()));
        let amps = amps.unscale(crate::linalg::norm(&amps));
        let state = QuantumState::new(Sector::spin(3), amps.clone()).unwrap();
        let dense = build_matrix(&op, &Sector::spin(3)).unwrap().to_dense();
        let oracle = (amps.adjoint() * dense * &amps)[(0, 0)];
        let value = expectation(&state, &op).unwrap();
        assert!((value - oracle).norm() < 1e-12);
        assert!(value.im.abs() < 1e-12);
    }
}
