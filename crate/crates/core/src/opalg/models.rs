//! Model Hamiltonians and observables shared by several experiments.
//!
//! Ladder sites are numbered rung-major: `site = 2·rung + leg` with `leg ∈ {0, 1}`.

use super::fermion::{FermionTerm, Ladder, Spin};
use super::pauli::{Pauli, PauliString};
use super::sum::{OpKind, OperatorSum};
use crate::error::{Error, Result};
use crate::linalg::{C64, ONE};

pub const SPINS: [Spin; 2] = [Spin::Up, Spin::Down];

pub fn ladder_site(rung: usize, leg: usize) -> usize {
    2 * rung + leg
}

/// `Σ_σ (c†_{aσ} c_{bσ} + c†_{bσ} c_{aσ})`.
pub fn hopping(sites: usize, a: usize, b: usize) -> OperatorSum {
    let mut terms = Vec::with_capacity(4);
    for s in SPINS {
        terms.push(FermionTerm::new(vec![Ladder::create(a, s), Ladder::annihilate(b, s)], ONE));
        terms.push(FermionTerm::new(vec![Ladder::create(b, s), Ladder::annihilate(a, s)], ONE));
    }
    OperatorSum::from_fermion(sites, terms)
}

/// `n_{iσ}`.
pub fn number(sites: usize, site: usize, spin: Spin) -> OperatorSum {
    OperatorSum::from_fermion(sites, vec![FermionTerm::number(site, spin)])
}

/// `n_i = n_{i↑} + n_{i↓}`.
pub fn density(sites: usize, site: usize) -> OperatorSum {
    &number(sites, site, Spin::Up) + &number(sites, site, Spin::Down)
}

/// `n_{i↑} n_{i↓}`.
pub fn double_occupancy(sites: usize, site: usize) -> OperatorSum {
    OperatorSum::from_fermion(
        sites,
        vec![FermionTerm::new(
            vec![
                Ladder::create(site, Spin::Up),
                Ladder::create(site, Spin::Down),
                Ladder::annihilate(site, Spin::Down),
                Ladder::annihilate(site, Spin::Up),
            ],
            ONE,
        )],
    )
}

/// Translation-invariant building blocks on a two-leg ladder with open ends along the legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderTerm {
    /// Nearest-neighbour hopping along the legs.
    HopLeg,
    /// Hopping across a rung.
    HopRung,
    /// Hopping across a plaquette diagonal.
    HopDiagonal,
    /// Next-nearest-neighbour hopping along the legs.
    HopLeg2,
    /// On-site repulsion `n↑n↓`.
    Onsite,
    /// Density-density along the legs.
    DensityLeg,
    /// Density-density across a rung.
    DensityRung,
    /// Density-density across a diagonal.
    DensityDiagonal,
}

impl LadderTerm {
    pub const ALL: [LadderTerm; 8] = [
        LadderTerm::HopLeg,
        LadderTerm::HopRung,
        LadderTerm::HopDiagonal,
        LadderTerm::HopLeg2,
        LadderTerm::Onsite,
        LadderTerm::DensityLeg,
        LadderTerm::DensityRung,
        LadderTerm::DensityDiagonal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LadderTerm::HopLeg => "hop_x",
            LadderTerm::HopRung => "hop_y",
            LadderTerm::HopDiagonal => "hop_diag",
            LadderTerm::HopLeg2 => "hop_x2",
            LadderTerm::Onsite => "U",
            LadderTerm::DensityLeg => "V_x",
            LadderTerm::DensityRung => "V_y",
            LadderTerm::DensityDiagonal => "V_diag",
        }
    }

    pub fn is_density_density(self) -> bool {
        matches!(self, LadderTerm::Onsite | LadderTerm::DensityLeg | LadderTerm::DensityRung | LadderTerm::DensityDiagonal)
    }

    fn bonds(self, rungs: usize) -> Vec<(usize, usize)> {
        let s = ladder_site;
        let mut out = Vec::new();
        match self {
            LadderTerm::HopLeg | LadderTerm::DensityLeg => {
                for r in 0..rungs.saturating_sub(1) {
                    for leg in 0..2 {
                        out.push((s(r, leg), s(r + 1, leg)));
                    }
                }
            }
            LadderTerm::HopRung | LadderTerm::DensityRung => {
                for r in 0..rungs {
                    out.push((s(r, 0), s(r, 1)));
                }
            }
            LadderTerm::HopDiagonal | LadderTerm::DensityDiagonal => {
                for r in 0..rungs.saturating_sub(1) {
                    out.push((s(r, 0), s(r + 1, 1)));
                    out.push((s(r, 1), s(r + 1, 0)));
                }
            }
            LadderTerm::HopLeg2 => {
                for r in 0..rungs.saturating_sub(2) {
                    for leg in 0..2 {
                        out.push((s(r, leg), s(r + 2, leg)));
                    }
                }
            }
            LadderTerm::Onsite => {}
        }
        out
    }

    /// Operator with unit coupling on every bond of the given type.
    pub fn operator(self, rungs: usize) -> OperatorSum {
        let n = 2 * rungs;
        let mut total = OperatorSum::zero(OpKind::Fermion, n);
        match self {
            LadderTerm::Onsite => {
                for i in 0..n {
                    total = &total + &double_occupancy(n, i);
                }
            }
            LadderTerm::HopLeg | LadderTerm::HopRung | LadderTerm::HopDiagonal | LadderTerm::HopLeg2 => {
                for (a, b) in self.bonds(rungs) {
                    total = &total + &hopping(n, a, b);
                }
            }
            LadderTerm::DensityLeg | LadderTerm::DensityRung | LadderTerm::DensityDiagonal => {
                for (a, b) in self.bonds(rungs) {
                    total = &total + &density(n, a).product(&density(n, b));
                }
            }
        }
        total.simplify()
    }
}

/// `H = -t_x Σ_leg (c†c + h.c.) - t_y Σ_rung (c†c + h.c.) + U Σ n↑n↓`.
pub fn hubbard_ladder(rungs: usize, t_x: f64, t_y: f64, u: f64) -> OperatorSum {
    assert!(rungs >= 1, "ladder needs at least one rung");
    let hx = LadderTerm::HopLeg.operator(rungs).scale_real(-t_x);
    let hy = LadderTerm::HopRung.operator(rungs).scale_real(-t_y);
    let hu = LadderTerm::Onsite.operator(rungs).scale_real(u);
    (&(&hx + &hy) + &hu).simplify()
}

/// Singlet annihilator on a rung, `c_{(i,0)↑}c_{(i,1)↓} - c_{(i,0)↓}c_{(i,1)↑}`.
pub fn singlet_annihilator(rungs: usize, rung: usize) -> Result<OperatorSum> {
    if rung >= rungs {
        return Err(Error::IndexOutOfRange { index: rung, limit: rungs });
    }
    let (a, b) = (ladder_site(rung, 0), ladder_site(rung, 1));
    Ok(OperatorSum::from_fermion(
        2 * rungs,
        vec![
            FermionTerm::new(vec![Ladder::annihilate(a, Spin::Up), Ladder::annihilate(b, Spin::Down)], ONE),
            FermionTerm::new(vec![Ladder::annihilate(a, Spin::Down), Ladder::annihilate(b, Spin::Up)], -ONE),
        ],
    ))
}

/// Hermitian part `½(Δ†_i Δ_j + Δ†_j Δ_i)` of the rung pair correlator; for `i = j`
/// this is the singlet density `Δ†_i Δ_i`.
pub fn dwave_correlator(rungs: usize, rung_i: usize, rung_j: usize) -> Result<OperatorSum> {
    let di = singlet_annihilator(rungs, rung_i)?;
    let dj = singlet_annihilator(rungs, rung_j)?;
    let forward = di.adjoint().product(&dj);
    Ok((&forward + &forward.adjoint()).scale_real(0.5).simplify())
}

/// `Σ_{r} ½(Δ†_0 Δ_r + h.c.)` over all rungs `r`.
pub fn pair_correlation_sum(rungs: usize) -> OperatorSum {
    let mut total = OperatorSum::zero(OpKind::Fermion, 2 * rungs);
    for r in 0..rungs {
        total = &total + &dwave_correlator(rungs, 0, r).expect("rung in range");
    }
    total.simplify()
}

/// `Σ_j c · P_j` where `P_j` places `pattern` at offset `j`. Open chains keep only
/// placements that fit; periodic chains wrap around.
pub fn translated_sum(n: usize, pattern: &[(usize, Pauli)], coeff: f64, periodic: bool) -> OperatorSum {
    let span = pattern.iter().map(|p| p.0).max().unwrap_or(0);
    let count = if periodic { n } else { n.saturating_sub(span) };
    let mut terms = Vec::with_capacity(count);
    for j in 0..count {
        let sites: Vec<(usize, Pauli)> = pattern.iter().map(|&(o, p)| ((j + o) % n, p)).collect();
        terms.push(PauliString::from_sites(n, &sites, C64::new(coeff, 0.0)));
    }
    OperatorSum::from_paulis(n, terms).simplify()
}

/// Parses a contiguous label such as `"ZIZ"` into a translated open-chain sum.
pub fn translated_label(n: usize, label: &str, coeff: f64, periodic: bool) -> Result<OperatorSum> {
    let pattern: Vec<(usize, Pauli)> = label
        .chars()
        .enumerate()
        .map(|(k, c)| Pauli::from_char(c).map(|p| (k, p)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, p)| *p != Pauli::I)
        .collect();
    if label.len() > n {
        return Err(Error::DimensionMismatch { expected: n, found: label.len() });
    }
    Ok(translated_sum(n, &pattern, coeff, periodic))
}
