use serde::{Deserialize, Serialize};

use super::sector::{build_matrix, Sector};
use super::sum::OperatorSum;
use crate::error::{Error, Result};
use crate::linalg::{inner, norm, CVector, SparseMatrix, C64};

/// Pure state over the basis of a sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    pub sector: Sector,
    pub amplitudes: CVector,
}

impl QuantumState {
    pub fn new(sector: Sector, amplitudes: CVector) -> Result<Self> {
        let dim = sector.dim();
        if amplitudes.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: amplitudes.len() });
        }
        Ok(Self { sector, amplitudes })
    }

    /// Computational basis state with the given basis key.
    pub fn basis_state(sector: Sector, key: u64) -> Result<Self> {
        let basis = sector.basis();
        let idx = basis
            .index_of(key)
            .ok_or(Error::IndexOutOfRange { index: key as usize, limit: basis.len() })?;
        let mut amps = CVector::zeros(basis.len());
        amps[idx] = C64::new(1.0, 0.0);
        Ok(Self { sector, amplitudes: amps })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    pub fn overlap(&self, other: &QuantumState) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    /// `|⟨a|b⟩|²`.
    pub fn fidelity(&self, other: &QuantumState) -> f64 {
        self.overlap(other).norm_sqr()
    }

    /// Re-expresses the state in a larger sector containing this one.
    pub fn embed(&self, target: &Sector) -> Result<QuantumState> {
        let from = self.sector.basis();
        let to = target.basis();
        let mut amps = CVector::zeros(to.len());
        for (i, key) in from.keys().enumerate() {
            let j = to
                .index_of(key)
                .ok_or(Error::InvalidInput("target sector does not contain the state".into()))?;
            amps[j] = self.amplitudes[i];
        }
        Ok(QuantumState { sector: target.clone(), amplitudes: amps })
    }
}

/// Density operator stored through its eigen-decomposition `Σ p_α |ψ_α⟩⟨ψ_α|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedState {
    pub sector: Sector,
    pub weights: Vec<f64>,
    pub vectors: Vec<CVector>,
}

impl MixedState {
    pub fn new(sector: Sector, weights: Vec<f64>, vectors: Vec<CVector>) -> Result<Self> {
        if weights.len() != vectors.len() {
            return Err(Error::DimensionMismatch { expected: weights.len(), found: vectors.len() });
        }
        if weights.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput("negative or non-finite weight".into()));
        }
        Ok(Self { sector, weights, vectors })
    }

    pub fn pure(state: &QuantumState) -> Self {
        Self { sector: state.sector.clone(), weights: vec![1.0], vectors: vec![state.amplitudes.clone()] }
    }

    /// `Tr ρ² = Σ p²`, using orthonormality of the stored eigenvectors.
    pub fn purity(&self) -> f64 {
        self.weights.iter().map(|p| p * p).sum()
    }

    /// Largest deviation of the eigenvector Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.vectors.len();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((inner(&self.vectors[a], &self.vectors[b]) - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Drops components with `p ≤ min_weight` and stops once the retained mass
    /// reaches `1 - mass_tol`; the kept weights are renormalised.
    pub fn truncate(&self, min_weight: f64, mass_tol: f64) -> MixedState {
        let mut order: Vec<usize> = (0..self.weights.len()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        let total: f64 = self.weights.iter().sum();
        let mut kept = Vec::new();
        let mut mass = 0.0;
        for &k in &order {
            if self.weights[k] <= min_weight || mass >= (1.0 - mass_tol) * total {
                break;
            }
            mass += self.weights[k];
            kept.push(k);
        }
        kept.sort_unstable();
        MixedState {
            sector: self.sector.clone(),
            weights: kept.iter().map(|&k| self.weights[k] / mass).collect(),
            vectors: kept.iter().map(|&k| self.vectors[k].clone()).collect(),
        }
    }

    /// Dense density matrix.
    pub fn density_matrix(&self) -> crate::linalg::CMatrix {
        let dim = self.vectors.first().map_or(0, |v| v.len());
        let mut rho = crate::linalg::CMatrix::zeros(dim, dim);
        for (p, v) in self.weights.iter().zip(&self.vectors) {
            rho += v * v.adjoint() * C64::new(*p, 0.0);
        }
        rho
    }
}

/// A state usable in expectation values: a list of weighted pure components.
pub trait Ensemble {
    fn sector(&self) -> &Sector;
    fn components(&self) -> Vec<(f64, &CVector)>;
}

impl Ensemble for QuantumState {
    fn sector(&self) -> &Sector {
        &self.sector
    }
    fn components(&self) -> Vec<(f64, &CVector)> {
        vec![(1.0, &self.amplitudes)]
    }
}

impl Ensemble for MixedState {
    fn sector(&self) -> &Sector {
        &self.sector
    }
    fn components(&self) -> Vec<(f64, &CVector)> {
        self.weights.iter().copied().zip(self.vectors.iter()).collect()
    }
}

pub fn expectation<S: Ensemble + ?Sized>(state: &S, op: &OperatorSum) -> Result<C64> {
    let m = build_matrix(op, state.sector())?;
    expectation_matrix(state, &m)
}

pub fn expectation_matrix<S: Ensemble + ?Sized>(state: &S, m: &SparseMatrix) -> Result<C64> {
    let mut total = C64::new(0.0, 0.0);
    for (p, v) in state.components() {
        if v.len() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.ncols(), found: v.len() });
        }
        total += m.quadratic(v) * p;
    }
    Ok(total)
}

/// `⟨H²⟩ - ⟨H⟩²` for a Hermitian matrix.
pub fn variance_matrix<S: Ensemble + ?Sized>(state: &S, m: &SparseMatrix) -> Result<f64> {
    let mut second = 0.0;
    let mut first = 0.0;
    for (p, v) in state.components() {
        if v.len() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.ncols(), found: v.len() });
        }
        let hv = m.mul_vec(v);
        second += p * hv.iter().map(|z| z.norm_sqr()).sum::<f64>();
        first += p * inner(v, &hv).re;
    }
    Ok(second - first * first)
}
