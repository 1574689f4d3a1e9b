//! Staircase circuits of one repeated two-qubit gate, evaluated either as a
//! full statevector or by sweeping a 2×2 operator from the right end of the
//! chain through the averaged measure-and-reset channel.

use nalgebra::{Matrix2, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, CMatrix, CVector, C64, ONE, ZERO};
use crate::opalg::{Pauli, PauliString, QuantumState, Sector};
use crate::optim::{bfgs_fd, BfgsOptions};

pub type Op2 = Matrix2<C64>;
pub type Op4 = Matrix4<C64>;

pub const GATE_PARAMS: usize = 15;
pub const DEFAULT_STARTS: usize = 32;

fn pauli2(p: Pauli) -> Op2 {
    let m = p.matrix();
    Op2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

/// `a ⊗ b` with `a` on the left (more significant) qubit.
pub fn kron2(a: &Op2, b: &Op2) -> Op4 {
    Op4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// Traces out the right qubit of `a (I ⊗ ρ)`.
fn trace_right(a: &Op4, rho: &Op2) -> Op2 {
    Op2::from_fn(|i, k| {
        let mut s = ZERO;
        for j in 0..2 {
            for l in 0..2 {
                s += a[(2 * i + j, 2 * k + l)] * rho[(l, j)];
            }
        }
        s
    })
}

/// Two-qubit gate `exp(-i G)` with `G = Σ θ_ab σ^a⊗σ^b + Σ θ¹_a σ^a⊗I + Σ θ²_a I⊗σ^a`.
/// Parameter order: xx, xy, xz, yx, yy, yz, zx, zy, zz, then x, y, z on the
/// first qubit and x, y, z on the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TwoQubitGate {
    pub thetas: [f64; GATE_PARAMS],
}

const AXES: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

fn basis_element(k: usize) -> Op4 {
    let id = Op2::identity();
    match k {
        0..=8 => kron2(&pauli2(AXES[k / 3]), &pauli2(AXES[k % 3])),
        9..=11 => kron2(&pauli2(AXES[k - 9]), &id),
        _ => kron2(&id, &pauli2(AXES[k - 12])),
    }
}

impl TwoQubitGate {
    pub fn new(thetas: [f64; GATE_PARAMS]) -> Self {
        Self { thetas }
    }

    pub fn identity() -> Self {
        Self { thetas: [0.0; GATE_PARAMS] }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let thetas: [f64; GATE_PARAMS] = x.try_into().map_err(|_| Error::DimensionMismatch { expected: GATE_PARAMS, found: x.len() })?;
        Ok(Self { thetas })
    }

    pub fn generator(&self) -> Op4 {
        let mut g = Op4::zeros();
        for (k, &t) in self.thetas.iter().enumerate() {
            if t != 0.0 {
                g += basis_element(k) * C64::new(t, 0.0);
            }
        }
        g
    }

    pub fn matrix(&self) -> Op4 {
        let g = self.generator();
        let es = eigh(&CMatrix::from_fn(4, 4, |r, c| g[(r, c)]));
        let v = &es.vectors;
        let phases: Vec<C64> = es.values.iter().map(|e| C64::new(0.0, -e).exp()).collect();
        Op4::from_fn(|r, c| (0..4).map(|k| v[(r, k)] * phases[k] * v[(c, k)].conj()).sum())
    }

    /// Parameters of a unitary up to a global phase, from the principal logarithm.
    pub fn from_unitary(u: &Op4) -> Self {
        // a generic real mix of the commuting Hermitian parts shares U's eigenvectors
        let herm = (u + u.adjoint()) * C64::new(0.5, 0.0);
        let anti = (u - u.adjoint()) * C64::new(0.0, -0.5);
        let k = herm * C64::new(0.713_205_1, 0.0) + anti * C64::new(0.291_731_7, 0.0);
        let es = eigh(&CMatrix::from_fn(4, 4, |r, c| k[(r, c)]));
        let v = &es.vectors;
        let mut g = Op4::zeros();
        for j in 0..4 {
            let col = Op4::from_fn(|r, c| if c == 0 { v[(r, j)] } else { ZERO });
            let phase = (0..4).map(|r| (0..4).map(|c| v[(r, j)].conj() * u[(r, c)] * v[(c, j)]).sum::<C64>()).sum::<C64>().arg();
            let proj = col * col.adjoint();
            g += proj * C64::new(-phase, 0.0);
        }
        let mut thetas = [0.0; GATE_PARAMS];
        for (k, t) in thetas.iter_mut().enumerate() {
            *t = (basis_element(k) * g).trace().re / 4.0;
        }
        Self { thetas }
    }
}

/// `|0…0⟩`, Hadamard on the first site, then the gate on (1,2), (2,3), …, (N-1,N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaircaseCircuit {
    pub gate: TwoQubitGate,
    pub sites: usize,
}

/// Largest chain for the statevector oracle.
pub const STATEVECTOR_LIMIT: usize = 24;

impl StaircaseCircuit {
    pub fn new(gate: TwoQubitGate, sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidInput(format!("staircase needs at least 2 sites, got {sites}")));
        }
        Ok(Self { gate, sites })
    }

    pub fn statevector(&self) -> Result<QuantumState> {
        let n = self.sites;
        if n > STATEVECTOR_LIMIT {
            return Err(Error::DimensionCap { dim: 1 << n, cap: 1 << STATEVECTOR_LIMIT });
        }
        let u = self.gate.matrix();
        let mut psi = CVector::zeros(1 << n);
        // site 0 is the most significant bit
        let s = std::f64::consts::FRAC_1_SQRT_2;
        psi[0] = C64::new(s, 0.0);
        psi[1 << (n - 1)] = C64::new(s, 0.0);
        for j in 0..n - 1 {
            apply_pair(&mut psi, &u, n, j);
        }
        QuantumState::new(Sector::spin(n), psi)
    }

    fn first_state() -> Op2 {
        Op2::from_element(C64::new(0.5, 0.0))
    }

    fn reset_state() -> Op2 {
        Op2::new(ONE, ZERO, ZERO, ZERO)
    }

    /// `⟨P⟩` by the right-to-left channel sweep; O(N) time and O(1) memory.
    pub fn pauli_expectation(&self, p: &PauliString) -> Result<f64> {
        if p.len() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, found: p.len() });
        }
        let letters = p.letters();
        let n = self.sites;
        let u = self.gate.matrix();
        let ud = u.adjoint();
        let mut carried = pauli2(letters[n - 1]);
        for j in (0..n - 1).rev() {
            let x = kron2(&pauli2(letters[j]), &carried);
            carried = trace_right(&(ud * x * u), &Self::reset_state());
        }
        Ok((p.coeff * (carried * Self::first_state()).trace()).re)
    }

    /// `⟨W⟩` for a uniform MPO by one sweep carrying a χ-vector of 2×2 blocks.
    pub fn mpo_expectation(&self, mpo: &Mpo) -> Result<f64> {
        if mpo.sites != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, found: mpo.sites });
        }
        let n = self.sites;
        let chi = mpo.bond_dim();
        let u = self.gate.matrix();
        let ud = u.adjoint();
        let rho = Self::reset_state();
        // carried[a]: reduced operator on the open site for left bond index a
        let mut carried: Vec<Op2> = (0..chi).map(|a| mpo.last.get(a, 0)).collect();
        for j in (0..n - 1).rev() {
            let tensor = if j == 0 { &mpo.first } else { &mpo.bulk };
            let mut next = Vec::with_capacity(tensor.rows);
            for a in 0..tensor.rows {
                let mut x = Op4::zeros();
                for (b, c) in carried.iter().enumerate() {
                    let w = tensor.get(a, b);
                    if w != Op2::zeros() {
                        x += kron2(&w, c);
                    }
                }
                next.push(trace_right(&(ud * x * u), &rho));
            }
            carried = next;
        }
        Ok((carried[0] * Self::first_state()).trace().re)
    }
}

fn apply_pair(psi: &mut CVector, u: &Op4, n: usize, j: usize) {
    let hi = 1usize << (n - 1 - j);
    let lo = 1usize << (n - 2 - j);
    for base in 0..psi.len() {
        if base & (hi | lo) != 0 {
            continue;
        }
        let idx = [base, base | lo, base | hi, base | hi | lo];
        let amps = [psi[idx[0]], psi[idx[1]], psi[idx[2]], psi[idx[3]]];
        for r in 0..4 {
            // row r = 2·left + right; idx ordered 00, 01, 10, 11
            psi[idx[r]] = (0..4).map(|c| u[(r, c)] * amps[c]).sum();
        }
    }
}

/// Block matrix of 2×2 single-site operators.
#[derive(Debug, Clone, PartialEq)]
pub struct MpoTensor {
    pub rows: usize,
    pub cols: usize,
    pub blocks: Vec<Op2>,
}

impl MpoTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, blocks: vec![Op2::zeros(); rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> Op2 {
        self.blocks[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, op: Op2) {
        self.blocks[r * self.cols + c] = op;
    }
}

/// Translation-invariant MPO `W_first · W_bulk^{N-2} · W_last`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mpo {
    pub first: MpoTensor,
    pub bulk: MpoTensor,
    pub last: MpoTensor,
    pub sites: usize,
}

impl Mpo {
    pub fn new(first: MpoTensor, bulk: MpoTensor, last: MpoTensor, sites: usize) -> Result<Self> {
        let chi = bulk.rows;
        let ok = first.rows == 1 && first.cols == chi && bulk.cols == chi && last.rows == chi && last.cols == 1;
        if !ok {
            return Err(Error::DimensionMismatch { expected: chi, found: first.cols.max(last.rows) });
        }
        if sites < 2 {
            return Err(Error::InvalidInput("an MPO needs at least 2 sites".into()));
        }
        Ok(Self { first, bulk, last, sites })
    }

    pub fn bond_dim(&self) -> usize {
        self.bulk.rows
    }

    /// Bond-dimension-1 MPO of `coeff · P^{⊗N}`.
    pub fn uniform_string(p: Pauli, coeff: f64, sites: usize) -> Result<Self> {
        let one = |op: Op2| MpoTensor { rows: 1, cols: 1, blocks: vec![op] };
        Self::new(one(pauli2(p) * C64::new(coeff, 0.0)), one(pauli2(p)), one(pauli2(p)), sites)
    }

    /// Block-diagonal sum of two MPOs on the same chain.
    pub fn sum(&self, other: &Mpo) -> Result<Mpo> {
        if self.sites != other.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, found: other.sites });
        }
        let (a, b) = (self.bond_dim(), other.bond_dim());
        let mut first = MpoTensor::zeros(1, a + b);
        let mut bulk = MpoTensor::zeros(a + b, a + b);
        let mut last = MpoTensor::zeros(a + b, 1);
        for i in 0..a {
            first.set(0, i, self.first.get(0, i));
            last.set(i, 0, self.last.get(i, 0));
            for j in 0..a {
                bulk.set(i, j, self.bulk.get(i, j));
            }
        }
        for i in 0..b {
            first.set(0, a + i, other.first.get(0, i));
            last.set(a + i, 0, other.last.get(i, 0));
            for j in 0..b {
                bulk.set(a + i, a + j, other.bulk.get(i, j));
            }
        }
        Mpo::new(first, bulk, last, self.sites)
    }

    /// Dense `2^N × 2^N` matrix, site 0 most significant.
    pub fn to_dense(&self) -> CMatrix {
        let chi = self.bond_dim();
        let lift = |op: &Op2| CMatrix::from_fn(2, 2, |r, c| op[(r, c)]);
        // row vector of operators accumulated from the left
        let mut acc: Vec<CMatrix> = (0..chi).map(|b| lift(&self.first.get(0, b))).collect();
        for site in 1..self.sites {
            let tensor = if site == self.sites - 1 { &self.last } else { &self.bulk };
            let dim = acc[0].nrows() * 2;
            let mut next = vec![CMatrix::zeros(dim, dim); tensor.cols];
            for (a, left) in acc.iter().enumerate() {
                for b in 0..tensor.cols {
                    let w = tensor.get(a, b);
                    if w != Op2::zeros() {
                        next[b] += left.kronecker(&lift(&w));
                    }
                }
            }
            acc = next;
        }
        acc.swap_remove(0)
    }
}

/// Cluster-Ising Hamiltonian as a χ = 4 MPO. Bond states: idle, after a `Z`,
/// after `Z X`, done.
pub fn cim_mpo(g: f64, sites: usize) -> Result<Mpo> {
    if sites < 4 {
        return Err(Error::InvalidInput(format!("chain needs at least 4 sites, got {sites}")));
    }
    let id = Op2::identity();
    let (x, z) = (pauli2(Pauli::X), pauli2(Pauli::Z));
    let cluster = C64::new(-(1.0 - g) / 2.0, 0.0);
    let ising = C64::new(-(1.0 + g) / 2.0, 0.0);
    let mut bulk = MpoTensor::zeros(4, 4);
    bulk.set(0, 0, id);
    bulk.set(0, 1, z);
    bulk.set(1, 2, x * cluster);
    bulk.set(1, 3, z * ising);
    bulk.set(2, 3, z);
    bulk.set(3, 3, id);
    let mut first = MpoTensor::zeros(1, 4);
    first.set(0, 0, id);
    first.set(0, 1, z);
    first.set(0, 2, x * cluster);
    let mut last = MpoTensor::zeros(4, 1);
    last.set(1, 0, z * ising + x * cluster);
    last.set(2, 0, z);
    last.set(3, 0, id);
    Mpo::new(first, bulk, last, sites)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityFit {
    pub gate: TwoQubitGate,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FidelityOptions {
    pub starts: usize,
    pub seed: u64,
    pub fd_step: f64,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        Self { starts: DEFAULT_STARTS, seed: 0, fd_step: 1e-6 }
    }
}

/// Maximises `|⟨target|ψ(θ)⟩|²` for each target by multi-start quasi-Newton descent.
pub fn fidelity_optimize(targets: &[QuantumState], opts: &FidelityOptions) -> Result<Vec<FidelityFit>> {
    targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let n = target.sector.sites();
            if target.sector != Sector::spin(n) {
                return Err(Error::InvalidInput("targets must live in the full spin space".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let infidelity = |x: &[f64]| -> f64 {
                let gate = TwoQubitGate::from_slice(x).expect("15 parameters");
                let psi = StaircaseCircuit { gate, sites: n }.statevector().expect("size checked");
                1.0 - psi.fidelity(target)
            };
            let bfgs_opts = BfgsOptions { grad_tol: 1e-9, max_iter: 500, ..Default::default() };
            let mut best: Option<FidelityFit> = None;
            for _ in 0..opts.starts.max(1) {
                let x0: Vec<f64> = (0..GATE_PARAMS).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
                let res = bfgs_fd(infidelity, &x0, opts.fd_step, &bfgs_opts);
                let fit = FidelityFit { gate: TwoQubitGate::from_slice(&res.x)?, fidelity: 1.0 - res.value };
                if best.as_ref().is_none_or(|b| fit.fidelity > b.fidelity) {
                    best = Some(fit);
                }
            }
            Ok(best.expect("at least one start"))
        })
        .collect()
}

#[cfg(test)]
mod tests;
