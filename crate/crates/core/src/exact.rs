//! Exact-diagonalisation services: ground states, thermal states, Kubo response,
//! dynamical structure factors and time-ordered sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, fix_phase, inner, krylov_expm, lanczos_ground, norm, CVector, EigenSystem, SparseMatrix, C64, ONE, ZERO};
use crate::opalg::{build_matrix, MixedState, OperatorSum, Pauli, PauliString, QuantumState, Sector};

/// Largest block handed to the dense eigensolver.
pub const DENSE_LIMIT: usize = 4096;
/// Default cap on the dimension for full diagonalisation.
pub const DEFAULT_CAP: usize = 4096;
pub const DEGENERACY_TOL: f64 = 1e-10;
pub const DEFAULT_BROADENING: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundState {
    pub energy: f64,
    pub state: QuantumState,
    /// Distance to the next level; `f64::INFINITY` for one-dimensional spaces.
    pub gap: f64,
    pub degenerate: bool,
}

/// Lowest eigenpairs in ascending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSlice {
    pub energies: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub count: usize,
}

impl SpectrumSlice {
    pub fn to_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,energy")?;
        for (k, e) in self.energies.iter().enumerate() {
            writeln!(w, "{k},{e:.15e}")?;
        }
        Ok(())
    }
}

/// Complex response on a real frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Susceptibility {
    pub frequencies: Vec<f64>,
    pub values: Vec<C64>,
    pub broadening: f64,
}

impl Susceptibility {
    pub fn to_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "omega,re,im")?;
        for (om, v) in self.frequencies.iter().zip(&self.values) {
            writeln!(w, "{om:.16e},{:.16e},{:.16e}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Susceptibility) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Frequencies of local maxima of `-Im χ` above `threshold`.
    pub fn peaks(&self, threshold: f64) -> Vec<f64> {
        let y: Vec<f64> = self.values.iter().map(|v| -v.im).collect();
        (1..y.len().saturating_sub(1))
            .filter(|&k| y[k] > threshold && y[k] >= y[k - 1] && y[k] > y[k + 1])
            .map(|k| self.frequencies[k])
            .collect()
    }
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn frequency_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Eigen-decomposition of a block-diagonal sparse matrix, one dense solve per block.
#[derive(Debug, Clone)]
pub struct BlockSpectrum {
    dim: usize,
    blocks: Vec<(Vec<usize>, EigenSystem)>,
}

impl BlockSpectrum {
    /// Diagonalises every block of `m`, or only those listed in `only` when given.
    pub fn new(m: &SparseMatrix, cap: usize, only: Option<&[usize]>) -> Result<Self> {
        let mut blocks = m.blocks();
        if let Some(keep) = only {
            let mut wanted = vec![false; m.nrows()];
            keep.iter().for_each(|&i| wanted[i] = true);
            blocks.retain(|b| b.iter().any(|&i| wanted[i]));
        }
        let total: usize = blocks.iter().map(|b| b.len()).sum();
        if total > cap {
            return Err(Error::DimensionCap { dim: total, cap });
        }
        let blocks = blocks
            .into_iter()
            .map(|idx| {
                let es = eigh(&m.restrict(&idx));
                (idx, es)
            })
            .collect();
        Ok(Self { dim: m.nrows(), blocks })
    }

    /// All eigenpairs `(energy, full-length vector)` in ascending energy order.
    pub fn eigenpairs(&self) -> Vec<(f64, CVector)> {
        let mut out = Vec::new();
        for (idx, es) in &self.blocks {
            for k in 0..es.dim() {
                out.push((es.values[k], self.lift(idx, es, k)));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    fn lift(&self, idx: &[usize], es: &EigenSystem, k: usize) -> CVector {
        let mut v = CVector::zeros(self.dim);
        for (r, &i) in idx.iter().enumerate() {
            v[i] = es.vectors[(r, k)];
        }
        v
    }

    /// Energies with the projections `⟨n|x_j⟩` of the supplied vectors, block by block.
    pub fn projections(&self, xs: &[&CVector]) -> Vec<(f64, Vec<C64>)> {
        let mut out = Vec::new();
        for (idx, es) in &self.blocks {
            let restricted: Vec<CVector> =
                xs.iter().map(|x| CVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i]))).collect();
            for k in 0..es.dim() {
                let col = es.vectors.column(k);
                let proj = restricted
                    .iter()
                    .map(|x| col.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum())
                    .collect();
                out.push((es.values[k], proj));
            }
        }
        out
    }
}

pub fn ground_state(h: &OperatorSum, sector: &Sector) -> Result<GroundState> {
    let m = build_matrix(h, sector)?;
    ground_state_matrix(&m, sector)
}

/// Ground state of an assembled Hamiltonian. Blocks up to [`DENSE_LIMIT`] are
/// diagonalised densely; larger connected blocks fall back to Lanczos.
pub fn ground_state_matrix(m: &SparseMatrix, sector: &Sector) -> Result<GroundState> {
    if m.nrows() == 0 {
        return Err(Error::InvalidInput("sector is empty".into()));
    }
    let blocks = m.blocks();
    let largest = blocks.iter().map(|b| b.len()).max().unwrap_or(0);
    let (energy, gap, mut vec) = if largest <= DENSE_LIMIT {
        let mut levels: Vec<(f64, usize, usize)> = Vec::new();
        let mut systems = Vec::with_capacity(blocks.len());
        for (b, idx) in blocks.iter().enumerate() {
            let es = eigh(&m.restrict(idx));
            for k in 0..es.dim().min(2) {
                levels.push((es.values[k], b, k));
            }
            systems.push(es);
        }
        // stable sort keeps the lowest-index block first among exact ties
        levels.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (e0, b0, k0) = levels[0];
        let gap = levels.get(1).map_or(f64::INFINITY, |l| l.0 - e0);
        let mut v = CVector::zeros(m.nrows());
        for (r, &i) in blocks[b0].iter().enumerate() {
            v[i] = systems[b0].vectors[(r, k0)];
        }
        (e0, gap, v)
    } else {
        let (e0, e1, v) = lanczos_ground(m, 1e-10, 200)?;
        (e0, e1 - e0, v)
    };
    fix_phase(&mut vec);
    Ok(GroundState {
        energy,
        state: QuantumState { sector: sector.clone(), amplitudes: vec },
        gap,
        degenerate: gap < DEGENERACY_TOL,
    })
}

/// Lowest `count` eigenpairs by full diagonalisation.
pub fn low_spectrum(h: &OperatorSum, sector: &Sector, count: usize) -> Result<SpectrumSlice> {
    let m = build_matrix(h, sector)?;
    let spec = BlockSpectrum::new(&m, DEFAULT_CAP, None)?;
    let pairs = spec.eigenpairs();
    let take = count.min(pairs.len());
    let mut energies = Vec::with_capacity(take);
    let mut states = Vec::with_capacity(take);
    for (e, mut v) in pairs.into_iter().take(take) {
        fix_phase(&mut v);
        energies.push(e);
        states.push(QuantumState { sector: sector.clone(), amplitudes: v });
    }
    Ok(SpectrumSlice { energies, states, count })
}

pub fn gibbs_state(h: &OperatorSum, temperature: f64, sector: &Sector) -> Result<MixedState> {
    gibbs_state_with_cap(h, temperature, sector, DEFAULT_CAP)
}

/// Thermal state `p_α ∝ exp(-E_α/T)` from full diagonalisation.
pub fn gibbs_state_with_cap(h: &OperatorSum, temperature: f64, sector: &Sector, cap: usize) -> Result<MixedState> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let m = build_matrix(h, sector)?;
    if m.nrows() > cap {
        return Err(Error::DimensionCap { dim: m.nrows(), cap });
    }
    let pairs = BlockSpectrum::new(&m, cap, None)?.eigenpairs();
    let e0 = pairs[0].0;
    let boltz: Vec<f64> = pairs.iter().map(|(e, _)| (-(e - e0) / temperature).exp()).collect();
    let z: f64 = boltz.iter().sum();
    let weights = boltz.iter().map(|b| b / z).collect();
    let vectors = pairs.into_iter().map(|(_, v)| v).collect();
    MixedState::new(sector.clone(), weights, vectors)
}

/// Lehmann representation of a response function: poles and residues of
/// `Σ_n a_n/(z - Δ_n) - b_n/(z + Δ_n)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lehmann {
    /// `(Δ_n, ⟨0|O|n⟩⟨n|V|0⟩)`.
    pub forward: Vec<(f64, C64)>,
    /// `(Δ_n, ⟨0|V|n⟩⟨n|O|0⟩)`.
    pub backward: Vec<(f64, C64)>,
}

impl Lehmann {
    pub fn evaluate(&self, omega: f64, delta: f64) -> C64 {
        let z = C64::new(omega, delta);
        let mut total = ZERO;
        for &(d, a) in &self.forward {
            total += a / (z - d);
        }
        for &(d, b) in &self.backward {
            total -= b / (z + d);
        }
        total
    }

    pub fn on_grid(&self, grid: &[f64], delta: f64) -> Susceptibility {
        Susceptibility {
            frequencies: grid.to_vec(),
            values: grid.iter().map(|&w| self.evaluate(w, delta)).collect(),
            broadening: delta,
        }
    }

    /// Positive-frequency poles with residue weight above `min_weight`, as `(Δ_n, Re a_n)`.
    pub fn peak_list(&self, min_weight: f64) -> Vec<(f64, f64)> {
        self.forward
            .iter()
            .filter(|(d, a)| *d > 1e-9 && a.re.abs() > min_weight)
            .map(|&(d, a)| (d, a.re))
            .collect()
    }
}

/// Poles and residues entering the Kubo formula for drive `V` and probe `O`.
pub fn kubo_lehmann(h: &OperatorSum, ground: &QuantumState, v: &OperatorSum, o: &OperatorSum) -> Result<Lehmann> {
    let hm = build_matrix(h, &ground.sector)?;
    let vm = build_matrix(v, &ground.sector)?;
    let om = build_matrix(o, &ground.sector)?;
    kubo_lehmann_matrices(&hm, ground, &vm, &om)
}

pub fn kubo_lehmann_matrices(
    hm: &SparseMatrix,
    ground: &QuantumState,
    vm: &SparseMatrix,
    om: &SparseMatrix,
) -> Result<Lehmann> {
    let psi = &ground.amplitudes;
    if psi.len() != hm.nrows() {
        return Err(Error::DimensionMismatch { expected: hm.nrows(), found: psi.len() });
    }
    let e0 = hm.quadratic(psi).re;
    let v_psi = vm.mul_vec(psi);
    let vd_psi = vm.adjoint().mul_vec(psi);
    let o_psi = om.mul_vec(psi);
    let od_psi = om.adjoint().mul_vec(psi);
    let support: Vec<usize> = (0..psi.len())
        .filter(|&i| [&v_psi, &vd_psi, &o_psi, &od_psi].iter().any(|x| x[i].norm() > 0.0))
        .collect();
    let spec = BlockSpectrum::new(hm, DEFAULT_CAP, Some(&support))?;
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for (e, p) in spec.projections(&[&v_psi, &vd_psi, &o_psi, &od_psi]) {
        let d = e - e0;
        // ⟨0|O|n⟩ = conj⟨n|O†|0⟩ and ⟨0|V|n⟩ = conj⟨n|V†|0⟩
        let a = p[3].conj() * p[0];
        let b = p[1].conj() * p[2];
        if a != ZERO {
            forward.push((d, a));
        }
        if b != ZERO {
            backward.push((d, b));
        }
    }
    Ok(Lehmann { forward, backward })
}

pub fn kubo_susceptibility(
    h: &OperatorSum,
    ground: &QuantumState,
    v: &OperatorSum,
    o: &OperatorSum,
    grid: &[f64],
    delta: f64,
) -> Result<Susceptibility> {
    if delta <= 0.0 {
        return Err(Error::InvalidInput("broadening must be positive".into()));
    }
    Ok(kubo_lehmann(h, ground, v, o)?.on_grid(grid, delta))
}

/// `σ⁺_k = N^{-1/2} Σ_j e^{ikj} σ⁺_j` with `σ⁺ = (X + iY)/2` raising `|1⟩ → |0⟩`.
pub fn momentum_raising(n: usize, k: f64) -> OperatorSum {
    let norm = 1.0 / (n as f64).sqrt();
    let mut terms = Vec::with_capacity(2 * n);
    for j in 0..n {
        let phase = C64::from_polar(norm, k * j as f64);
        terms.push(PauliString::from_sites(n, &[(j, Pauli::X)], phase * 0.5));
        terms.push(PauliString::from_sites(n, &[(j, Pauli::Y)], phase * C64::new(0.0, 0.5)));
    }
    OperatorSum::from_paulis(n, terms)
}

/// `σᶻ_k = N^{-1/2} Σ_j e^{ikj} Z_j`.
pub fn momentum_z(n: usize, k: f64) -> OperatorSum {
    let norm = 1.0 / (n as f64).sqrt();
    let terms = (0..n)
        .map(|j| PauliString::from_sites(n, &[(j, Pauli::Z)], C64::from_polar(norm, k * j as f64)))
        .collect();
    OperatorSum::from_paulis(n, terms)
}

/// Drive/probe pairing used for dynamical structure factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `V = σ⁺_k`, `O = σ⁻_k`.
    RaisingLowering,
    /// `V = O = σ⁺_k + σ⁻_k`.
    Symmetric,
}

impl Channel {
    pub fn operators(self, n: usize, k: f64) -> (OperatorSum, OperatorSum) {
        let up = momentum_raising(n, k);
        match self {
            Channel::RaisingLowering => {
                let down = up.adjoint();
                (up, down)
            }
            Channel::Symmetric => {
                let sym = (&up + &up.adjoint()).simplify();
                (sym.clone(), sym)
            }
        }
    }
}

/// Momenta `2πn/N`, `n = 0..N`.
pub fn momenta(n: usize) -> Vec<f64> {
    (0..n).map(|m| 2.0 * std::f64::consts::PI * m as f64 / n as f64).collect()
}

/// Per-momentum Kubo response of a spin chain.
pub fn structure_factor(
    h: &OperatorSum,
    ground: &QuantumState,
    ks: &[f64],
    grid: &[f64],
    delta: f64,
    channel: Channel,
) -> Result<Vec<(f64, Susceptibility)>> {
    let n = h.site_count();
    let hm = build_matrix(h, &ground.sector)?;
    ks.iter()
        .map(|&k| {
            let (v, o) = channel.operators(n, k);
            let vm = build_matrix(&v, &ground.sector)?;
            let om = build_matrix(&o, &ground.sector)?;
            let l = kubo_lehmann_matrices(&hm, ground, &vm, &om)?;
            Ok((k, l.on_grid(grid, delta)))
        })
        .collect()
}

/// Result of a time-ordered interpolation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub state: QuantumState,
    pub return_probability: Option<f64>,
}

/// Evolves `state` under `(1-τ)H_start + τH_end` for `τ = t/total_time`, using the
/// midpoint Hamiltonian of each step and its exact exponential.
pub fn adiabatic_unprepare(
    h_start: &OperatorSum,
    h_end: &OperatorSum,
    state: &QuantumState,
    total_time: f64,
    steps: usize,
    target: Option<&QuantumState>,
) -> Result<SweepResult> {
    if total_time <= 0.0 || steps == 0 {
        return Err(Error::InvalidInput("sweep needs positive time and at least one step".into()));
    }
    let a = build_matrix(h_start, &state.sector)?;
    let b = build_matrix(h_end, &state.sector)?;
    if a.nrows() > 1 << 20 {
        return Err(Error::DimensionCap { dim: a.nrows(), cap: 1 << 20 });
    }
    let dt = total_time / steps as f64;
    let mut psi = state.amplitudes.clone();
    for s in 0..steps {
        let tau = (s as f64 + 0.5) / steps as f64;
        let h = a.lin_comb(C64::new(1.0 - tau, 0.0), &b, C64::new(tau, 0.0));
        psi = evolve(&h, &psi, dt);
    }
    let state = QuantumState { sector: state.sector.clone(), amplitudes: psi };
    let return_probability = target.map(|t| t.fidelity(&state));
    Ok(SweepResult { state, return_probability })
}

/// `exp(-i dt H) ψ`; dense for small spaces, Krylov otherwise.
pub fn evolve(h: &SparseMatrix, psi: &CVector, dt: f64) -> CVector {
    if h.nrows() <= 64 {
        let es = eigh(&h.to_dense());
        es.apply_fn(psi, |e| C64::from_polar(1.0, -dt * e))
    } else {
        krylov_expm(h, psi, dt, 1e-14)
    }
}

/// `|⟨a|b⟩|²` between pure states.
pub fn fidelity(a: &QuantumState, b: &QuantumState) -> f64 {
    a.fidelity(b)
}

/// `⟨ψ|ρ|ψ⟩` for a mixed state and a pure reference.
pub fn mixed_fidelity(rho: &MixedState, psi: &QuantumState) -> f64 {
    rho.weights.iter().zip(&rho.vectors).map(|(p, v)| p * inner(v, &psi.amplitudes).norm_sqr()).sum()
}

/// `‖Hψ - Eψ‖` with `E = ⟨ψ|H|ψ⟩`.
pub fn eigen_residual(h: &SparseMatrix, psi: &CVector) -> f64 {
    let hv = h.mul_vec(psi);
    let e = inner(psi, &hv);
    norm(&(hv - psi * e))
}

/// Identity helper for building `ONE`-weighted dense states in tests and runners.
pub fn unit(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = ONE;
    v
}
