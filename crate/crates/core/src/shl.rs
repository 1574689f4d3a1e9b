//! Spectral Hamiltonian learning.
//!
//! Linear response is computed in the tangent space of `e^{-iθ_n A_n}…e^{-iθ_1 A_1}|ψ₀⟩`
//! around an eigenstate `|ψ₀⟩` of `H₀`, where every tangent vector is `|u_i⟩ = A_i|ψ₀⟩`.
//! The variational susceptibility `χ(ω) = oᵀ(-iωM + K)⁻¹v` is then compared with a
//! target spectrum and the Hamiltonian parameters are tuned to minimise the mismatch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ground_state, momentum_raising, momentum_z, Lehmann, Susceptibility};
use crate::linalg::{eigh, eigh_real, inner, CMatrix, CVector, SparseMatrix, C64, I, ZERO};
use crate::opalg::models::translated_sum;
use crate::opalg::{build_matrix, OperatorSum, Pauli, PauliString, QuantumState, Sector};
use crate::optim::{bfgs_fd_observed, BfgsOptions};

/// Relative eigenvalue cutoff of the metric and of the frequency denominators.
pub const PINV_CUTOFF: f64 = 1e-10;
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const DEFAULT_VARIANCE_TOLERANCE: f64 = 1e-8;

/// Largest coefficient of `A - A†`.
pub fn hermiticity_error(op: &OperatorSum) -> f64 {
    (op - &op.adjoint()).simplify().max_coeff()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentAnsatz {
    pub labels: Vec<String>,
    pub generators: Vec<OperatorSum>,
}

impl TangentAnsatz {
    pub fn new(labels: Vec<String>, generators: Vec<OperatorSum>) -> Result<Self> {
        if labels.len() != generators.len() {
            return Err(Error::DimensionMismatch { expected: generators.len(), found: labels.len() });
        }
        for (i, g) in generators.iter().enumerate() {
            if hermiticity_error(g) > HERMITICITY_TOL {
                return Err(Error::NonHermitianPool(i));
            }
        }
        Ok(Self { labels, generators })
    }

    pub fn empty() -> Self {
        Self { labels: Vec::new(), generators: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Concatenation of two generator sets.
    pub fn join(&self, other: &TangentAnsatz) -> TangentAnsatz {
        let mut out = self.clone();
        out.labels.extend(other.labels.iter().cloned());
        out.generators.extend(other.generators.iter().cloned());
        out
    }

    /// Hermitian pair `B + B†`, `i(B - B†)` for a (generally non-Hermitian) excitation `B`.
    fn push_pair(&mut self, label: &str, b: &OperatorSum) {
        let bd = b.adjoint();
        self.labels.push(format!("{label}+h.c."));
        self.generators.push((b + &bd).simplify());
        self.labels.push(format!("i({label}-h.c.)"));
        self.generators.push((&(b - &bd) * I).simplify());
    }
}

/// `X_j`, `Y_j` on every site, in site-major order.
pub fn single_spin_generators(n: usize, letters: &[Pauli]) -> TangentAnsatz {
    let mut labels = Vec::new();
    let mut generators = Vec::new();
    for j in 0..n {
        for &p in letters {
            labels.push(format!("{}{}", p.to_char(), j));
            generators.push(OperatorSum::pauli(n, j, p));
        }
    }
    TangentAnsatz { labels, generators }
}

/// All `σ^a_i σ^b_j` with `i < j`.
pub fn pair_generators(n: usize) -> TangentAnsatz {
    let mut labels = Vec::new();
    let mut generators = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for a in [Pauli::X, Pauli::Y, Pauli::Z] {
                for b in [Pauli::X, Pauli::Y, Pauli::Z] {
                    labels.push(format!("{}{i}{}{j}", a.to_char(), b.to_char()));
                    generators.push(OperatorSum::from_paulis(n, vec![PauliString::from_sites(n, &[(i, a), (j, b)], C64::new(1.0, 0.0))]));
                }
            }
        }
    }
    TangentAnsatz { labels, generators }
}

/// Number of spin flips dressed by `σᶻ` factors in a momentum-resolved ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationLevel {
    /// `σ⁺_k`.
    One,
    /// Adds `σᶻ_{k'} σ⁺_{k-k'}`.
    Two,
    /// Adds `σᶻ_{k'} σᶻ_{k''} σ⁺_{k-k'-k''}` with `k' ≤ k''`.
    Three,
}

/// Hermitian generators carrying total momentum `k` on a periodic chain of `n` sites.
/// Each excitation `B` contributes the pair `B + B†`, `i(B - B†)`.
pub fn momentum_ansatz(n: usize, k: f64, level: ExcitationLevel) -> TangentAnsatz {
    let q = |m: usize| 2.0 * std::f64::consts::PI * m as f64 / n as f64;
    let mut ansatz = TangentAnsatz::empty();
    ansatz.push_pair(&format!("S+({k:.4})"), &momentum_raising(n, k));
    if level >= ExcitationLevel::Two {
        for m in 0..n {
            let b = momentum_z(n, q(m)).product(&momentum_raising(n, k - q(m)));
            ansatz.push_pair(&format!("Z({m})S+"), &b);
        }
    }
    if level >= ExcitationLevel::Three {
        for m1 in 0..n {
            let z1 = momentum_z(n, q(m1));
            for m2 in m1..n {
                let zz = z1.product(&momentum_z(n, q(m2)));
                let b = zz.product(&momentum_raising(n, k - q(m1) - q(m2)));
                ansatz.push_pair(&format!("Z({m1})Z({m2})S+"), &b);
            }
        }
    }
    ansatz
}

/// `B_z(Z₁+Z₂) - J_I Z₁Z₂ - J_H σ₁·σ₂`.
pub fn two_spin_model(bz: f64, j_ising: f64, j_heis: f64) -> OperatorSum {
    let mut h = &translated_sum(2, &[(0, Pauli::Z)], bz, false) + &translated_sum(2, &[(0, Pauli::Z), (1, Pauli::Z)], -j_ising, false);
    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
        h = &h + &translated_sum(2, &[(0, p), (1, p)], -j_heis, false);
    }
    h.simplify()
}

/// Three spins on a triangle with exchange `J_H` and scalar chirality `J_RE Σ ε_abc σ^a σ^b σ^c`.
pub fn ring_exchange_model(bz: f64, j_heis: f64, j_ring: f64) -> OperatorSum {
    let mut h = translated_sum(3, &[(0, Pauli::Z)], bz, true);
    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
        h = &h + &translated_sum(3, &[(0, p), (1, p)], -j_heis, true);
    }
    let axes = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut chiral = Vec::new();
    for (a, b, c, sign) in [(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0), (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0)] {
        chiral.push(PauliString::from_sites(3, &[(0, axes[a]), (1, axes[b]), (2, axes[c])], C64::new(sign * j_ring, 0.0)));
    }
    (&h + &OperatorSum::from_paulis(3, chiral)).simplify()
}

/// `H = B_z Σ Z_j - J Σ σ_j·σ_{j+1}` on a periodic chain.
pub fn heisenberg_chain(n: usize, bz: f64, j: f64) -> OperatorSum {
    let mut h = translated_sum(n, &[(0, Pauli::Z)], bz, true);
    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
        h = &h + &translated_sum(n, &[(0, p), (1, p)], -j, true);
    }
    h.simplify()
}

/// Magnon energy `2B_z + 4J(1 - cos k)` above the polarised state.
pub fn magnon_dispersion(bz: f64, j: f64, k: f64) -> f64 {
    2.0 * bz + 4.0 * j * (1.0 - k.cos())
}

/// Lower and upper edges `(-2πJ|sin k|, -4πJ|sin(k/2)|)` of the two-spinon continuum.
pub fn spinon_bounds(j: f64, k: f64) -> (f64, f64) {
    let pi = std::f64::consts::PI;
    (-2.0 * pi * j * k.sin().abs(), -4.0 * pi * j * (k / 2.0).sin().abs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseProblem {
    pub h0: OperatorSum,
    /// Must live in a sector on which the drive and probe act.
    pub ground: QuantumState,
    pub drive: OperatorSum,
    pub probe: OperatorSum,
    pub ansatz: TangentAnsatz,
    pub grid: Vec<f64>,
    pub delta: f64,
    /// Largest accepted energy variance of `ground`.
    pub variance_tolerance: f64,
}

impl ResponseProblem {
    pub fn new(h0: OperatorSum, ground: QuantumState, drive: OperatorSum, probe: OperatorSum, ansatz: TangentAnsatz) -> Self {
        Self {
            h0,
            ground,
            drive,
            probe,
            ansatz,
            grid: Vec::new(),
            delta: crate::exact::DEFAULT_BROADENING,
            variance_tolerance: DEFAULT_VARIANCE_TOLERANCE,
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>, delta: f64) -> Self {
        self.grid = grid;
        self.delta = delta;
        self
    }
}

/// Metric `M`, dynamical matrix `K`, drive overlaps `v` and probe overlaps `o`.
/// `v` and `o` are real whenever the drive and probe are Hermitian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdvpMatrices {
    pub metric: DMatrix<f64>,
    pub dynamics: DMatrix<f64>,
    pub drive: DVector<C64>,
    pub probe: DVector<C64>,
    pub energy: f64,
    pub energy_variance: f64,
}

impl TdvpMatrices {
    pub fn len(&self) -> usize {
        self.drive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drive.is_empty()
    }
}

pub fn tdvp_matrices(problem: &ResponseProblem) -> Result<TdvpMatrices> {
    let sector = &problem.ground.sector;
    let h = build_matrix(&problem.h0, sector)?;
    let v = build_matrix(&problem.drive, sector)?;
    let o = build_matrix(&problem.probe, sector)?;
    let gens = problem.ansatz.generators.iter().map(|g| build_matrix(g, sector)).collect::<Result<Vec<_>>>()?;
    let mats = tdvp_from_matrices(&h, &problem.ground.amplitudes, &v, &o, &gens)?;
    if mats.energy_variance > problem.variance_tolerance {
        return Err(Error::NotGroundState { residual: mats.energy_variance.sqrt() });
    }
    Ok(mats)
}

/// Tangent-space matrices from assembled operators. `psi` must be normalised.
pub fn tdvp_from_matrices(
    h: &SparseMatrix,
    psi: &CVector,
    drive: &SparseMatrix,
    probe: &SparseMatrix,
    generators: &[SparseMatrix],
) -> Result<TdvpMatrices> {
    let dim = psi.len();
    for m in std::iter::once(h).chain([drive, probe]).chain(generators) {
        if m.nrows() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: m.nrows() });
        }
    }
    let hpsi = h.mul_vec(psi);
    let energy = inner(psi, &hpsi).re;
    let energy_variance = (inner(&hpsi, &hpsi).re - energy * energy).max(0.0);
    let us: Vec<CVector> = generators.iter().map(|g| g.mul_vec(psi)).collect();
    let hus: Vec<CVector> = us.iter().map(|u| h.mul_vec(u) - u * C64::new(energy, 0.0)).collect();
    let means: Vec<f64> = us.iter().map(|u| inner(psi, u).re).collect();
    let n = us.len();
    let mut metric = DMatrix::zeros(n, n);
    let mut dynamics = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            metric[(i, j)] = inner(&us[i], &us[j]).re - means[i] * means[j];
            dynamics[(i, j)] = inner(&us[j], &hus[i]).im;
        }
    }
    let v_mean = inner(psi, &drive.mul_vec(psi));
    let v_psi = drive.mul_vec(psi) - psi * v_mean;
    let vd_psi = drive.adjoint().mul_vec(psi) - psi * v_mean.conj();
    let o_psi = probe.mul_vec(psi);
    let od_psi = probe.adjoint().mul_vec(psi);
    let drive_vec = DVector::from_iterator(n, us.iter().map(|u| (inner(&vd_psi, u) + inner(u, &v_psi)) * 0.5));
    let probe_vec = DVector::from_iterator(n, us.iter().map(|u| I * (inner(u, &o_psi) - inner(&od_psi, u))));
    Ok(TdvpMatrices { metric, dynamics, drive: drive_vec, probe: probe_vec, energy, energy_variance })
}

/// Response written as a sum of simple poles `Σ_p r_p / (ω + iδ - λ_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poles {
    pub positions: Vec<f64>,
    pub residues: Vec<C64>,
}

impl Poles {
    pub fn evaluate(&self, omega: f64, delta: f64) -> C64 {
        let z = C64::new(omega, delta);
        self.positions.iter().zip(&self.residues).fold(ZERO, |acc, (&l, &r)| acc + r / (z - l))
    }

    pub fn on_grid(&self, grid: &[f64], delta: f64) -> Susceptibility {
        Susceptibility {
            frequencies: grid.to_vec(),
            values: grid.iter().map(|&w| self.evaluate(w, delta)).collect(),
            broadening: delta,
        }
    }

    pub fn from_lehmann(l: &Lehmann) -> Self {
        let mut positions = Vec::new();
        let mut residues = Vec::new();
        for &(d, a) in &l.forward {
            positions.push(d);
            residues.push(a);
        }
        for &(d, b) in &l.backward {
            positions.push(-d);
            residues.push(-b);
        }
        Self { positions, residues }
    }

    /// `∫ dω/2π |χ_a(ω) - χ_b(ω)|²` over the real line with both sides broadened by `delta`.
    pub fn l2_distance(&self, other: &Poles, delta: f64) -> f64 {
        let mut pos = self.positions.clone();
        pos.extend(&other.positions);
        let mut res = self.residues.clone();
        res.extend(other.residues.iter().map(|r| -r));
        // ∫ dω/2π (ω - λ_p + iδ)⁻¹ (ω - λ_q - iδ)⁻¹ = i / (λ_q - λ_p + 2iδ)
        let mut total = 0.0;
        for p in 0..pos.len() {
            for q in 0..pos.len() {
                total += (res[p] * res[q].conj() * I / C64::new(pos[q] - pos[p], 2.0 * delta)).re;
            }
        }
        total.max(0.0)
    }
}

/// Poles and residues of the variational susceptibility.
///
/// The metric is whitened on its range (eigenvalues above `PINV_CUTOFF` of the largest),
/// which projects out redundant generators. On the whitened space `-iK` is Hermitian with
/// eigenpairs `(λ_p, w_p)` and `χ(z) = Σ_p i (oᵀw_p)(w_p†v) / (z - λ_p)`.
pub fn variational_poles(mats: &TdvpMatrices) -> Poles {
    let n = mats.len();
    if n == 0 {
        return Poles { positions: Vec::new(), residues: Vec::new() };
    }
    let (vals, vecs) = eigh_real(&mats.metric);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..n).filter(|&k| scale > 0.0 && vals[k] > PINV_CUTOFF * scale).collect();
    let r = keep.len();
    let w = DMatrix::from_fn(n, r, |i, c| vecs[(i, keep[c])] / vals[keep[c]].sqrt());
    let k_white = w.transpose() * &mats.dynamics * &w;
    let herm = CMatrix::from_fn(r, r, |a, b| C64::new(0.0, -k_white[(a, b)]));
    let herm = (&herm + herm.adjoint()) * C64::new(0.5, 0.0);
    let es = eigh(&herm);
    let wc = w.map(|x| C64::new(x, 0.0));
    let v_white = wc.transpose() * &mats.drive;
    let o_white = wc.transpose() * &mats.probe;
    let mut positions = Vec::with_capacity(r);
    let mut residues = Vec::with_capacity(r);
    for p in 0..r {
        let col = es.vectors.column(p);
        let left = col.iter().zip(o_white.iter()).fold(ZERO, |acc, (c, o)| acc + c * o);
        let right = col.iter().zip(v_white.iter()).fold(ZERO, |acc, (c, v)| acc + c.conj() * v);
        positions.push(es.values[p]);
        residues.push(I * left * right);
    }
    Poles { positions, residues }
}

/// `χ_var` on `grid` with `ω → ω + iδ`. A grid point closer to a pole than the cutoff
/// (only possible for `δ = 0`) is reported as singular.
pub fn variational_susceptibility(mats: &TdvpMatrices, grid: &[f64], delta: f64) -> Result<Susceptibility> {
    if delta < 0.0 {
        return Err(Error::InvalidInput("broadening must be non-negative".into()));
    }
    let poles = variational_poles(mats);
    let scale = poles.positions.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    for (idx, &w) in grid.iter().enumerate() {
        for (&l, r) in poles.positions.iter().zip(&poles.residues) {
            if C64::new(w - l, delta).norm() <= PINV_CUTOFF * scale && r.norm() > 0.0 {
                return Err(Error::SingularSystem { context: format!("grid point {idx} (omega = {w})") });
            }
        }
    }
    Ok(poles.on_grid(grid, delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub weight: f64,
}

/// Discrete target spectrum `χ(z) = Σ_n w_n / (z - ω_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    /// Real parts of the Kubo residues; exact when the probe is the adjoint of the drive.
    /// Peaks with `|weight| ≤ min_weight` are dropped.
    pub fn from_lehmann(l: &Lehmann, min_weight: f64) -> Self {
        let p = Poles::from_lehmann(l);
        let peaks = p
            .positions
            .iter()
            .zip(&p.residues)
            .filter(|(_, r)| r.re.abs() > min_weight)
            .map(|(&omega, r)| Peak { omega, weight: r.re })
            .collect();
        Self { peaks }
    }

    pub fn poles(&self) -> Poles {
        Poles {
            positions: self.peaks.iter().map(|p| p.omega).collect(),
            residues: self.peaks.iter().map(|p| C64::new(p.weight, 0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Spectrum {
    Grid(Susceptibility),
    Peaks(PeakList),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostVariant {
    /// `Im χ_var(ω*)`, negative where the system absorbs.
    Peak { omega: f64 },
    /// `-∫ dω/2π Im χ_var Im χ_tar`; for peak targets `Σ_{ω_n>0} w_n Im χ_var(ω_n)`.
    Overlap,
    /// `∫ dω/2π |χ_var - χ_tar|²`.
    L2,
    /// `Overlap` summed over momentum slices.
    MomentumSum,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum()
}

fn slice_cost(var: &Poles, target: &Spectrum, variant: CostVariant, delta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    match (variant, target) {
        (CostVariant::Peak { omega }, _) => var.evaluate(omega, delta).im,
        (CostVariant::Overlap | CostVariant::MomentumSum, Spectrum::Peaks(list)) => list
            .peaks
            .iter()
            .filter(|p| p.omega > 0.0)
            .map(|p| p.weight * var.evaluate(p.omega, delta).im)
            .sum(),
        (CostVariant::Overlap | CostVariant::MomentumSum, Spectrum::Grid(s)) => {
            let y: Vec<f64> = s.frequencies.iter().zip(&s.values).map(|(&w, t)| -var.evaluate(w, delta).im * t.im).collect();
            trapezoid(&s.frequencies, &y) / two_pi
        }
        (CostVariant::L2, Spectrum::Peaks(list)) => var.l2_distance(&list.poles(), delta),
        (CostVariant::L2, Spectrum::Grid(s)) => {
            let y: Vec<f64> = s.frequencies.iter().zip(&s.values).map(|(&w, t)| (var.evaluate(w, delta) - t).norm_sqr()).collect();
            trapezoid(&s.frequencies, &y) / two_pi
        }
    }
}

/// Cost of variational spectra against targets, summed over matching slices (one per momentum).
pub fn spectral_cost(var: &[Poles], targets: &[Spectrum], variant: CostVariant, delta: f64) -> Result<f64> {
    if var.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: targets.len(), found: var.len() });
    }
    if variant == CostVariant::Overlap && var.len() != 1 {
        return Err(Error::InvalidInput("overlap compares a single spectrum; use momentum_sum".into()));
    }
    Ok(var.iter().zip(targets).map(|(p, t)| slice_cost(p, t, variant, delta)).sum())
}

/// Cost between two sampled spectra on the same grid.
pub fn grid_cost(var: &Susceptibility, target: &Susceptibility, variant: CostVariant) -> Result<f64> {
    if var.frequencies.len() != target.frequencies.len()
        || var.frequencies.iter().zip(&target.frequencies).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::InvalidInput("spectra are sampled on different grids".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let x = &var.frequencies;
    Ok(match variant {
        CostVariant::Peak { omega } => {
            let k = x.iter().enumerate().min_by(|a, b| (a.1 - omega).abs().total_cmp(&(b.1 - omega).abs())).map(|(k, _)| k);
            k.map_or(0.0, |k| var.values[k].im)
        }
        CostVariant::Overlap | CostVariant::MomentumSum => {
            let y: Vec<f64> = var.values.iter().zip(&target.values).map(|(a, b)| -a.im * b.im).collect();
            trapezoid(x, &y) / two_pi
        }
        CostVariant::L2 => {
            let y: Vec<f64> = var.values.iter().zip(&target.values).map(|(a, b)| (a - b).norm_sqr()).collect();
            trapezoid(x, &y) / two_pi
        }
    })
}

/// One measured response channel: drive, probe, tangent generators and the target spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralChannel {
    pub drive: OperatorSum,
    pub probe: OperatorSum,
    pub ansatz: TangentAnsatz,
    pub target: Spectrum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShlOptions {
    /// Final broadening of the cost.
    pub delta: f64,
    /// Broader widths minimised first, each stage warm-starting the next.
    pub widths: Vec<f64>,
    pub variant: CostVariant,
    pub fd_step: f64,
    /// Parameter step below which a stage stops.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Sector in which the reference ground state is selected; `None` means the full space.
    pub ground_sector: Option<Sector>,
    pub variance_tolerance: f64,
}

impl Default for ShlOptions {
    fn default() -> Self {
        Self {
            delta: crate::exact::DEFAULT_BROADENING,
            widths: vec![1.0, 0.3],
            variant: CostVariant::L2,
            fd_step: 1e-4,
            tolerance: 1e-6,
            max_iters: 200,
            ground_sector: None,
            variance_tolerance: DEFAULT_VARIANCE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShlStep {
    pub stage: usize,
    pub width: f64,
    pub iteration: usize,
    pub params: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShlTrajectory {
    pub params: Vec<f64>,
    pub cost: f64,
    pub log: Vec<ShlStep>,
    pub evaluations: usize,
}

struct PreparedChannel {
    drive: SparseMatrix,
    probe: SparseMatrix,
    generators: Vec<SparseMatrix>,
}

/// Evaluates variational spectra of every channel for one Hamiltonian.
pub struct SpectralModel {
    channels: Vec<PreparedChannel>,
    targets: Vec<Spectrum>,
    response_sector: Sector,
    ground_sector: Sector,
    variance_tolerance: f64,
}

impl SpectralModel {
    pub fn new(sites: usize, channels: &[SpectralChannel], ground_sector: Option<Sector>, variance_tolerance: f64) -> Result<Self> {
        let response_sector = Sector::spin(sites);
        let prepared = channels
            .iter()
            .map(|c| {
                Ok(PreparedChannel {
                    drive: build_matrix(&c.drive, &response_sector)?,
                    probe: build_matrix(&c.probe, &response_sector)?,
                    generators: c.ansatz.generators.iter().map(|g| build_matrix(g, &response_sector)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels: prepared,
            targets: channels.iter().map(|c| c.target.clone()).collect(),
            ground_sector: ground_sector.unwrap_or_else(|| response_sector.clone()),
            response_sector,
            variance_tolerance,
        })
    }

    /// Reference state of `h`: the non-degenerate ground state of the selected sector,
    /// expressed in the full spin space.
    pub fn reference(&self, h: &OperatorSum) -> Result<QuantumState> {
        let gs = ground_state(h, &self.ground_sector)?;
        if gs.degenerate {
            return Err(Error::DegenerateGroundState { gap: gs.gap });
        }
        gs.state.embed(&self.response_sector)
    }

    pub fn spectra(&self, h: &OperatorSum) -> Result<Vec<Poles>> {
        let psi = self.reference(h)?;
        let hm = build_matrix(h, &self.response_sector)?;
        self.channels
            .iter()
            .map(|c| {
                let mats = tdvp_from_matrices(&hm, &psi.amplitudes, &c.drive, &c.probe, &c.generators)?;
                if mats.energy_variance > self.variance_tolerance {
                    return Err(Error::NotGroundState { residual: mats.energy_variance.sqrt() });
                }
                Ok(variational_poles(&mats))
            })
            .collect()
    }

    pub fn cost(&self, h: &OperatorSum, variant: CostVariant, delta: f64) -> Result<f64> {
        spectral_cost(&self.spectra(h)?, &self.targets, variant, delta)
    }
}

/// Fits the parameters of `family` so that the variational spectra of `channels` match
/// their targets. Each width stage runs finite-difference BFGS until the parameter step
/// drops below `tolerance`.
pub fn shl_learn<F>(family: F, sites: usize, channels: &[SpectralChannel], x0: &[f64], opts: &ShlOptions) -> Result<ShlTrajectory>
where
    F: Fn(&[f64]) -> OperatorSum,
{
    if opts.delta <= 0.0 || opts.widths.iter().any(|w| *w <= 0.0) {
        return Err(Error::InvalidInput("broadening must be positive".into()));
    }
    let model = SpectralModel::new(sites, channels, opts.ground_sector.clone(), opts.variance_tolerance)?;
    let mut x = x0.to_vec();
    let mut log = Vec::new();
    let mut evaluations = 0;
    let mut cost = f64::NAN;
    let mut stages = opts.widths.clone();
    stages.push(opts.delta);
    let bfgs_opts = BfgsOptions { grad_tol: 1e-12, step_tol: opts.tolerance, max_iter: opts.max_iters, initial_step: 0.1 };
    for (stage, &width) in stages.iter().enumerate() {
        let mut failure: Option<Error> = None;
        let objective = |p: &[f64]| match model.cost(&family(p), opts.variant, width) {
            Ok(c) => c,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        };
        let start = model.cost(&family(&x), opts.variant, width)?;
        log.push(ShlStep { stage, width, iteration: 0, params: x.clone(), cost: start });
        let res = bfgs_fd_observed(objective, &x, opts.fd_step, &bfgs_opts, |it, p, c| {
            log.push(ShlStep { stage, width, iteration: it, params: p.to_vec(), cost: c });
        });
        evaluations += res.evaluations * (1 + 2 * x.len());
        if !res.value.is_finite() {
            return Err(failure.unwrap_or(Error::DivergenceDetected("non-finite cost".into())));
        }
        if res.iterations >= opts.max_iters {
            return Err(Error::IterationCap(opts.max_iters));
        }
        x = res.x;
        cost = res.value;
    }
    Ok(ShlTrajectory { params: x, cost, log, evaluations })
}
