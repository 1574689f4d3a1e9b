//! Continuous-phase Hamiltonian learning on the cluster-Ising chain.
//!
//! A family `H[g] = H_CIM(g) + Σ_a c_a(g) h_a` is reshaped so that string order
//! survives over a wider range of `g`. The corrections are expanded in sine
//! harmonics that vanish at `g = ±1`, so both endpoint models stay untouched.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ground_state;
use crate::hamlearn::{learn, AnsatzTerm, LearnProblem};
use crate::opalg::models::translated_label;
use crate::opalg::{expectation, OperatorSum, Pauli, PauliString, QuantumState, Sector};
use crate::linalg::C64;

/// `-(1-g)/2 [Σ Z X Z + X₁Z₂ + Z_{N-1}X_N] - (1+g)/2 Σ Z Z` on an open chain.
pub fn cim_hamiltonian(n: usize, g: f64) -> Result<OperatorSum> {
    let (cluster, ising) = cim_parts(n)?;
    Ok((&cluster.scale_real(-(1.0 - g) / 2.0) + &ising.scale_real(-(1.0 + g) / 2.0)).simplify())
}

/// The cluster part (bulk `ZXZ` plus the two boundary stabilisers) and the `ZZ` chain, both with unit weight.
pub fn cim_parts(n: usize) -> Result<(OperatorSum, OperatorSum)> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("chain needs at least 4 sites, got {n}")));
    }
    let one = C64::new(1.0, 0.0);
    let mut cluster = translated_label(n, "ZXZ", 1.0, false)?;
    let edges = OperatorSum::from_paulis(
        n,
        vec![
            PauliString::from_sites(n, &[(0, Pauli::X), (1, Pauli::Z)], one),
            PauliString::from_sites(n, &[(n - 2, Pauli::Z), (n - 1, Pauli::X)], one),
        ],
    );
    cluster = (&cluster + &edges).simplify();
    let ising = translated_label(n, "ZZ", 1.0, false)?;
    Ok((cluster, ising))
}

/// `(-1)^N Z₁ Y₂ X₃ ⋯ X_{N-2} Y_{N-1} Z_N`.
pub fn string_operator(n: usize) -> Result<OperatorSum> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("chain needs at least 4 sites, got {n}")));
    }
    let mut letters = vec![Pauli::X; n];
    letters[0] = Pauli::Z;
    letters[1] = Pauli::Y;
    letters[n - 2] = Pauli::Y;
    letters[n - 1] = Pauli::Z;
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(OperatorSum::from_paulis(n, vec![PauliString::new(letters, C64::new(sign, 0.0))]))
}

pub fn string_order(state: &QuantumState) -> Result<f64> {
    let n = state.sector.sites();
    Ok(expectation(state, &string_operator(n)?)?.re)
}

/// Labels of the 16 translation-invariant extension terms with their body count.
pub const EXTENSION_LABELS: [(&str, usize); 16] = [
    ("XX", 2),
    ("YY", 2),
    ("XIX", 2),
    ("YIY", 2),
    ("ZIZ", 2),
    ("XXX", 3),
    ("YXY", 3),
    ("XXXX", 4),
    ("XYYX", 4),
    ("XZZX", 4),
    ("YXXY", 4),
    ("YYYY", 4),
    ("YZZY", 4),
    ("ZXXZ", 4),
    ("ZYYZ", 4),
    ("ZZZZ", 4),
];

/// Extension terms with ridge weights `base`, `2·base`, `4·base` for two-, three-
/// and four-spin terms. Every term is checked to commute with `Π X`.
pub fn extension_ansatz(n: usize, base_weight: f64) -> Result<(Vec<AnsatzTerm>, Vec<f64>)> {
    let parity = OperatorSum::from_paulis(n, vec![PauliString::new(vec![Pauli::X; n], C64::new(1.0, 0.0))]);
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for (label, body) in EXTENSION_LABELS {
        let op = translated_label(n, label, 1.0, false)?;
        let comm = op.commutator(&parity).simplify();
        if comm.max_coeff() > 1e-12 {
            return Err(Error::InvalidInput(format!("term {label} breaks the parity symmetry")));
        }
        terms.push(AnsatzTerm::new(label, op));
        weights.push(base_weight * f64::from(1u32 << (body - 2)));
    }
    Ok((terms, weights))
}

/// `sin(mπ(g+1)/2)` for `m = 1..=m_max`.
pub fn harmonic_row(g: f64, m_max: usize) -> Vec<f64> {
    (1..=m_max).map(|m| (m as f64 * PI * (g + 1.0) / 2.0).sin()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianFamily {
    pub sites: usize,
    pub terms: Vec<AnsatzTerm>,
    /// Rows are terms, columns harmonics `m = 1..=M`.
    pub harmonics: DMatrix<f64>,
}

impl HamiltonianFamily {
    pub fn new(sites: usize, terms: Vec<AnsatzTerm>, m_max: usize) -> Self {
        let harmonics = DMatrix::zeros(terms.len(), m_max);
        Self { sites, terms, harmonics }
    }

    pub fn m_max(&self) -> usize {
        self.harmonics.ncols()
    }

    /// `c_a(g) = Σ_m α_{a,m} sin(mπ(g+1)/2)`; exact zeros at `g = ±1`.
    pub fn eval_coefficients(&self, g: f64) -> Vec<f64> {
        if g == -1.0 || g == 1.0 {
            return vec![0.0; self.terms.len()];
        }
        let row = harmonic_row(g, self.m_max());
        (0..self.terms.len()).map(|a| (0..self.m_max()).map(|m| self.harmonics[(a, m)] * row[m]).sum()).collect()
    }

    pub fn hamiltonian(&self, g: f64) -> Result<OperatorSum> {
        let mut h = cim_hamiltonian(self.sites, g)?;
        for (t, c) in self.terms.iter().zip(self.eval_coefficients(g)) {
            if c != 0.0 {
                h = &h + &t.operator.scale_real(c);
            }
        }
        Ok(h.simplify())
    }

    /// `max_g |c_a(g)|` over `grid`, per term.
    pub fn relevance(&self, grid: &[f64]) -> Vec<(String, f64)> {
        let mut best = vec![0.0f64; self.terms.len()];
        for &g in grid {
            for (b, c) in best.iter_mut().zip(self.eval_coefficients(g)) {
                *b = b.max(c.abs());
            }
        }
        self.terms.iter().map(|t| t.label.clone()).zip(best).collect()
    }
}

/// Ridge fit `δα_a = (AᵀA + κI)⁻¹ Aᵀ δc_a` for each row of `values` (terms × grid).
pub fn fit_harmonics(values: &DMatrix<f64>, grid: &[f64], m_max: usize, kappa: f64) -> Result<DMatrix<f64>> {
    if values.ncols() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: values.ncols() });
    }
    if kappa < 0.0 {
        return Err(Error::InvalidInput("smoothing ridge must be non-negative".into()));
    }
    let design = DMatrix::from_fn(grid.len(), m_max, |j, m| ((m + 1) as f64 * PI * (grid[j] + 1.0) / 2.0).sin());
    let normal = design.transpose() * &design + DMatrix::identity(m_max, m_max) * kappa;
    let scale = normal.amax().max(1e-300);
    let chol = nalgebra::Cholesky::new(normal.clone()).filter(|c| {
        let d = c.l_dirty().diagonal();
        d.iter().all(|x| x * x > 1e-13 * scale)
    });
    let Some(chol) = chol else {
        return Err(Error::SingularSystem { context: "harmonic normal equations".into() });
    };
    let rhs = design.transpose() * values.transpose();
    Ok(chol.solve(&rhs).transpose())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CphlConfig {
    pub grid: Vec<f64>,
    pub m_max: usize,
    pub lambda0: f64,
    pub beta_decay: f64,
    pub delta0: f64,
    pub shrink: f64,
    pub kappa: f64,
    /// Multiplies `κ` after every iteration.
    pub kappa_decay: f64,
    pub coefficient_cap: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    /// Ridge weight of two-spin terms; three- and four-spin terms get 2× and 4×.
    pub base_weight: f64,
    /// Fail with `IterationCap` instead of returning an unconverged family.
    pub require_convergence: bool,
    /// Store the string-order profile of the family after every iteration.
    #[serde(default)]
    pub record_profiles: bool,
}

/// Consecutive step reductions allowed when the coefficient cap is exceeded.
pub const MAX_SHRINKS: usize = 30;

impl Default for CphlConfig {
    fn default() -> Self {
        Self {
            grid: uniform_grid(21),
            m_max: 6,
            lambda0: 1.0,
            beta_decay: 0.5,
            delta0: 0.5,
            shrink: 1.0,
            kappa: 1e-3,
            kappa_decay: 1.0,
            coefficient_cap: 2.0,
            max_iters: 60,
            convergence_tol: 1e-4,
            base_weight: 1.0,
            require_convergence: false,
            record_profiles: false,
        }
    }
}

pub fn uniform_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|j| -1.0 + 2.0 * j as f64 / (count - 1) as f64).collect(),
    }
}

impl CphlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.windows(2).any(|w| w[1] <= w[0]) || self.grid.iter().any(|g| !(-1.0..=1.0).contains(g)) {
            return Err(Error::InvalidInput("grid must be strictly increasing inside [-1, 1]".into()));
        }
        let rates = [self.beta_decay, self.delta0, self.shrink, self.coefficient_cap, self.convergence_tol];
        if rates.iter().any(|r| *r <= 0.0) || self.kappa < 0.0 || self.lambda0 < 0.0 || self.m_max == 0 {
            return Err(Error::InvalidInput("CPHL rates must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, k: usize) -> f64 {
        self.lambda0 / (1.0 + k as f64 * self.beta_decay)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub lambda: f64,
    pub delta: f64,
    pub err: f64,
    pub phase_boundary: Option<f64>,
    /// String order on the grid after this iteration, when requested.
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CphlOutcome {
    pub family: HamiltonianFamily,
    pub log: Vec<IterationLog>,
    pub converged: bool,
}

/// Produces the state at one grid point from the λ-biased cost operator.
pub trait StateSolver {
    fn solve(&mut self, cost: &OperatorSum, g: f64) -> Result<QuantumState>;
}

/// Exact ground state of the biased cost.
pub struct ExactSolver;

impl StateSolver for ExactSolver {
    fn solve(&mut self, cost: &OperatorSum, _g: f64) -> Result<QuantumState> {
        Ok(ground_state(cost, &Sector::spin(cost.site_count()))?.state)
    }
}

impl<F: FnMut(&OperatorSum, f64) -> Result<QuantumState>> StateSolver for F {
    fn solve(&mut self, cost: &OperatorSum, g: f64) -> Result<QuantumState> {
        self(cost, g)
    }
}

/// String order of the ground state of `family` at each grid point.
pub fn string_order_profile(family: &HamiltonianFamily, grid: &[f64]) -> Result<Vec<f64>> {
    let sector = Sector::spin(family.sites);
    grid.iter()
        .map(|&g| {
            let gs = ground_state(&family.hamiltonian(g)?, &sector)?;
            string_order(&gs.state)
        })
        .collect()
}

/// Largest `g` at which the profile falls through `level`, by linear interpolation.
pub fn crossing(grid: &[f64], profile: &[f64], level: f64) -> Option<f64> {
    let mut found = None;
    for j in 1..grid.len().min(profile.len()) {
        let (a, b) = (profile[j - 1], profile[j]);
        if a >= level && b < level {
            found = Some(grid[j - 1] + (grid[j] - grid[j - 1]) * (a - level) / (a - b));
        }
    }
    found
}

pub const STRING_ORDER_LEVEL: f64 = 0.5;

/// Damped CPHL iteration. Each step solves every grid point, learns corrections
/// with the current Hamiltonian as reference, smooths them into harmonics and
/// applies a damped update.
pub fn cphl_run<S: StateSolver>(config: &CphlConfig, terms: Vec<AnsatzTerm>, weights: Vec<f64>, sites: usize, solver: &mut S) -> Result<CphlOutcome> {
    config.validate()?;
    if weights.len() != terms.len() {
        return Err(Error::DimensionMismatch { expected: terms.len(), found: weights.len() });
    }
    let string_op = string_operator(sites)?;
    let mut family = HamiltonianFamily::new(sites, terms, config.m_max);
    let mut log = Vec::new();
    let mut delta = config.delta0;
    let mut kappa = config.kappa;
    let mut previous_err = f64::INFINITY;
    let mut converged = false;
    let n_terms = family.terms.len();
    for k in 0..config.max_iters {
        let lambda = config.lambda_at(k);
        let mut corrections = DMatrix::zeros(n_terms, config.grid.len());
        for (j, &g) in config.grid.iter().enumerate() {
            let h = family.hamiltonian(g)?;
            let cost = (&h - &string_op.scale_real(lambda)).simplify();
            let state = solver.solve(&cost, g)?;
            let problem = LearnProblem::new(h, family.terms.clone()).with_weights(weights.clone());
            let fit = learn(&state, &problem)?;
            corrections.set_column(j, &nalgebra::DVector::from_vec(fit.coefficients));
        }
        let step = fit_harmonics(&corrections, &config.grid, config.m_max, kappa)?;
        let err = step.norm();
        if err > previous_err {
            delta /= 1.0 + config.shrink;
        }
        previous_err = err;
        let mut shrinks = 0;
        loop {
            let trial = &family.harmonics + &step * delta;
            let probe = HamiltonianFamily { sites, terms: Vec::new(), harmonics: trial.clone() };
            let over = config.grid.iter().any(|&g| {
                let row = harmonic_row(g, probe.m_max());
                (0..n_terms).any(|a| (0..probe.m_max()).map(|m| trial[(a, m)] * row[m]).sum::<f64>().abs() > config.coefficient_cap)
            });
            if !over {
                family.harmonics = trial;
                break;
            }
            shrinks += 1;
            if shrinks > MAX_SHRINKS {
                return Err(Error::DivergenceDetected(format!("coefficient cap exceeded at iteration {k}")));
            }
            delta /= 1.0 + config.shrink;
        }
        kappa *= config.kappa_decay;
        let profile = if config.record_profiles { Some(string_order_profile(&family, &config.grid)?) } else { None };
        let phase_boundary = profile.as_ref().and_then(|p| crossing(&config.grid, p, STRING_ORDER_LEVEL));
        log.push(IterationLog { iter: k, lambda, delta, err, phase_boundary, profile });
        if err < config.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged && config.require_convergence {
        return Err(Error::IterationCap(config.max_iters));
    }
    if let Some(last) = log.last_mut().filter(|l| l.profile.is_none()) {
        let profile = string_order_profile(&family, &config.grid)?;
        last.phase_boundary = crossing(&config.grid, &profile, STRING_ORDER_LEVEL);
    }
    Ok(CphlOutcome { family, log, converged })
}

#[cfg(test)]
mod tests;
