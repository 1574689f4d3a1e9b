//! Parent-Hamiltonian reconstruction from pure and thermal states.
//!
//! The learned operator is `H = H₀ + Σ_i c_i h_i`. For a pure or mixed input the
//! variance `⟨H²⟩ - ⟨H⟩²` is the quadratic form `cᵀGc - 2vᵀc + var(H₀)`; it is
//! minimised with ridge weights, an optional energy bias and linear constraints.
//! Thermal inputs can instead be fitted in Hilbert–Schmidt distance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{low_spectrum, DEGENERACY_TOL};
use crate::linalg::{eigh, eigh_real, inner, CMatrix, CVector, SparseMatrix, C64};
use crate::opalg::{build_matrix, Ensemble, MixedState, OperatorSum, QuantumState, Sector};
use crate::optim::{bfgs, BfgsOptions};
use crate::qp::{KktResiduals, QuadraticProgram};

/// Eigenvalues of `G` below this fraction of the largest are kernel.
pub const DEFAULT_KERNEL_TOLERANCE: f64 = 1e-10;
/// Default energy bias relative to the scale of the operators involved.
pub const DEFAULT_BIAS_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzTerm {
    pub label: String,
    pub operator: OperatorSum,
}

impl AnsatzTerm {
    pub fn new(label: impl Into<String>, operator: OperatorSum) -> Self {
        Self { label: label.into(), operator }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Eq,
    Ge,
    Le,
}

/// `Σ a_i c_i (=, ≥, ≤) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn lower_bound(index: usize, bound: f64) -> Self {
        Self { coeffs: vec![(index, 1.0)], relation: Relation::Ge, rhs: bound }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.coeffs.iter().map(|c| c.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnProblem {
    /// Fixed part `H₀`; an empty sum means none.
    pub reference: OperatorSum,
    pub terms: Vec<AnsatzTerm>,
    pub weights: Vec<f64>,
    /// Energy-bias strength; `None` picks a small default from the operator scale.
    pub alpha: Option<f64>,
    pub constraints: Vec<LinearConstraint>,
    pub kernel_tolerance: f64,
    /// Impose `Σ c_i² = 1` (only meaningful with an empty reference).
    pub normalize: bool,
    /// Optional expansion of `H₀` along the ansatz terms, used to report total couplings.
    pub reference_coefficients: Option<Vec<f64>>,
}

impl LearnProblem {
    pub fn new(reference: OperatorSum, terms: Vec<AnsatzTerm>) -> Self {
        let n = terms.len();
        Self {
            reference,
            terms,
            weights: vec![0.0; n],
            alpha: Some(0.0),
            constraints: Vec::new(),
            kernel_tolerance: DEFAULT_KERNEL_TOLERANCE,
            normalize: false,
            reference_coefficients: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_alpha(mut self, alpha: Option<f64>) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_constraints(mut self, constraints: Vec<LinearConstraint>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn normalized(mut self) -> Self {
        self.normalize = true;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.terms.len();
        if self.weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.weights.len() });
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be non-negative".into()));
        }
        if let Some(r) = &self.reference_coefficients {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.len() });
            }
        }
        for c in &self.constraints {
            for i in c.indices() {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, limit: n });
                }
            }
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !t.operator.is_hermitian() {
                return Err(Error::InvalidInput(format!("ansatz term {i} ({}) is not Hermitian", t.label)));
            }
        }
        Ok(())
    }

    /// `H₀ + Σ c_i h_i`.
    pub fn hamiltonian(&self, coefficients: &[f64]) -> OperatorSum {
        let mut total = self.reference.clone();
        for (t, &c) in self.terms.iter().zip(coefficients) {
            if c != 0.0 {
                total = &total + &t.operator.scale_real(c);
            }
        }
        total.simplify()
    }
}

/// `G`, `v` and the first moments entering the variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSystem {
    pub gram: DMatrix<f64>,
    pub drive: DVector<f64>,
    /// `⟨h_i⟩`.
    pub means: DVector<f64>,
    pub reference_mean: f64,
    pub reference_variance: f64,
}

impl CorrelationSystem {
    /// Variance of `H₀ + Σ c_i h_i` from the quadratic form.
    pub fn variance_of(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.gram * c)) - 2.0 * self.drive.dot(c) + self.reference_variance
    }
}

fn is_empty_op(op: &OperatorSum) -> bool {
    op.simplify().is_empty()
}

pub fn correlation_system<S: Ensemble + ?Sized>(state: &S, problem: &LearnProblem) -> Result<CorrelationSystem> {
    let sector = state.sector();
    let mats: Vec<SparseMatrix> = problem.terms.iter().map(|t| build_matrix(&t.operator, sector)).collect::<Result<_>>()?;
    let reference = if is_empty_op(&problem.reference) { None } else { Some(build_matrix(&problem.reference, sector)?) };
    correlation_system_matrices(state, &mats, reference.as_ref())
}

/// `G_ij = ½⟨{h_i,h_j}⟩ - ⟨h_i⟩⟨h_j⟩`, `v_i = ⟨H₀⟩⟨h_i⟩ - ½⟨{H₀,h_i}⟩`.
pub fn correlation_system_matrices<S: Ensemble + ?Sized>(state: &S, mats: &[SparseMatrix], reference: Option<&SparseMatrix>) -> Result<CorrelationSystem> {
    let n = mats.len();
    let mut second = DMatrix::<f64>::zeros(n, n);
    let mut cross = DVector::<f64>::zeros(n);
    let mut means = DVector::<f64>::zeros(n);
    let mut ref_mean = 0.0;
    let mut ref_second = 0.0;
    for (p, v) in state.components() {
        for m in mats.iter().chain(reference) {
            if m.ncols() != v.len() {
                return Err(Error::DimensionMismatch { expected: m.ncols(), found: v.len() });
            }
        }
        let applied: Vec<CVector> = mats.iter().map(|m| m.mul_vec(v)).collect();
        for i in 0..n {
            means[i] += p * inner(v, &applied[i]).re;
            for j in 0..=i {
                let val = p * inner(&applied[i], &applied[j]).re;
                second[(i, j)] += val;
                if i != j {
                    second[(j, i)] += val;
                }
            }
        }
        if let Some(h0) = reference {
            let a0 = h0.mul_vec(v);
            ref_mean += p * inner(v, &a0).re;
            ref_second += p * a0.norm_squared();
            for i in 0..n {
                cross[i] += p * inner(&a0, &applied[i]).re;
            }
        }
    }
    let gram = &second - &means * means.transpose();
    let gram = (&gram + gram.transpose()) * 0.5;
    let drive = &means * ref_mean - cross;
    Ok(CorrelationSystem { gram, drive, means, reference_mean: ref_mean, reference_variance: ref_second - ref_mean * ref_mean })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermReport {
    pub label: String,
    pub coefficient: f64,
    /// Reference plus learned coupling, when the reference expansion is known.
    pub total: Option<f64>,
    pub weight: f64,
    pub constrained: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LearnDiagnostics {
    /// Component of `v` in `ker(G)` beyond the Cauchy–Schwarz allowance.
    pub kernel_residual: f64,
    pub gram_min_eigenvalue: f64,
    pub gram_max_eigenvalue: f64,
    /// Energy bias actually used.
    pub alpha: f64,
    /// The bias lay in `ker(G)` with zero ridge weight and was dropped to keep the problem bounded.
    pub bias_dropped: bool,
    pub kkt: Option<KktResiduals>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnResult {
    pub coefficients: Vec<f64>,
    pub variance: f64,
    pub kernel_dimension: usize,
    pub kernel_basis: Vec<Vec<f64>>,
    pub terms: Vec<TermReport>,
    pub diagnostics: LearnDiagnostics,
}

impl LearnResult {
    /// Total couplings divided by the one labelled `label` (e.g. the leg hopping).
    pub fn rescaled_totals(&self, label: &str) -> Option<Vec<(String, f64)>> {
        let pivot = self.terms.iter().find(|t| t.label == label)?;
        let base = pivot.total.unwrap_or(pivot.coefficient);
        if base.abs() < 1e-300 {
            return None;
        }
        Some(self.terms.iter().map(|t| (t.label.clone(), t.total.unwrap_or(t.coefficient) / base)).collect())
    }
}

/// `⟨H²⟩ - ⟨H⟩²`.
pub fn variance<S: Ensemble + ?Sized>(state: &S, h: &OperatorSum) -> Result<f64> {
    let m = build_matrix(h, state.sector())?;
    crate::opalg::variance_matrix(state, &m)
}

struct Spectral {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    cut: f64,
}

impl Spectral {
    fn new(g: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (values, vectors) = eigh_real(g);
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self { values, vectors, cut: rel_tol * max.max(1e-300) }
    }

    fn kernel(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&k| self.values[k] <= self.cut).collect()
    }

    fn project_kernel(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for k in self.kernel() {
            let q = self.vectors.column(k);
            out += q * q.dot(x);
        }
        out
    }
}

pub fn learn<S: Ensemble + ?Sized>(state: &S, problem: &LearnProblem) -> Result<LearnResult> {
    problem.validate()?;
    let sys = correlation_system(state, problem)?;
    learn_from_system(&sys, problem)
}

/// Solves the learning problem for an assembled correlation system.
pub fn learn_from_system(sys: &CorrelationSystem, problem: &LearnProblem) -> Result<LearnResult> {
    problem.validate()?;
    let n = problem.terms.len();
    let spec = Spectral::new(&sys.gram, problem.kernel_tolerance);
    let kernel = spec.kernel();
    let mut diagnostics = LearnDiagnostics {
        gram_min_eigenvalue: spec.values.first().copied().unwrap_or(0.0),
        gram_max_eigenvalue: spec.values.last().copied().unwrap_or(0.0),
        ..Default::default()
    };
    let alpha = problem.alpha.unwrap_or_else(|| {
        let scale = spec.values.last().copied().unwrap_or(0.0).sqrt().max(sys.reference_variance.sqrt()).max(1.0);
        DEFAULT_BIAS_FRACTION * scale
    });
    diagnostics.alpha = alpha;
    // v ⊥ ker(G) up to |v·u| ≤ sqrt(λ_u var(H₀))
    let mut residual2 = 0.0;
    for &k in &kernel {
        let overlap = spec.vectors.column(k).dot(&sys.drive).abs();
        let allowance = (spec.values[k].max(0.0) * sys.reference_variance.max(0.0)).sqrt();
        residual2 += (overlap - allowance).max(0.0).powi(2);
    }
    diagnostics.kernel_residual = residual2.sqrt();
    let weights = DVector::from_column_slice(&problem.weights);
    let ridge_free = weights.iter().all(|w| *w == 0.0);
    if ridge_free && diagnostics.kernel_residual > 1e-8 * (1.0 + sys.drive.norm()) {
        return Err(Error::NoSolution { residual: diagnostics.kernel_residual });
    }

    let coefficients: DVector<f64> = if problem.normalize {
        if !problem.constraints.is_empty() {
            return Err(Error::InvalidInput("normalisation cannot be combined with linear constraints".into()));
        }
        // bias restricted to ker(G) when it exists, otherwise applied to every direction
        let bias = if kernel.is_empty() { &sys.means * alpha } else { spec.project_kernel(&sys.means) * alpha };
        let a = &sys.gram + DMatrix::from_diagonal(&weights);
        let linear = &bias - &sys.drive;
        unit_sphere_minimum(&a, &linear, &sys.means)
    } else {
        // energy bias restricted to ker(G)
        let mut bias = spec.project_kernel(&sys.means) * alpha;
        if ridge_free && bias.norm() > 0.0 {
            diagnostics.bias_dropped = true;
            bias.fill(0.0);
        }
        let rhs = &sys.drive - &bias;
        let a = &sys.gram + DMatrix::from_diagonal(&weights);
        if problem.constraints.is_empty() {
            let (x, _) = crate::linalg::pinv_solve_sym(&a, &rhs, problem.kernel_tolerance);
            x
        } else {
            let max_eig = spec.values.last().copied().unwrap_or(0.0).abs().max(1.0);
            let hessian = (&a + DMatrix::identity(n, n) * (1e-12 * max_eig)) * 2.0;
            let mut qp = QuadraticProgram { hessian, linear: -(&rhs * 2.0), eq_rows: Vec::new(), ineq_rows: Vec::new() };
            for c in &problem.constraints {
                let mut row = DVector::zeros(n);
                for &(i, a) in &c.coeffs {
                    row[i] += a;
                }
                match c.relation {
                    Relation::Eq => qp.eq_rows.push((row, c.rhs)),
                    Relation::Ge => qp.ineq_rows.push((row, c.rhs)),
                    Relation::Le => qp.ineq_rows.push((-row, -c.rhs)),
                }
            }
            let sol = qp.solve()?;
            diagnostics.kkt = Some(qp.kkt(&sol));
            DVector::from_vec(sol.x)
        }
    };
    let variance = sys.variance_of(&coefficients).max(0.0);
    let constrained: Vec<bool> = (0..n).map(|i| problem.constraints.iter().any(|c| c.indices().any(|j| j == i))).collect();
    let terms = problem
        .terms
        .iter()
        .enumerate()
        .map(|(i, t)| TermReport {
            label: t.label.clone(),
            coefficient: coefficients[i],
            total: problem.reference_coefficients.as_ref().map(|r| r[i] + coefficients[i]),
            weight: problem.weights[i],
            constrained: constrained[i],
        })
        .collect();
    Ok(LearnResult {
        coefficients: coefficients.iter().copied().collect(),
        variance,
        kernel_dimension: kernel.len(),
        kernel_basis: kernel.iter().map(|&k| spec.vectors.column(k).iter().copied().collect()).collect(),
        terms,
        diagnostics,
    })
}

/// Minimises `cᵀAc + 2bᵀc` on the unit sphere (trust-region subproblem). Among
/// sign-ambiguous solutions the one with lower `meansᵀc` (energy) is returned.
fn unit_sphere_minimum(a: &DMatrix<f64>, b: &DVector<f64>, means: &DVector<f64>) -> DVector<f64> {
    let (vals, vecs) = eigh_real(a);
    let n = vals.len();
    let bt: Vec<f64> = (0..n).map(|k| vecs.column(k).dot(b)).collect();
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let lmin = vals[0];
    let degenerate: Vec<usize> = (0..n).filter(|&k| vals[k] - lmin <= 1e-12 * scale).collect();
    let b_low: f64 = degenerate.iter().map(|&k| bt[k] * bt[k]).sum::<f64>().sqrt();
    let norm_at = |mu: f64| -> f64 { (0..n).map(|k| (bt[k] / (vals[k] - mu)).powi(2)).sum::<f64>().sqrt() };
    let coeffs: Vec<f64> = if b_low <= 1e-14 * scale {
        // hard case: fill the remaining norm with the lowest eigenvector
        let rest: Vec<f64> = (0..n).map(|k| if degenerate.contains(&k) { 0.0 } else { -bt[k] / (vals[k] - lmin) }).collect();
        let used: f64 = rest.iter().map(|x| x * x).sum();
        if used <= 1.0 {
            let mut out = rest;
            out[degenerate[0]] = (1.0 - used).sqrt();
            out
        } else {
            solve_secular(&vals, &bt, lmin, &norm_at)
        }
    } else {
        solve_secular(&vals, &bt, lmin, &norm_at)
    };
    let mut c = DVector::zeros(n);
    for k in 0..n {
        c += vecs.column(k) * coeffs[k];
    }
    let c = c.normalize();
    // the unbiased problem is symmetric under c → -c; choose the lower-energy sign
    if b.norm() <= 1e-14 * scale && c.dot(means) > 0.0 {
        -c
    } else {
        c
    }
}

fn solve_secular(vals: &[f64], bt: &[f64], lmin: f64, norm_at: &dyn Fn(f64) -> f64) -> Vec<f64> {
    // ‖c(μ)‖ increases from 0 to ∞ as μ rises to λ_min; bisect on (lo, λ_min)
    let bnorm: f64 = bt.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut lo = lmin - bnorm - 1.0;
    while norm_at(lo) > 1.0 {
        lo -= 2.0 * (lmin - lo);
    }
    let mut hi = lmin;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if norm_at(mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    (0..vals.len()).map(|k| -bt[k] / (vals[k] - mu)).collect()
}

/// Overlap of the state with the (possibly degenerate) ground space of `h`.
pub fn ground_space_fidelity(state: &QuantumState, h: &OperatorSum) -> Result<f64> {
    let count = 6.min(state.sector.dim());
    let spec = low_spectrum(h, &state.sector, count)?;
    let e0 = spec.energies[0];
    let scale = e0.abs().max(1.0);
    Ok(spec
        .energies
        .iter()
        .zip(&spec.states)
        .filter(|(e, _)| **e - e0 <= DEGENERACY_TOL * scale)
        .map(|(_, s)| s.fidelity(state))
        .sum())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsFit {
    pub coefficients: Vec<f64>,
    /// Final `‖ρ(c) - ρ_target‖²_HS`.
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything needed to evaluate `ρ(c) = exp(-β(H₀ + Σ c_i h_i))/Z` and its distance to a target.
pub struct GibbsObjective {
    beta: f64,
    reference: Option<CMatrix>,
    terms: Vec<CMatrix>,
    target: CMatrix,
    target_purity: f64,
}

impl GibbsObjective {
    pub fn new(target: &MixedState, reference: &OperatorSum, terms: &[AnsatzTerm], beta: f64) -> Result<Self> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("inverse temperature must be positive, got {beta}")));
        }
        let sector: &Sector = &target.sector;
        let reference = if is_empty_op(reference) { None } else { Some(build_matrix(reference, sector)?.to_dense()) };
        let terms = terms.iter().map(|t| build_matrix(&t.operator, sector).map(|m| m.to_dense())).collect::<Result<Vec<_>>>()?;
        let rho = target.density_matrix();
        let target_purity = rho.iter().map(|z| z.norm_sqr()).sum();
        Ok(Self { beta, reference, terms, target: rho, target_purity })
    }

    fn hamiltonian(&self, c: &[f64]) -> CMatrix {
        let dim = self.target.nrows();
        let mut h = self.reference.clone().unwrap_or_else(|| CMatrix::zeros(dim, dim));
        for (m, &x) in self.terms.iter().zip(c) {
            h += m * C64::new(x, 0.0);
        }
        h
    }

    pub fn density(&self, c: &[f64]) -> CMatrix {
        let es = eigh(&self.hamiltonian(c));
        let e0 = es.values[0];
        let w: Vec<f64> = es.values.iter().map(|e| (-self.beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        let scaled = CMatrix::from_fn(es.dim(), es.dim(), |r, k| es.vectors[(r, k)] * (w[k] / z));
        scaled * es.vectors.adjoint()
    }

    pub fn distance(&self, c: &[f64]) -> f64 {
        let d = self.density(c) - &self.target;
        d.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Distance and analytic gradient through the divided differences of `exp(-βE)`.
    pub fn distance_and_gradient(&self, c: &[f64]) -> (f64, Vec<f64>) {
        let es = eigh(&self.hamiltonian(c));
        let n = es.dim();
        let e0 = es.values[0];
        let w: Vec<f64> = es.values.iter().map(|e| (-self.beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / z).collect();
        let v = &es.vectors;
        // R = ρ(c) - ρ_target in the eigenbasis of H(c)
        let mut r = -(v.adjoint() * &self.target * v);
        for k in 0..n {
            r[(k, k)] += p[k];
        }
        let distance = r.iter().map(|x| x.norm_sqr()).sum::<f64>();
        // F_kl = (w_k - w_l)/(E_k - E_l) / Z, with -β w_k / Z on the diagonal
        let beta = self.beta;
        let f = DMatrix::from_fn(n, n, |k, l| {
            let (ek, el) = (es.values[k], es.values[l]);
            let diff = ek - el;
            let val = if diff.abs() < 1e-10 {
                -beta * 0.5 * (w[k] + w[l])
            } else {
                // (w_k - w_l)/diff = -β w_l · expm1(-β diff)/(-β diff)
                let x = -beta * diff;
                -beta * w[l] * x.exp_m1() / x
            };
            val / z
        });
        let trace_rp: f64 = (0..n).map(|k| r[(k, k)].re * p[k]).sum();
        let b = CMatrix::from_fn(n, n, |k, l| r[(l, k)] * f[(k, l)]);
        let grad = self
            .terms
            .iter()
            .map(|m| {
                let ht = v.adjoint() * m * v;
                let mean: f64 = (0..n).map(|k| ht[(k, k)].re * p[k]).sum();
                let s: C64 = ht.iter().zip(b.iter()).map(|(a, bb)| a * bb).sum();
                2.0 * s.re + 2.0 * beta * mean * trace_rp
            })
            .collect();
        (distance, grad)
    }

    pub fn target_purity(&self) -> f64 {
        self.target_purity
    }
}

/// Minimises `‖ρ(c) - ρ_target‖²_HS` by quasi-Newton descent from `c = 0`.
pub fn gibbs_learn(target: &MixedState, reference: &OperatorSum, terms: &[AnsatzTerm], beta: f64, options: &BfgsOptions) -> Result<GibbsFit> {
    let obj = GibbsObjective::new(target, reference, terms, beta)?;
    let x0 = vec![0.0; terms.len()];
    let res = bfgs(|c| obj.distance_and_gradient(c), &x0, options);
    if !res.converged && res.iterations >= options.max_iter {
        return Err(Error::IterationCap(options.max_iter));
    }
    Ok(GibbsFit { coefficients: res.x, distance: res.value, iterations: res.iterations, converged: res.converged })
}
