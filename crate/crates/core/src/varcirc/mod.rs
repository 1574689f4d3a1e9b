//! Parameterised unitary circuits `U(θ) = Π_k exp(-i θ_k G_k)` acting on pure or
//! thermal reference states, with exact gradients, ADAPT operator selection,
//! curvature-aware optimisation and a shot-noise measurement model.

mod shots;

pub use shots::{pattern_search, pattern_search_with, sampled_cost, PatternOptions, PatternSearchResult, ShotEstimator, ShotModel};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{gibbs_state, DENSE_LIMIT};
use crate::linalg::{eigh, eigh_real, inner, krylov_expm, CVector, EigenSystem, SparseMatrix, C64};
use crate::opalg::{build_matrix, Ensemble, MixedState, OperatorSum, QuantumState, Sector};
use crate::optim::{bfgs, BfgsOptions};

/// Gibbs references keep eigenvectors above this weight.
pub const THERMAL_MIN_WEIGHT: f64 = 1e-8;
/// Gibbs references stop once the kept mass reaches `1 - THERMAL_MASS_TOL`.
pub const THERMAL_MASS_TOL: f64 = 1e-6;
/// Pool operators whose weight in the unstable Hessian direction exceeds this are appended together.
pub const ADAPT_WEIGHT_CUTOFF: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub generator: OperatorSum,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reference {
    Pure(QuantumState),
    Mixed(MixedState),
}

impl Reference {
    pub fn sector(&self) -> &Sector {
        match self {
            Reference::Pure(s) => &s.sector,
            Reference::Mixed(m) => &m.sector,
        }
    }

    pub fn components(&self) -> Vec<(f64, &CVector)> {
        match self {
            Reference::Pure(s) => s.components(),
            Reference::Mixed(m) => m.components(),
        }
    }

    /// `Tr ρ²` evaluated from the stored vectors, so non-unitary evolution would show up.
    pub fn purity(&self) -> f64 {
        let comps = self.components();
        let mut total = 0.0;
        for (pa, a) in &comps {
            for (pb, b) in &comps {
                total += pa * pb * inner(a, b).norm_sqr();
            }
        }
        total
    }

    fn with_vectors(&self, vectors: Vec<CVector>) -> Reference {
        match self {
            Reference::Pure(s) => Reference::Pure(QuantumState {
                sector: s.sector.clone(),
                amplitudes: vectors.into_iter().next().expect("one component"),
            }),
            Reference::Mixed(m) => Reference::Mixed(MixedState {
                sector: m.sector.clone(),
                weights: m.weights.clone(),
                vectors,
            }),
        }
    }
}

impl Ensemble for Reference {
    fn sector(&self) -> &Sector {
        Reference::sector(self)
    }
    fn components(&self) -> Vec<(f64, &CVector)> {
        Reference::components(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalCircuit {
    pub layers: Vec<Layer>,
    pub reference: Reference,
}

impl VariationalCircuit {
    pub fn new(reference: Reference) -> Self {
        Self { layers: Vec::new(), reference }
    }

    /// Thermal reference `exp(-H/T)/Z`, truncated to its dominant eigenvectors.
    pub fn thermal(h: &OperatorSum, temperature: f64, sector: &Sector) -> Result<Self> {
        let rho = gibbs_state(h, temperature, sector)?.truncate(THERMAL_MIN_WEIGHT, THERMAL_MASS_TOL);
        Ok(Self::new(Reference::Mixed(rho)))
    }

    pub fn with_layers(mut self, generators: &[OperatorSum]) -> Self {
        for g in generators {
            self.layers.push(Layer { generator: g.clone(), angle: 0.0 });
        }
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.angle).collect()
    }

    pub fn set_angles(&mut self, angles: &[f64]) -> Result<()> {
        if angles.len() != self.layers.len() {
            return Err(Error::DimensionMismatch { expected: self.layers.len(), found: angles.len() });
        }
        for (l, &a) in self.layers.iter_mut().zip(angles) {
            l.angle = a;
        }
        Ok(())
    }
}

/// `⟨energy⟩ - λ⟨bonus⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub energy_part: OperatorSum,
    pub bonus_part: OperatorSum,
    pub lambda: f64,
}

impl CostSpec {
    pub fn new(energy_part: OperatorSum, bonus_part: OperatorSum, lambda: f64) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
        }
        if !energy_part.is_hermitian() || !bonus_part.is_hermitian() {
            return Err(Error::InvalidInput("cost operators must be Hermitian".into()));
        }
        Ok(Self { energy_part, bonus_part, lambda })
    }

    pub fn energy_only(energy_part: OperatorSum) -> Self {
        let zero = OperatorSum::zero(energy_part.kind(), energy_part.site_count());
        Self { energy_part, bonus_part: zero, lambda: 0.0 }
    }

    pub fn operator(&self) -> OperatorSum {
        if self.lambda == 0.0 || self.bonus_part.is_empty() {
            return self.energy_part.clone();
        }
        (&self.energy_part - &self.bonus_part.scale_real(self.lambda)).simplify()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorPool {
    candidates: Vec<OperatorSum>,
}

impl OperatorPool {
    pub fn new(candidates: Vec<OperatorSum>) -> Result<Self> {
        let sites = candidates.first().map(|c| c.site_count());
        for (i, c) in candidates.iter().enumerate() {
            if !c.is_hermitian() {
                return Err(Error::NonHermitianPool(i));
            }
            if Some(c.site_count()) != sites {
                return Err(Error::DimensionMismatch { expected: sites.unwrap_or(0), found: c.site_count() });
            }
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[OperatorSum] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn matrices(&self, sector: &Sector) -> Result<Vec<SparseMatrix>> {
        self.candidates.iter().map(|c| build_matrix(c, sector)).collect()
    }
}

/// Eigenbasis of one connected block; real generators keep real eigenvectors.
#[derive(Debug, Clone)]
enum BlockBasis {
    Real(Vec<f64>, DMatrix<f64>),
    Complex(EigenSystem),
}

/// `exp(-iθG)` for a fixed generator, diagonalised block by block once.
#[derive(Debug, Clone)]
pub struct Propagator {
    matrix: SparseMatrix,
    blocks: Option<Vec<(Vec<usize>, BlockBasis)>>,
}

impl Propagator {
    pub fn new(matrix: SparseMatrix) -> Self {
        let parts = matrix.blocks();
        let blocks = if parts.iter().all(|b| b.len() <= DENSE_LIMIT) {
            Some(
                parts
                    .into_iter()
                    .map(|idx| {
                        let local = matrix.restrict(&idx);
                        let basis = if local.iter().all(|z| z.im == 0.0) {
                            let (values, vectors) = eigh_real(&local.map(|z| z.re));
                            BlockBasis::Real(values, vectors)
                        } else {
                            BlockBasis::Complex(eigh(&local))
                        };
                        (idx, basis)
                    })
                    .collect(),
            )
        } else {
            None
        };
        Self { matrix, blocks }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn apply(&self, v: &CVector, theta: f64) -> CVector {
        if theta == 0.0 {
            return v.clone();
        }
        let Some(blocks) = &self.blocks else {
            return krylov_expm(&self.matrix, v, theta, 1e-14);
        };
        let mut out = v.clone();
        for (idx, basis) in blocks {
            let evolved = match basis {
                BlockBasis::Real(values, _) if idx.len() == 1 => {
                    out[idx[0]] *= C64::from_polar(1.0, -theta * values[0]);
                    continue;
                }
                BlockBasis::Real(values, vectors) => {
                    let re = DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i].re));
                    let im = DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i].im));
                    let mut cr = vectors.tr_mul(&re);
                    let mut ci = vectors.tr_mul(&im);
                    for k in 0..values.len() {
                        let ph = C64::from_polar(1.0, -theta * values[k]) * C64::new(cr[k], ci[k]);
                        cr[k] = ph.re;
                        ci[k] = ph.im;
                    }
                    let (nr, ni) = (vectors * cr, vectors * ci);
                    CVector::from_iterator(idx.len(), nr.iter().zip(ni.iter()).map(|(a, b)| C64::new(*a, *b)))
                }
                BlockBasis::Complex(es) => {
                    let local = CVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]));
                    es.apply_fn(&local, |e| C64::from_polar(1.0, -theta * e))
                }
            };
            for (r, &i) in idx.iter().enumerate() {
                out[i] = evolved[r];
            }
        }
        out
    }
}

/// Assembled circuit: one propagator per distinct generator plus the cost matrix.
#[derive(Debug, Clone)]
pub struct CircuitEngine {
    sector: Sector,
    propagators: Vec<Propagator>,
    layer_map: Vec<usize>,
    cost: SparseMatrix,
}

impl CircuitEngine {
    pub fn new(generators: &[OperatorSum], sector: &Sector, cost: &OperatorSum) -> Result<Self> {
        let mut distinct: Vec<&OperatorSum> = Vec::new();
        let mut layer_map = Vec::with_capacity(generators.len());
        let mut propagators = Vec::new();
        for (i, g) in generators.iter().enumerate() {
            if let Some(k) = distinct.iter().position(|d| *d == g) {
                layer_map.push(k);
                continue;
            }
            if !g.is_hermitian() {
                return Err(Error::NonHermitianPool(i));
            }
            propagators.push(Propagator::new(build_matrix(g, sector)?));
            distinct.push(g);
            layer_map.push(propagators.len() - 1);
        }
        Ok(Self { sector: sector.clone(), propagators, layer_map, cost: build_matrix(cost, sector)? })
    }

    pub fn for_circuit(circuit: &VariationalCircuit, cost: &OperatorSum) -> Result<Self> {
        let gens: Vec<OperatorSum> = circuit.layers.iter().map(|l| l.generator.clone()).collect();
        Self::new(&gens, circuit.reference.sector(), cost)
    }

    pub fn depth(&self) -> usize {
        self.layer_map.len()
    }

    pub fn sector(&self) -> &Sector {
        &self.sector
    }

    pub fn cost_matrix(&self) -> &SparseMatrix {
        &self.cost
    }

    fn check(&self, angles: &[f64], reference: &Reference) -> Result<()> {
        if angles.len() != self.depth() {
            return Err(Error::DimensionMismatch { expected: self.depth(), found: angles.len() });
        }
        let dim = self.cost.nrows();
        for (_, v) in reference.components() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
        }
        Ok(())
    }

    pub fn propagate(&self, angles: &[f64], v: &CVector) -> CVector {
        let mut out = v.clone();
        for (k, &theta) in angles.iter().enumerate() {
            out = self.propagators[self.layer_map[k]].apply(&out, theta);
        }
        out
    }

    pub fn apply(&self, angles: &[f64], reference: &Reference) -> Result<Reference> {
        self.check(angles, reference)?;
        let vectors = reference.components().into_iter().map(|(_, v)| self.propagate(angles, v)).collect();
        Ok(reference.with_vectors(vectors))
    }

    pub fn cost_value(&self, angles: &[f64], reference: &Reference) -> Result<f64> {
        self.check(angles, reference)?;
        Ok(reference
            .components()
            .into_iter()
            .map(|(p, v)| p * self.cost.quadratic(&self.propagate(angles, v)).re)
            .sum())
    }

    /// Exact cost with the reverse-sweep gradient `∂_k = 2 Σ p Im⟨φ_k|G_k|ψ_k⟩`.
    pub fn cost_and_gradient(&self, angles: &[f64], reference: &Reference) -> Result<(f64, Vec<f64>)> {
        self.check(angles, reference)?;
        let n = self.depth();
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        for (p, v) in reference.components() {
            let mut psi = self.propagate(angles, v);
            let mut phi = self.cost.mul_vec(&psi);
            value += p * inner(&psi, &phi).re;
            for k in (0..n).rev() {
                let prop = &self.propagators[self.layer_map[k]];
                let g_psi = prop.matrix().mul_vec(&psi);
                grad[k] += 2.0 * p * inner(&phi, &g_psi).im;
                psi = prop.apply(&psi, -angles[k]);
                phi = prop.apply(&phi, -angles[k]);
            }
        }
        Ok((value, grad))
    }
}

/// Final state of the circuit.
pub fn apply(circuit: &VariationalCircuit) -> Result<Reference> {
    let zero = OperatorSum::zero(
        circuit.layers.first().map_or(crate::opalg::OpKind::Spin, |l| l.generator.kind()),
        circuit.layers.first().map_or(circuit.reference.sector().sites(), |l| l.generator.site_count()),
    );
    let engine = CircuitEngine::for_circuit(circuit, &zero)?;
    engine.apply(&circuit.angles(), &circuit.reference)
}

pub fn cost_and_gradient(circuit: &VariationalCircuit, cost: &CostSpec) -> Result<(f64, Vec<f64>)> {
    let engine = CircuitEngine::for_circuit(circuit, &cost.operator())?;
    engine.cost_and_gradient(&circuit.angles(), &circuit.reference)
}

fn check_pool(pool: &[SparseMatrix]) -> Result<()> {
    for (i, a) in pool.iter().enumerate() {
        if a.hermiticity_error() > 1e-12 {
            return Err(Error::NonHermitianPool(i));
        }
    }
    Ok(())
}

/// `i⟨[A_i, H]⟩` for every pool matrix.
pub fn adapt_gradient_matrices<S: Ensemble + ?Sized>(pool: &[SparseMatrix], state: &S, h: &SparseMatrix) -> Result<Vec<f64>> {
    check_pool(pool)?;
    let mut out = vec![0.0; pool.len()];
    for (p, v) in state.components() {
        let hv = h.mul_vec(v);
        for (i, a) in pool.iter().enumerate() {
            let av = a.mul_vec(v);
            // i(⟨Aψ|Hψ⟩ - ⟨Hψ|Aψ⟩) = -2 Im⟨Aψ|Hψ⟩
            out[i] += -2.0 * p * inner(&av, &hv).im;
        }
    }
    Ok(out)
}

pub fn adapt_gradient<S: Ensemble + ?Sized>(pool: &OperatorPool, state: &S, h: &OperatorSum) -> Result<Vec<f64>> {
    let mats = pool.matrices(state.sector())?;
    adapt_gradient_matrices(&mats, state, &build_matrix(h, state.sector())?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianReport {
    pub matrix: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns match `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl HessianReport {
    fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let (eigenvalues, eigenvectors) = eigh_real(&matrix);
        Self { matrix, eigenvalues, eigenvectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn unstable_direction(&self) -> Vec<f64> {
        self.eigenvectors.column(0).iter().copied().collect()
    }
}

/// `-½(⟨[A_i,[A_j,H]]⟩ + ⟨[A_j,[A_i,H]]⟩)`.
pub fn adapt_hessian_matrices<S: Ensemble + ?Sized>(pool: &[SparseMatrix], state: &S, h: &SparseMatrix) -> Result<HessianReport> {
    check_pool(pool)?;
    let n = pool.len();
    let mut m = DMatrix::zeros(n, n);
    for (p, v) in state.components() {
        let hv = h.mul_vec(v);
        let a: Vec<CVector> = pool.iter().map(|x| x.mul_vec(v)).collect();
        let b: Vec<CVector> = pool.iter().map(|x| x.mul_vec(&hv)).collect();
        let c: Vec<CVector> = a.iter().map(|x| h.mul_vec(x)).collect();
        // ⟨[A_i,[A_j,H]]⟩ = 2 Re⟨a_i|b_j⟩ - 2 Re⟨a_i|H a_j⟩
        let nested = |i: usize, j: usize| 2.0 * inner(&a[i], &b[j]).re - 2.0 * inner(&a[i], &c[j]).re;
        for i in 0..n {
            for j in 0..=i {
                let val = -0.5 * p * (nested(i, j) + nested(j, i));
                m[(i, j)] += val;
                if i != j {
                    m[(j, i)] += val;
                }
            }
        }
    }
    Ok(HessianReport::from_matrix(m))
}

pub fn adapt_hessian<S: Ensemble + ?Sized>(pool: &OperatorPool, state: &S, h: &OperatorSum) -> Result<HessianReport> {
    let mats = pool.matrices(state.sector())?;
    adapt_hessian_matrices(&mats, state, &build_matrix(h, state.sector())?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub cost: f64,
    pub exact_cost: f64,
    pub shots_cumulative: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Eigenvalues of the parameter Hessian below `-curvature_tol` trigger an escape step.
    pub curvature_tol: f64,
    /// Pool for ADAPT growth; `None` keeps the circuit structure fixed.
    pub growth: Option<OperatorPool>,
    pub max_layers: usize,
    /// Outer rounds of (quasi-Newton, curvature check, growth).
    pub max_rounds: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 2000, grad_tol: 1e-8, curvature_tol: 1e-6, growth: None, max_layers: 32, max_rounds: 60 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub circuit: VariationalCircuit,
    pub cost: f64,
    pub added_layers: usize,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Hessian of the cost in circuit angles from differences of exact gradients.
fn parameter_hessian(engine: &CircuitEngine, angles: &[f64], reference: &Reference) -> Result<DMatrix<f64>> {
    let n = angles.len();
    let h = 1e-4;
    let mut m = DMatrix::zeros(n, n);
    let mut work = angles.to_vec();
    for j in 0..n {
        work[j] = angles[j] + h;
        let gp = engine.cost_and_gradient(&work, reference)?.1;
        work[j] = angles[j] - h;
        let gm = engine.cost_and_gradient(&work, reference)?.1;
        work[j] = angles[j];
        for i in 0..n {
            m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Best point along `±t·dir` over a halving ladder of step lengths, if it lowers the cost.
fn escape_step(engine: &CircuitEngine, angles: &[f64], dir: &[f64], reference: &Reference, current: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut t = 1.0;
    for _ in 0..12 {
        for sign in [1.0, -1.0] {
            let trial: Vec<f64> = angles.iter().zip(dir).map(|(a, d)| a + sign * t * d).collect();
            let value = engine.cost_value(&trial, reference)?;
            if value < current - 1e-12 && best.as_ref().is_none_or(|b| value < b.1) {
                best = Some((trial, value));
            }
        }
        t *= 0.5;
    }
    Ok(best)
}

/// Quasi-Newton descent with escapes along negative-curvature directions and,
/// optionally, ADAPT growth from a pool.
pub fn optimize(circuit: &VariationalCircuit, cost: &CostSpec, options: &OptimizeOptions) -> Result<OptimizeOutcome> {
    let cost_op = cost.operator();
    let sector = circuit.reference.sector().clone();
    let reference = &circuit.reference;
    let pool_mats = match &options.growth {
        Some(pool) => Some(pool.matrices(&sector)?),
        None => None,
    };
    let mut current = circuit.clone();
    let mut engine = CircuitEngine::for_circuit(&current, &cost_op)?;
    let mut angles = current.angles();
    let mut trajectory = Vec::new();
    let mut added = 0;
    let bfgs_opts = BfgsOptions { grad_tol: options.grad_tol, max_iter: options.max_iter, ..Default::default() };
    let mut value = engine.cost_value(&angles, reference)?;
    let mut settled = false;
    for round in 0..options.max_rounds {
        if !angles.is_empty() {
            let res = bfgs(
                |x| engine.cost_and_gradient(x, reference).unwrap_or((f64::INFINITY, vec![0.0; x.len()])),
                &angles,
                &bfgs_opts,
            );
            angles = res.x;
            value = res.value;
        }
        trajectory.push(TrajectoryRecord { iter: round, theta: angles.clone(), cost: value, exact_cost: value, shots_cumulative: 0 });
        if !angles.is_empty() {
            let hess = HessianReport::from_matrix(parameter_hessian(&engine, &angles, reference)?);
            if hess.min_eigenvalue() < -options.curvature_tol {
                if let Some((next, v)) = escape_step(&engine, &angles, &hess.unstable_direction(), reference, value)? {
                    angles = next;
                    value = v;
                    continue;
                }
            }
        }
        let Some(mats) = &pool_mats else {
            settled = true;
            break;
        };
        if current.depth() >= options.max_layers {
            settled = true;
            break;
        }
        let state = engine.apply(&angles, reference)?;
        let cm = engine.cost_matrix();
        let grad = adapt_gradient_matrices(mats, &state, cm)?;
        let (best, gmax) = grad.iter().enumerate().fold((0, 0.0), |acc, (i, g)| if g.abs() > acc.1 { (i, g.abs()) } else { acc });
        let picks: Vec<usize> = if gmax >= options.grad_tol {
            vec![best]
        } else {
            let hess = adapt_hessian_matrices(mats, &state, cm)?;
            if hess.min_eigenvalue() >= -options.curvature_tol {
                settled = true;
                break;
            }
            let dir = hess.unstable_direction();
            (0..dir.len()).filter(|&i| dir[i].abs() > ADAPT_WEIGHT_CUTOFF).collect()
        };
        let pool = options.growth.as_ref().expect("pool present");
        for &i in &picks {
            if current.depth() >= options.max_layers {
                break;
            }
            current.layers.push(Layer { generator: pool.candidates()[i].clone(), angle: 0.0 });
            angles.push(0.0);
            added += 1;
        }
        current.set_angles(&angles)?;
        engine = CircuitEngine::for_circuit(&current, &cost_op)?;
    }
    if !settled {
        return Err(Error::IterationCap(options.max_rounds));
    }
    current.set_angles(&angles)?;
    Ok(OptimizeOutcome { circuit: current, cost: value, added_layers: added, trajectory })
}

#[cfg(test)]
mod tests;
