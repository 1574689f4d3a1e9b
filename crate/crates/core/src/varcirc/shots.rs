use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{CircuitEngine, CostSpec, Reference, TrajectoryRecord, VariationalCircuit};
use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::opalg::{build_matrix_projected, Ensemble, OpKind, OperatorSum, Sector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotModel {
    pub shots_per_eval: u64,
    pub rng_seed: u64,
}

/// Per-Pauli-term measurement simulator for one cost operator.
#[derive(Debug, Clone)]
pub struct ShotEstimator {
    constant: f64,
    terms: Vec<(f64, SparseMatrix)>,
}

impl ShotEstimator {
    pub fn new(cost: &OperatorSum, sector: &Sector) -> Result<Self> {
        let spin = match cost.kind() {
            OpKind::Spin => cost.simplify(),
            OpKind::Fermion => cost.jordan_wigner().simplify(),
        };
        let mut constant = 0.0;
        let mut terms = Vec::new();
        for p in spin.paulis() {
            if p.coeff.im.abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("non-Hermitian cost term {}", p.label())));
            }
            if p.weight() == 0 {
                constant += p.coeff.re;
                continue;
            }
            let mut unit = p.clone();
            unit.coeff = crate::linalg::ONE;
            let single = OperatorSum::from_paulis(spin.site_count(), vec![unit]);
            terms.push((p.coeff.re, build_matrix_projected(&single, sector)?));
        }
        Ok(Self { constant, terms })
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Exact expectation, for diagnostics.
    pub fn exact<S: Ensemble + ?Sized>(&self, state: &S) -> f64 {
        self.constant + self.terms.iter().map(|(c, m)| c * term_mean(m, state)).sum::<f64>()
    }

    /// Estimate and standard error from `shots` projective measurements per term.
    /// The random stream is fixed by `(seed, eval_index)`.
    pub fn sample<S: Ensemble + ?Sized>(&self, state: &S, shots: u64, seed: u64, eval_index: u64) -> (f64, f64) {
        if shots == 0 {
            return (self.exact(state), f64::INFINITY);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(eval_index);
        let mut estimate = self.constant;
        let mut var = 0.0;
        for (c, m) in &self.terms {
            let mean = term_mean(m, state).clamp(-1.0, 1.0);
            let p_up = 0.5 * (1.0 + mean);
            let ups = Binomial::new(shots, p_up).expect("probability in [0,1]").sample(&mut rng);
            let m_hat = 2.0 * ups as f64 / shots as f64 - 1.0;
            estimate += c * m_hat;
            var += c * c * (1.0 - m_hat * m_hat) / shots as f64;
        }
        (estimate, var.sqrt())
    }
}

fn term_mean<S: Ensemble + ?Sized>(m: &SparseMatrix, state: &S) -> f64 {
    state.components().into_iter().map(|(p, v)| p * m.quadratic(v).re).sum()
}

/// Sampled estimate of the cost on the circuit output, using stream `eval_index`.
pub fn sampled_cost(circuit: &VariationalCircuit, cost: &CostSpec, model: &ShotModel, eval_index: u64) -> Result<(f64, f64)> {
    let op = cost.operator();
    let est = ShotEstimator::new(&op, circuit.reference.sector())?;
    let state = super::apply(circuit)?;
    Ok(est.sample(&state, model.shots_per_eval, model.rng_seed, eval_index))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatternOptions {
    pub initial_step: f64,
    pub shrink: f64,
    /// Accept a poll point only when it beats the incumbent by this many pooled standard errors.
    pub margin: f64,
    /// Floor for the shrinking step; below it single-coordinate moves are lost in shot noise.
    pub min_step: f64,
}

impl Default for PatternOptions {
    fn default() -> Self {
        Self { initial_step: 0.3, shrink: 0.5, margin: 1.0, min_step: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSearchResult {
    pub theta: Vec<f64>,
    pub shots_used: u64,
    pub evaluations: u64,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Coordinate pattern search on a noisy objective. `eval(x, index)` returns
/// `(estimate, stderr)`; `exact(x)` is only logged. Every call to `eval`
/// consumes `cost_per_eval` from `budget`; the search stops when the budget
/// cannot pay for another call. A poll point that looks better is evaluated a
/// second time and replaces the incumbent only if the fresh estimate also beats
/// it by `margin` pooled standard errors.
pub fn pattern_search_with<E, X>(mut eval: E, mut exact: X, x0: &[f64], cost_per_eval: u64, budget: u64, opts: &PatternOptions) -> PatternSearchResult
where
    E: FnMut(&[f64], u64) -> (f64, f64),
    X: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut used = 0u64;
    let mut count = 0u64;
    let mut trajectory = Vec::new();
    if cost_per_eval == 0 || budget < cost_per_eval || x.is_empty() {
        return PatternSearchResult { theta: x, shots_used: 0, evaluations: 0, trajectory };
    }
    let mut call = |x: &[f64], used: &mut u64, count: &mut u64| -> Option<(f64, f64)> {
        if *used + cost_per_eval > budget {
            return None;
        }
        let r = eval(x, *count);
        *used += cost_per_eval;
        *count += 1;
        Some(r)
    };
    let mut incumbent = Incumbent::default();
    let (e0, s0) = call(&x, &mut used, &mut count).expect("budget covers one call");
    incumbent.add(e0, s0);
    let mut step = opts.initial_step;
    let mut round = 0;
    trajectory.push(TrajectoryRecord { iter: 0, theta: x.clone(), cost: e0, exact_cost: exact(&x), shots_cumulative: used });
    'outer: loop {
        round += 1;
        if round > 1 {
            let Some((e, s)) = call(&x, &mut used, &mut count) else { break };
            incumbent.add(e, s);
        }
        let mut moved = false;
        'poll: for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] += sign * step;
                let Some((e, s)) = call(&trial, &mut used, &mut count) else { break 'outer };
                if !incumbent.beaten_by(e, s, opts.margin) {
                    continue;
                }
                let Some((e2, s2)) = call(&trial, &mut used, &mut count) else { break 'outer };
                if incumbent.beaten_by(e2, s2, opts.margin) {
                    x = trial;
                    incumbent = Incumbent::default();
                    incumbent.add(e2, s2);
                    moved = true;
                    break 'poll;
                }
            }
        }
        if !moved {
            step = (step * opts.shrink).max(opts.min_step);
        }
        trajectory.push(TrajectoryRecord { iter: round, theta: x.clone(), cost: incumbent.mean(), exact_cost: exact(&x), shots_cumulative: used });
    }
    if trajectory.last().is_none_or(|t| t.shots_cumulative != used) {
        trajectory.push(TrajectoryRecord { iter: round, theta: x.clone(), cost: incumbent.mean(), exact_cost: exact(&x), shots_cumulative: used });
    }
    PatternSearchResult { theta: x, shots_used: used, evaluations: count, trajectory }
}

/// Running average of repeated estimates at the current point.
#[derive(Default)]
struct Incumbent {
    sum: f64,
    var_sum: f64,
    n: f64,
}

impl Incumbent {
    fn add(&mut self, e: f64, s: f64) {
        self.sum += e;
        self.var_sum += s * s;
        self.n += 1.0;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn beaten_by(&self, e: f64, s: f64, margin: f64) -> bool {
        let se = self.var_sum.sqrt() / self.n;
        e < self.mean() - margin * (se * se + s * s).sqrt()
    }
}

/// Pattern search of a circuit's sampled cost under a total shot budget.
pub fn pattern_search(circuit: &VariationalCircuit, cost: &CostSpec, model: &ShotModel, budget: u64, opts: &PatternOptions) -> Result<PatternSearchResult> {
    let op = cost.operator();
    let engine = CircuitEngine::for_circuit(circuit, &op)?;
    let est = ShotEstimator::new(&op, circuit.reference.sector())?;
    let reference: &Reference = &circuit.reference;
    let run = |x: &[f64]| engine.apply(x, reference).expect("angles match circuit depth");
    Ok(pattern_search_with(
        |x, idx| est.sample(&run(x), model.shots_per_eval, model.rng_seed, idx),
        |x| est.exact(&run(x)),
        &circuit.angles(),
        model.shots_per_eval,
        budget,
        opts,
    ))
}
