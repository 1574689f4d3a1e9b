//! End-to-end study drivers shared by the command-line runner and the acceptance suite.
//!
//! Each driver takes plain parameters, runs one complete experiment and returns
//! serializable records. Randomness enters only through explicit seeds.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exact::{ground_state, kubo_lehmann, momenta, Channel, GroundState};
use crate::hamlearn::{gibbs_learn, ground_space_fidelity, learn, AnsatzTerm, GibbsObjective, LearnProblem, LearnResult, LinearConstraint};
use crate::linalg::CMatrix;
use crate::opalg::models::pair_correlation_sum;
use crate::opalg::{build_matrix, dwave_correlator, expectation, hubbard_ladder, LadderTerm, OpKind, OperatorSum, Pauli, QuantumState, Sector};
use crate::optim::BfgsOptions;
use crate::shl::{
    heisenberg_chain, momentum_ansatz, pair_generators, ring_exchange_model, shl_learn, single_spin_generators, ExcitationLevel, PeakList, Poles, ShlOptions,
    ShlTrajectory, SpectralChannel, SpectralModel, Spectrum,
};
use crate::staircase::{cim_mpo, StaircaseCircuit, TwoQubitGate};
use crate::varcirc::{optimize, pattern_search, CircuitEngine, CostSpec, OptimizeOptions, PatternOptions, Reference, ShotModel, VariationalCircuit};

/// Variance below which a learned ladder Hamiltonian counts as a faithful parent.
pub const GOOD_LEARNING_VARIANCE: f64 = 0.1;

/// Generator types cycled inside one depth unit of the quench circuit.
pub const QUENCH_CYCLE: [LadderTerm; 3] = [LadderTerm::HopLeg, LadderTerm::HopRung, LadderTerm::Onsite];

/// Deterministic child seed for the named stream `stream` and item `index`.
pub fn sub_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a keeps stream ids stable across platforms and releases
    let id = stream.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Two-leg Hubbard ladder at fixed filling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderModel {
    pub rungs: usize,
    pub t_x: f64,
    pub t_y: f64,
    pub u: f64,
    pub n_up: usize,
    pub n_down: usize,
}

impl Default for LadderModel {
    fn default() -> Self {
        Self { rungs: 4, t_x: -1.0, t_y: -1.0, u: 4.0, n_up: 2, n_down: 2 }
    }
}

impl LadderModel {
    pub fn validate(&self) -> Result<()> {
        let sites = 2 * self.rungs;
        if self.rungs < 2 || self.n_up > sites || self.n_down > sites {
            return Err(Error::InvalidInput(format!("ladder needs at least 2 rungs and fillings within {sites} sites")));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        2 * self.rungs
    }

    pub fn sector(&self) -> Sector {
        Sector::fermion(self.sites(), self.n_up, self.n_down)
    }

    pub fn hamiltonian(&self) -> OperatorSum {
        hubbard_ladder(self.rungs, self.t_x, self.t_y, self.u)
    }

    pub fn pair_sum(&self) -> OperatorSum {
        pair_correlation_sum(self.rungs)
    }

    pub fn ground(&self) -> Result<GroundState> {
        self.validate()?;
        ground_state(&self.hamiltonian(), &self.sector())
    }

    /// `⟨Δ†_1 Δ_{1+r}⟩` for `r = 0..rungs`.
    pub fn correlator_profile(&self, state: &Reference) -> Result<Vec<f64>> {
        (0..self.rungs).map(|r| Ok(expectation(state, &dwave_correlator(self.rungs, 0, r)?)?.re)).collect()
    }
}

/// `depth` repetitions of the quench cycle.
pub fn quench_generators(rungs: usize, depth: usize) -> Vec<OperatorSum> {
    (0..QUENCH_CYCLE.len() * depth).map(|k| QUENCH_CYCLE[k % QUENCH_CYCLE.len()].operator(rungs)).collect()
}

/// Multi-start settings for circuit optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOptions {
    /// Random starts in addition to the warm start.
    pub restarts: usize,
    /// Random angles are drawn uniformly from `[-width, width]`.
    pub width: f64,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { restarts: 8, width: 1.0, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthPoint {
    pub lambda: f64,
    pub depth: usize,
    pub cost: f64,
    pub pair_sum: f64,
    pub correlator: Vec<f64>,
    pub angles: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizedLadder {
    pub point: DepthPoint,
    pub state: Reference,
}

/// Optimizes `⟨H₀⟩ - λ Σ_r ⟨Δ†_1 Δ_{1+r}⟩` at each depth in increasing order. Every
/// depth starts from the previous optimum padded with zero angles, plus seeded
/// random restarts; the lowest cost wins.
pub fn optimize_depths(model: &LadderModel, reference: &Reference, lambda: f64, depths: &[usize], search: &SearchOptions) -> Result<Vec<OptimizedLadder>> {
    if depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("depths must be strictly increasing".into()));
    }
    let cost = CostSpec::new(model.hamiltonian(), model.pair_sum(), lambda)?;
    let pair = model.pair_sum();
    let options = OptimizeOptions::default();
    let mut previous: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(depths.len());
    for (slot, &depth) in depths.iter().enumerate() {
        let base = VariationalCircuit::new(reference.clone()).with_layers(&quench_generators(model.rungs, depth));
        let n = base.depth();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(search.seed, "restarts", slot as u64));
        let mut best: Option<(VariationalCircuit, f64)> = None;
        for start in 0..=search.restarts {
            let angles: Vec<f64> = if start == 0 {
                let mut a = previous.clone();
                a.resize(n, 0.0);
                a
            } else {
                (0..n).map(|_| rng.random_range(-search.width..=search.width)).collect()
            };
            let mut circuit = base.clone();
            circuit.set_angles(&angles)?;
            let result = optimize(&circuit, &cost, &options)?;
            if best.as_ref().is_none_or(|b| result.cost < b.1) {
                best = Some((result.circuit, result.cost));
            }
        }
        let (circuit, value) = best.expect("at least the warm start ran");
        previous = circuit.angles();
        let state = crate::varcirc::apply(&circuit)?;
        let point = DepthPoint {
            lambda,
            depth,
            cost: value,
            pair_sum: expectation(&state, &pair)?.re,
            correlator: model.correlator_profile(&state)?,
            angles: previous.clone(),
        };
        out.push(OptimizedLadder { point, state });
    }
    Ok(out)
}

/// Learned ladder Hamiltonian with its quality measures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderFit {
    pub repulsive: bool,
    /// Leg hopping held fixed; all other couplings are learned.
    pub hop_x: f64,
    pub result: LearnResult,
    pub variance: f64,
    /// `|⟨ψ|gs(H_opt)⟩|²`, summed over a degenerate ground space.
    pub fidelity: f64,
}

impl LadderFit {
    /// Smallest learned coupling among the sign-constrained terms.
    pub fn min_constrained(&self) -> Option<f64> {
        self.result.terms.iter().filter(|t| t.constrained).map(|t| t.coefficient).reduce(f64::min)
    }
}

/// Learns `H = hop_x·T_x + Σ c_i h_i` over the remaining extended-Hubbard terms,
/// with the leg hopping fixed at its reference value so that `H = 0` is excluded.
/// `repulsive` bounds every density-density coupling below by zero.
pub fn learn_ladder(model: &LadderModel, state: &QuantumState, repulsive: bool) -> Result<LadderFit> {
    let free: Vec<LadderTerm> = LadderTerm::ALL.iter().copied().filter(|t| *t != LadderTerm::HopLeg).collect();
    let terms: Vec<AnsatzTerm> = free.iter().map(|t| AnsatzTerm::new(t.label(), t.operator(model.rungs))).collect();
    let hop_x = -model.t_x;
    let mut problem = LearnProblem::new(LadderTerm::HopLeg.operator(model.rungs).scale_real(hop_x), terms).with_alpha(None);
    if repulsive {
        let bounds = free.iter().enumerate().filter(|(_, t)| t.is_density_density()).map(|(i, _)| LinearConstraint::lower_bound(i, 0.0)).collect();
        problem = problem.with_constraints(bounds);
    }
    let result = learn(state, &problem)?;
    let fidelity = ground_space_fidelity(state, &problem.hamiltonian(&result.coefficients))?;
    Ok(LadderFit { repulsive, hop_x, variance: result.variance, fidelity, result })
}

fn pure(state: &Reference) -> Result<&QuantumState> {
    match state {
        Reference::Pure(s) => Ok(s),
        Reference::Mixed(_) => Err(Error::InvalidInput("expected a pure state".into())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwaveReport {
    pub model: LadderModel,
    pub lambda: f64,
    /// Ground state of `H₀` (depth 0).
    pub initial: DepthPoint,
    pub depths: Vec<DepthPoint>,
    /// Learned Hamiltonian at the deepest circuit.
    pub learned: LadderFit,
}

/// Pair-correlation enhancement versus depth, then learning at the deepest circuit.
pub fn dwave_study(model: &LadderModel, lambda: f64, depths: &[usize], repulsive: bool, search: &SearchOptions) -> Result<DwaveReport> {
    let gs = model.ground()?;
    let reference = Reference::Pure(gs.state);
    let runs = optimize_depths(model, &reference, lambda, depths, search)?;
    let last = runs.last().ok_or_else(|| Error::InvalidInput("at least one depth is required".into()))?;
    let learned = learn_ladder(model, pure(&last.state)?, repulsive)?;
    let initial = DepthPoint {
        lambda,
        depth: 0,
        cost: expectation(&reference, &model.hamiltonian())?.re - lambda * expectation(&reference, &model.pair_sum())?.re,
        pair_sum: expectation(&reference, &model.pair_sum())?.re,
        correlator: model.correlator_profile(&reference)?,
        angles: Vec::new(),
    };
    Ok(DwaveReport { model: *model, lambda, initial, depths: runs.into_iter().map(|r| r.point).collect(), learned })
}

/// One cell of a learning map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapCell {
    pub lambda: f64,
    pub depth: usize,
    pub variance: f64,
    pub fidelity: f64,
    pub pair_sum: f64,
    /// Smallest sign-constrained coupling, when constraints were imposed.
    pub min_constrained: Option<f64>,
}

impl MapCell {
    pub fn good(&self) -> bool {
        self.variance < GOOD_LEARNING_VARIANCE
    }
}

/// Variance and fidelity of the learned Hamiltonian over a `(λ, d)` grid.
pub fn learning_map(model: &LadderModel, lambdas: &[f64], depths: &[usize], repulsive: bool, search: &SearchOptions) -> Result<Vec<MapCell>> {
    let reference = Reference::Pure(model.ground()?.state);
    let mut cells = Vec::with_capacity(lambdas.len() * depths.len());
    for (li, &lambda) in lambdas.iter().enumerate() {
        cells.extend(learning_map_row(model, &reference, lambda, li, depths, repulsive, search)?);
    }
    Ok(cells)
}

/// Row `row` of [`learning_map`]; rows are independent, so they may run in any order.
pub fn learning_map_row(
    model: &LadderModel,
    reference: &Reference,
    lambda: f64,
    row: usize,
    depths: &[usize],
    repulsive: bool,
    search: &SearchOptions,
) -> Result<Vec<MapCell>> {
    let local = SearchOptions { seed: sub_seed(search.seed, "learning-map", row as u64), ..*search };
    optimize_depths(model, reference, lambda, depths, &local)?
        .into_iter()
        .map(|run| {
            let fit = learn_ladder(model, pure(&run.state)?, repulsive)?;
            Ok(MapCell {
                lambda,
                depth: run.point.depth,
                variance: fit.variance,
                fidelity: fit.fidelity,
                pair_sum: run.point.pair_sum,
                min_constrained: fit.min_constrained(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnprepareCell {
    pub lambda: f64,
    pub depth: usize,
    pub variance: f64,
    pub fidelity: f64,
    /// `|⟨ψ₀|ψ(T)⟩|²` after sweeping from `H_opt` back to `H₀`.
    pub return_probability: f64,
}

/// Adiabatic check of learned Hamiltonians: the optimized state is evolved under
/// `(1-τ)H_opt + τH₀` and compared with the ground state of `H₀`.
pub fn unprepare_map(model: &LadderModel, lambdas: &[f64], depths: &[usize], total_time: f64, steps: usize, search: &SearchOptions) -> Result<Vec<UnprepareCell>> {
    let gs = model.ground()?;
    let reference = Reference::Pure(gs.state.clone());
    let h0 = model.hamiltonian();
    let mut cells = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        let local = SearchOptions { seed: sub_seed(search.seed, "unprepare", li as u64), ..*search };
        for run in optimize_depths(model, &reference, lambda, depths, &local)? {
            let psi = pure(&run.state)?;
            let fit = learn_ladder(model, psi, false)?;
            let free: Vec<LadderTerm> = LadderTerm::ALL.iter().copied().filter(|t| *t != LadderTerm::HopLeg).collect();
            let mut h_opt = LadderTerm::HopLeg.operator(model.rungs).scale_real(fit.hop_x);
            for (t, c) in free.iter().zip(&fit.result.coefficients) {
                h_opt = &h_opt + &t.operator(model.rungs).scale_real(*c);
            }
            let sweep = crate::exact::adiabatic_unprepare(&h_opt.simplify(), &h0, psi, total_time, steps, Some(&gs.state))?;
            cells.push(UnprepareCell {
                lambda,
                depth: run.point.depth,
                variance: fit.variance,
                fidelity: fit.fidelity,
                return_probability: sweep.return_probability.unwrap_or(0.0),
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalPoint {
    pub temperature: f64,
    pub depth: usize,
    pub initial_cost: f64,
    pub optimized_cost: f64,
    pub purity_before: f64,
    pub purity_after: f64,
    pub pair_sum: f64,
    /// Couplings of the learned Gibbs Hamiltonian, in `LadderTerm::ALL` order.
    pub gibbs_coefficients: Vec<f64>,
    pub gibbs_distance: f64,
    /// Cost evaluated on the Gibbs state of the learned Hamiltonian.
    pub gibbs_cost: f64,
}

fn dense_expectation(rho: &CMatrix, m: &CMatrix) -> f64 {
    (rho * m).trace().re
}

/// Finite-temperature enhancement: optimize from a Gibbs state of `H₀`, then learn
/// the Gibbs Hamiltonian of the optimized mixed state and re-evaluate the cost on it.
pub fn finite_t_study(model: &LadderModel, lambda: f64, temperatures: &[f64], depth: usize, search: &SearchOptions) -> Result<Vec<ThermalPoint>> {
    model.validate()?;
    let sector = model.sector();
    let h0 = model.hamiltonian();
    let pair = model.pair_sum();
    let cost_op = CostSpec::new(h0.clone(), pair.clone(), lambda)?;
    let cost_dense = build_matrix(&cost_op.operator(), &sector)?.to_dense();
    let terms: Vec<AnsatzTerm> = LadderTerm::ALL.iter().map(|t| AnsatzTerm::new(t.label(), t.operator(model.rungs))).collect();
    let empty = OperatorSum::zero(OpKind::Fermion, model.sites());
    let bfgs = BfgsOptions { grad_tol: 1e-8, max_iter: 500, ..Default::default() };
    let mut out = Vec::with_capacity(temperatures.len());
    for (ti, &temperature) in temperatures.iter().enumerate() {
        let thermal = VariationalCircuit::thermal(&h0, temperature, &sector)?;
        let local = SearchOptions { seed: sub_seed(search.seed, "finite-t", ti as u64), ..*search };
        let run = optimize_depths(model, &thermal.reference, lambda, &[depth], &local)?.pop().expect("one depth requested");
        let engine = CircuitEngine::for_circuit(&VariationalCircuit::new(thermal.reference.clone()), &cost_op.operator())?;
        let initial_cost = engine.cost_value(&[], &thermal.reference)?;
        let Reference::Mixed(rho) = &run.state else {
            return Err(Error::InvalidInput("thermal circuit returned a pure state".into()));
        };
        let beta = 1.0 / temperature;
        let fit = gibbs_learn(rho, &empty, &terms, beta, &bfgs)?;
        let objective = GibbsObjective::new(rho, &empty, &terms, beta)?;
        let learned = objective.density(&fit.coefficients);
        out.push(ThermalPoint {
            temperature,
            depth,
            initial_cost,
            optimized_cost: run.point.cost,
            purity_before: thermal.reference.purity(),
            purity_after: rho.purity(),
            pair_sum: run.point.pair_sum,
            gibbs_coefficients: fit.coefficients,
            gibbs_distance: fit.distance,
            gibbs_cost: dense_expectation(&learned, &cost_dense),
        });
    }
    Ok(out)
}

/// Settings of the shot-limited optimization study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOptions {
    pub depth: usize,
    pub shots_per_eval: u64,
    pub budget: u64,
    pub runs: usize,
    pub seed: u64,
    pub pattern: PatternOptions,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        Self { depth: 5, shots_per_eval: 15, budget: 30_000, runs: 50, seed: 7, pattern: PatternOptions::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    /// Exact pair sum of the unoptimized circuit.
    pub baseline: f64,
    /// Exact pair sum at the end of each run.
    pub finals: Vec<f64>,
    pub shots_used: Vec<u64>,
    pub mean_gain: f64,
    pub std_error: f64,
    pub t_statistic: f64,
    /// One-sided p-value for "mean gain ≤ 0".
    pub p_value: f64,
}

/// Independent shot-limited pattern searches maximizing `Σ_r ⟨Δ†_1 Δ_{1+r}⟩`
/// from the ground state, followed by a one-sided t-test on the exact gains.
pub fn noise_budget(model: &LadderModel, opts: &BudgetOptions) -> Result<BudgetReport> {
    if opts.runs < 2 || opts.shots_per_eval == 0 {
        return Err(Error::InvalidInput("budget study needs at least two runs and one shot per evaluation".into()));
    }
    let gs = model.ground()?;
    let pair = model.pair_sum();
    let circuit = VariationalCircuit::new(Reference::Pure(gs.state)).with_layers(&quench_generators(model.rungs, opts.depth));
    let cost = CostSpec::new(OperatorSum::zero(OpKind::Fermion, model.sites()), pair.clone(), 1.0)?;
    let engine = CircuitEngine::for_circuit(&circuit, &pair)?;
    let baseline = engine.cost_value(&circuit.angles(), &circuit.reference)?;
    let mut finals = Vec::with_capacity(opts.runs);
    let mut shots_used = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let model = ShotModel { shots_per_eval: opts.shots_per_eval, rng_seed: sub_seed(opts.seed, "noise-budget", run as u64) };
        let res = pattern_search(&circuit, &cost, &model, opts.budget, &opts.pattern)?;
        finals.push(engine.cost_value(&res.theta, &circuit.reference)?);
        shots_used.push(res.shots_used);
    }
    let n = finals.len() as f64;
    let gains: Vec<f64> = finals.iter().map(|f| f - baseline).collect();
    let mean_gain = gains.iter().sum::<f64>() / n;
    let sd = (gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let std_error = sd / n.sqrt();
    let t_statistic = if std_error > 0.0 { mean_gain / std_error } else { f64::INFINITY * mean_gain.signum() };
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let p_value = if t_statistic.is_finite() { 1.0 - dist.cdf(t_statistic) } else if t_statistic > 0.0 { 0.0 } else { 1.0 };
    Ok(BudgetReport { baseline, finals, shots_used, mean_gain, std_error, t_statistic, p_value })
}

/// Kubo peak lists and learning trajectory of one spectral-learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShlStudy {
    pub truth: Vec<f64>,
    pub start: Vec<f64>,
    /// `(k, peaks)` per momentum, or a single entry with `k = 0` for unresolved models.
    pub targets: Vec<(f64, PeakList)>,
    /// Variational spectra of the learned Hamiltonian, one per target.
    pub learned: Vec<Poles>,
    pub trajectory: ShlTrajectory,
}

fn learned_spectra(h: &OperatorSum, sites: usize, channels: &[SpectralChannel], opts: &ShlOptions) -> Result<Vec<Poles>> {
    SpectralModel::new(sites, channels, opts.ground_sector.clone(), opts.variance_tolerance)?.spectra(h)
}

/// Recovers the ring-exchange coupling of the three-spin model from the `XYZ` response.
pub fn ring_exchange_study(bz: f64, j_heis: f64, j_ring: f64, start: f64, opts: &ShlOptions) -> Result<ShlStudy> {
    let h = ring_exchange_model(bz, j_heis, j_ring);
    let gs = ground_state(&h, &Sector::spin(3))?;
    let probe = OperatorSum::parse_pauli("XYZ", 1.0)?;
    let lehmann = kubo_lehmann(&h, &gs.state, &probe, &probe)?;
    let peaks = PeakList::from_lehmann(&lehmann, 1e-12);
    let ansatz = single_spin_generators(3, &[Pauli::X, Pauli::Y, Pauli::Z]).join(&pair_generators(3));
    let channels = vec![SpectralChannel { drive: probe.clone(), probe, ansatz, target: Spectrum::Peaks(peaks.clone()) }];
    let trajectory = shl_learn(|p: &[f64]| ring_exchange_model(bz, j_heis, p[0]), 3, &channels, &[start], opts)?;
    let learned = learned_spectra(&ring_exchange_model(bz, j_heis, trajectory.params[0]), 3, &channels, opts)?;
    Ok(ShlStudy { truth: vec![j_ring], start: vec![start], targets: vec![(0.0, peaks)], learned, trajectory })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainPhase {
    Ferro,
    Antiferro,
}

impl ChainPhase {
    /// Sector of the reference ground state.
    pub fn ground_sector(self, n: usize) -> Sector {
        match self {
            ChainPhase::Ferro => Sector::spin_magnetization(n, -(n as i64)),
            ChainPhase::Antiferro => Sector::spin_magnetization(n, 0),
        }
    }

    pub fn channel(self) -> Channel {
        match self {
            ChainPhase::Ferro => Channel::RaisingLowering,
            ChainPhase::Antiferro => Channel::Symmetric,
        }
    }

    pub fn level(self) -> ExcitationLevel {
        match self {
            ChainPhase::Ferro => ExcitationLevel::One,
            ChainPhase::Antiferro => ExcitationLevel::Three,
        }
    }
}

/// Kubo peak list per momentum for the Heisenberg chain in `phase`.
pub fn chain_targets(phase: ChainPhase, n: usize, bz: f64, j: f64) -> Result<Vec<(f64, PeakList)>> {
    let h = heisenberg_chain(n, bz, j);
    let gs = ground_state(&h, &phase.ground_sector(n))?;
    if gs.degenerate {
        return Err(Error::DegenerateGroundState { gap: gs.gap });
    }
    let psi = gs.state.embed(&Sector::spin(n))?;
    momenta(n)
        .into_iter()
        .map(|k| {
            let (v, o) = phase.channel().operators(n, k);
            Ok((k, PeakList::from_lehmann(&kubo_lehmann(&h, &psi, &v, &o)?, 1e-12)))
        })
        .collect()
}

/// Recovers `(B_z, J)` of a Heisenberg chain from its momentum-resolved response.
pub fn chain_study(phase: ChainPhase, n: usize, truth: (f64, f64), start: (f64, f64), opts: &ShlOptions) -> Result<ShlStudy> {
    let targets = chain_targets(phase, n, truth.0, truth.1)?;
    let channels: Vec<SpectralChannel> = targets
        .iter()
        .map(|(k, peaks)| {
            let (drive, probe) = phase.channel().operators(n, *k);
            SpectralChannel { drive, probe, ansatz: momentum_ansatz(n, *k, phase.level()), target: Spectrum::Peaks(peaks.clone()) }
        })
        .collect();
    let opts = ShlOptions { ground_sector: Some(phase.ground_sector(n)), ..opts.clone() };
    let trajectory = shl_learn(|p: &[f64]| heisenberg_chain(n, p[0], p[1]), n, &channels, &[start.0, start.1], &opts)?;
    let learned = learned_spectra(&heisenberg_chain(n, trajectory.params[0], trajectory.params[1]), n, &channels, &opts)?;
    Ok(ShlStudy {
        truth: vec![truth.0, truth.1],
        start: vec![start.0, start.1],
        targets,
        learned,
        trajectory,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpoTiming {
    pub sites: usize,
    /// Best of the repeats, in seconds.
    pub seconds: f64,
    pub value: f64,
}

/// Wall-clock cost of the cluster-Ising MPO expectation on a random staircase.
pub fn mpo_timings(sizes: &[usize], g: f64, repeats: usize, seed: u64) -> Result<Vec<MpoTiming>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "staircase-gate", 0));
    let thetas: Vec<f64> = (0..crate::staircase::GATE_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gate = TwoQubitGate::from_slice(&thetas)?;
    sizes
        .iter()
        .map(|&n| {
            let mpo = cim_mpo(g, n)?;
            let circuit = StaircaseCircuit::new(gate, n)?;
            let mut best = f64::INFINITY;
            let mut value = 0.0;
            for _ in 0..repeats.max(1) {
                let clock = Instant::now();
                value = circuit.mpo_expectation(&mpo)?;
                best = best.min(clock.elapsed().as_secs_f64());
            }
            Ok(MpoTiming { sites: n, seconds: best, value })
        })
        .collect()
}

/// Least-squares slope of `log t` against `log n`.
pub fn scaling_exponent(timings: &[MpoTiming]) -> f64 {
    let pts: Vec<(f64, f64)> = timings.iter().map(|t| ((t.sites as f64).ln(), t.seconds.max(1e-12).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
