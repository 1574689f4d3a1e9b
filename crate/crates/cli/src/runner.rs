//! One driver per experiment. Each writes its artifacts through [`Output`].

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use iqsim::cphl::{cphl_run, crossing, extension_ansatz, string_order_profile, uniform_grid, CphlConfig, ExactSolver, HamiltonianFamily, STRING_ORDER_LEVEL};
use iqsim::exact::{frequency_grid, kubo_lehmann, Susceptibility};
use iqsim::opalg::models::translated_sum;
use iqsim::opalg::{Pauli, QuantumState, Sector};
use iqsim::shl::{single_spin_generators, tdvp_matrices, two_spin_model, variational_susceptibility, PeakList, ResponseProblem, ShlOptions};
use iqsim::staircase::{fidelity_optimize, FidelityOptions};
use iqsim::studies::{self, sub_seed, BudgetOptions, ChainPhase, LadderModel, SearchOptions, ShlStudy};
use iqsim::varcirc::{PatternOptions, Reference};
use iqsim::{Error, C64};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ChainSection, ExperimentConfig, Experiment, KuboModel};

/// Failure of a run: numerical errors keep their kind for the exit code.
#[derive(Debug)]
pub enum RunError {
    Numerical(Error),
    Io(String),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Numerical(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Artifact writer that records every file it creates.
pub struct Output {
    dir: PathBuf,
    json: bool,
    csv: bool,
    pub files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, json: bool, csv: bool) -> RunResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), json, csv, files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> RunResult<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> RunResult<()> {
        if self.json {
            let mut w = self.create(name)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            std::io::Write::write_all(&mut w, b"\n")?;
        }
        Ok(())
    }

    /// Writes `header` then `rows`; nothing when CSV output is off.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> RunResult<()> {
        if self.csv {
            let mut w = csv::Writer::from_writer(self.create(name)?);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn spectrum(&mut self, name: &str, s: &Susceptibility) -> RunResult<()> {
        if self.csv {
            s.to_csv(self.create(name)?)?;
        }
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn search(cfg: &ExperimentConfig, stream: &str) -> SearchOptions {
    SearchOptions { restarts: cfg.search.restarts, width: cfg.search.width, seed: sub_seed(cfg.seed, stream, 0) }
}

pub fn run(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    match cfg.experiment {
        Experiment::Dwave => dwave(cfg, out),
        Experiment::LearningMap => learning_map(cfg, out),
        Experiment::FiniteT => finite_t(cfg, out),
        Experiment::NoiseBudget => noise_budget(cfg, out),
        Experiment::Unprepare => unprepare(cfg, out),
        Experiment::Cphl => cphl(cfg, out),
        Experiment::StaircaseBench => staircase(cfg, out),
        Experiment::ShlRing => {
            let r = &cfg.shl_ring;
            let study = studies::ring_exchange_study(r.bz, r.j_heis, r.j_ring, r.start, &shl_options(cfg))?;
            shl_outputs(cfg, &study, out)
        }
        Experiment::ShlFm => chain(cfg, ChainPhase::Ferro, &cfg.shl_fm.0, out),
        Experiment::ShlAfm => chain(cfg, ChainPhase::Antiferro, &cfg.shl_afm.0, out),
        Experiment::Kubo => kubo(cfg, out),
    }
}

fn ladder(cfg: &ExperimentConfig) -> RunResult<LadderModel> {
    cfg.ladder.validate()?;
    Ok(cfg.ladder)
}

fn dwave(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let d = &cfg.dwave;
    let report = studies::dwave_study(&ladder(cfg)?, d.lambda, &d.depths, d.repulsive, &search(cfg, "dwave"))?;
    out.json("result.json", &report)?;
    let rows = std::iter::once(&report.initial)
        .chain(&report.depths)
        .flat_map(|p| p.correlator.iter().enumerate().map(move |(r, v)| vec![p.depth.to_string(), r.to_string(), num(*v)]))
        .collect::<Vec<_>>();
    out.csv("correlator.csv", &["depth", "r", "value"], rows)
}

/// Worker count from `IQSIM_THREADS`, defaulting to the available parallelism.
pub fn threads() -> usize {
    std::env::var("IQSIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn learning_map(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let m = &cfg.learning_map;
    let model = ladder(cfg)?;
    let reference = Reference::Pure(model.ground()?.state);
    let opts = search(cfg, "learning-map");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads()).build().map_err(|e| RunError::Io(e.to_string()))?;
    // rows carry their own seeds, so the thread count never changes the result
    let rows: Vec<_> = pool.install(|| {
        m.lambdas
            .par_iter()
            .enumerate()
            .map(|(li, &lambda)| studies::learning_map_row(&model, &reference, lambda, li, &m.depths, m.repulsive, &opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let cells: Vec<_> = rows.into_iter().flatten().collect();
    out.json("map.json", &cells)?;
    out.csv(
        "map.csv",
        &["lambda", "depth", "variance", "fidelity", "pair_sum", "good"],
        cells.iter().map(|c| vec![num(c.lambda), c.depth.to_string(), num(c.variance), num(c.fidelity), num(c.pair_sum), c.good().to_string()]),
    )
}

fn finite_t(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let f = &cfg.finite_t;
    let points = studies::finite_t_study(&ladder(cfg)?, f.lambda, &f.temperatures, f.depth, &search(cfg, "finite-t"))?;
    out.json("finite_t.json", &points)?;
    out.csv(
        "finite_t.csv",
        &["temperature", "initial_cost", "optimized_cost", "gibbs_cost", "pair_sum", "purity_before", "purity_after", "gibbs_distance"],
        points.iter().map(|p| {
            vec![num(p.temperature), num(p.initial_cost), num(p.optimized_cost), num(p.gibbs_cost), num(p.pair_sum), num(p.purity_before), num(p.purity_after), num(p.gibbs_distance)]
        }),
    )
}

fn noise_budget(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let b = &cfg.noise_budget;
    let opts = BudgetOptions {
        depth: b.depth,
        shots_per_eval: b.shots_per_eval,
        budget: b.budget,
        runs: b.runs,
        seed: sub_seed(cfg.seed, "noise-budget", 0),
        pattern: PatternOptions { initial_step: b.initial_step, shrink: b.shrink, margin: b.margin, min_step: b.min_step },
    };
    let report = studies::noise_budget(&ladder(cfg)?, &opts)?;
    out.json("budget.json", &report)?;
    out.csv(
        "budget.csv",
        &["run", "final", "gain", "shots_used"],
        report.finals.iter().zip(&report.shots_used).enumerate().map(|(k, (f, s))| vec![k.to_string(), num(*f), num(f - report.baseline), s.to_string()]),
    )
}

fn unprepare(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let u = &cfg.unprepare;
    let cells = studies::unprepare_map(&ladder(cfg)?, &u.lambdas, &u.depths, u.total_time, u.steps, &search(cfg, "unprepare"))?;
    out.json("unprepare.json", &cells)?;
    out.csv(
        "unprepare.csv",
        &["lambda", "depth", "variance", "fidelity", "return_probability"],
        cells.iter().map(|c| vec![num(c.lambda), c.depth.to_string(), num(c.variance), num(c.fidelity), num(c.return_probability)]),
    )
}

#[derive(Serialize)]
struct CphlReport {
    grid: Vec<f64>,
    bare_profile: Vec<f64>,
    bare_crossing: Option<f64>,
    converged: bool,
    log: Vec<iqsim::cphl::IterationLog>,
    relevance: Vec<(String, f64)>,
    family: HamiltonianFamily,
}

fn cphl(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let c = &cfg.cphl;
    let config = CphlConfig {
        grid: uniform_grid(c.grid_points),
        m_max: c.m_max,
        lambda0: c.lambda0,
        max_iters: c.max_iters,
        base_weight: c.base_weight,
        convergence_tol: c.convergence_tol,
        record_profiles: true,
        ..CphlConfig::default()
    };
    config.validate()?;
    let (terms, weights) = extension_ansatz(c.sites, c.base_weight)?;
    let bare = HamiltonianFamily::new(c.sites, terms.clone(), c.m_max);
    let bare_profile = string_order_profile(&bare, &config.grid)?;
    let outcome = cphl_run(&config, terms, weights, c.sites, &mut ExactSolver)?;
    let mut rows = Vec::new();
    for (j, g) in config.grid.iter().enumerate() {
        rows.push(vec![num(*g), num(bare_profile[j]), "0".to_string()]);
    }
    for entry in &outcome.log {
        if let Some(profile) = &entry.profile {
            for (g, s) in config.grid.iter().zip(profile) {
                rows.push(vec![num(*g), num(*s), (entry.iter + 1).to_string()]);
            }
        }
    }
    let report = CphlReport {
        bare_crossing: crossing(&config.grid, &bare_profile, STRING_ORDER_LEVEL),
        relevance: outcome.family.relevance(&config.grid),
        grid: config.grid,
        bare_profile,
        converged: outcome.converged,
        log: outcome.log,
        family: outcome.family,
    };
    out.json("cphl.json", &report)?;
    out.csv("string_order.csv", &["g", "string_order", "iteration"], rows)
}

#[derive(Serialize)]
struct StaircaseReport {
    timings: Vec<studies::MpoTiming>,
    exponent: Option<f64>,
    fidelity_sites: usize,
    fidelity_g: f64,
    fidelity: f64,
}

fn staircase(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let s = &cfg.staircase;
    let timings = studies::mpo_timings(&s.sizes, s.g, s.repeats, sub_seed(cfg.seed, "staircase", 0))?;
    let exponent = (timings.len() >= 2).then(|| studies::scaling_exponent(&timings));
    let h = iqsim::cphl::cim_hamiltonian(s.fidelity_sites, s.fidelity_g)?;
    let target = iqsim::exact::ground_state(&h, &Sector::spin(s.fidelity_sites))?.state;
    let opts = FidelityOptions { starts: s.starts, seed: sub_seed(cfg.seed, "staircase", 1), ..FidelityOptions::default() };
    let fit = fidelity_optimize(&[target], &opts)?.pop().expect("one target");
    out.json(
        "staircase.json",
        &StaircaseReport { exponent, fidelity_sites: s.fidelity_sites, fidelity_g: s.fidelity_g, fidelity: fit.fidelity, timings: timings.clone() },
    )?;
    out.csv("timings.csv", &["sites", "seconds", "value"], timings.iter().map(|t| vec![t.sites.to_string(), num(t.seconds), num(t.value)]))
}

fn shl_options(cfg: &ExperimentConfig) -> ShlOptions {
    let s = &cfg.shl;
    ShlOptions { delta: s.delta, widths: s.widths.clone(), max_iters: s.max_iters, tolerance: s.tolerance, fd_step: s.fd_step, ..ShlOptions::default() }
}

/// Frequency window covering every target and learned pole with a margin.
fn window(study: &ShlStudy) -> (f64, f64) {
    let poles = study.targets.iter().flat_map(|(_, p)| p.peaks.iter().map(|q| q.omega)).chain(study.learned.iter().flat_map(|p| p.positions.iter().copied()));
    let (lo, hi) = poles.fold((0.0f64, 0.0f64), |(lo, hi), w| (lo.min(w), hi.max(w)));
    let pad = 0.2 * (hi - lo).max(1.0);
    (lo - pad, hi + pad)
}

fn shl_outputs(cfg: &ExperimentConfig, study: &ShlStudy, out: &mut Output) -> RunResult<()> {
    out.json("shl.json", study)?;
    let width = study.trajectory.log.first().map_or(0, |s| s.params.len());
    let mut header = vec!["stage".to_string(), "width".into(), "iteration".into(), "cost".into()];
    header.extend((0..width).map(|k| format!("p{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "trajectory.csv",
        &header,
        study.trajectory.log.iter().map(|s| {
            let mut row = vec![s.stage.to_string(), num(s.width), s.iteration.to_string(), num(s.cost)];
            row.extend(s.params.iter().map(|p| num(*p)));
            row
        }),
    )?;
    let (lo, hi) = window(study);
    let grid = frequency_grid(lo, hi, cfg.shl.points);
    for (i, ((_, target), learned)) in study.targets.iter().zip(&study.learned).enumerate() {
        out.spectrum(&format!("target_k{i}.csv"), &target.poles().on_grid(&grid, cfg.shl.delta))?;
        out.spectrum(&format!("learned_k{i}.csv"), &learned.on_grid(&grid, cfg.shl.delta))?;
    }
    Ok(())
}

fn chain(cfg: &ExperimentConfig, phase: ChainPhase, c: &ChainSection, out: &mut Output) -> RunResult<()> {
    let study = studies::chain_study(phase, c.sites, (c.bz, c.j), (c.start[0], c.start[1]), &shl_options(cfg))?;
    shl_outputs(cfg, &study, out)
}

#[derive(Serialize)]
struct TwoSpinReport {
    bz: f64,
    j_ising: f64,
    j_heis: f64,
    delta: f64,
    /// `±2(B_z + J_I)`.
    analytic_poles: [f64; 2],
    /// Largest deviation of the exact response from the closed form on the grid.
    max_abs_diff_exact: f64,
    max_abs_diff_variational: f64,
}

/// `1/(z - 2(B_z + J_I)) - 1/(z + 2(B_z + J_I))` with `z = ω + iδ`.
pub fn two_spin_closed_form(bz: f64, j_ising: f64, omega: f64, delta: f64) -> C64 {
    let z = C64::new(omega, delta);
    let pole = 2.0 * (bz + j_ising);
    C64::new(1.0, 0.0) / (z - pole) - C64::new(1.0, 0.0) / (z + pole)
}

fn kubo(cfg: &ExperimentConfig, out: &mut Output) -> RunResult<()> {
    let k = &cfg.kubo;
    let grid = frequency_grid(k.omega_min, k.omega_max, k.points);
    match k.model {
        KuboModel::TwoSpin => {
            let h = two_spin_model(k.bz, k.j_ising, k.j_heis);
            // all-down reference, drive ½ΣX and probe ΣX
            let down = QuantumState::basis_state(Sector::spin(2), 0b11)?;
            let probe = translated_sum(2, &[(0, Pauli::X)], 1.0, false);
            let drive = probe.scale_real(0.5);
            let exact = kubo_lehmann(&h, &down, &drive, &probe)?.on_grid(&grid, k.delta);
            let ansatz = single_spin_generators(2, &[Pauli::X, Pauli::Y]);
            let mats = tdvp_matrices(&ResponseProblem::new(h, down, drive, probe, ansatz))?;
            let variational = variational_susceptibility(&mats, &grid, k.delta)?;
            let closed = Susceptibility {
                frequencies: grid.clone(),
                values: grid.iter().map(|&w| two_spin_closed_form(k.bz, k.j_ising, w, k.delta)).collect(),
                broadening: k.delta,
            };
            let pole = 2.0 * (k.bz + k.j_ising);
            out.json(
                "result.json",
                &TwoSpinReport {
                    bz: k.bz,
                    j_ising: k.j_ising,
                    j_heis: k.j_heis,
                    delta: k.delta,
                    analytic_poles: [pole, -pole],
                    max_abs_diff_exact: exact.max_abs_diff(&closed),
                    max_abs_diff_variational: variational.max_abs_diff(&closed),
                },
            )?;
            out.spectrum("kubo.csv", &exact)?;
            out.spectrum("variational.csv", &variational)
        }
        KuboModel::FmChain | KuboModel::AfmChain => {
            let phase = if k.model == KuboModel::FmChain { ChainPhase::Ferro } else { ChainPhase::Antiferro };
            let targets: Vec<(f64, PeakList)> = studies::chain_targets(phase, k.sites, k.bz, k.j)?;
            out.json("peaks.json", &targets)?;
            for (i, (_, peaks)) in targets.iter().enumerate() {
                out.spectrum(&format!("kubo_k{i}.csv"), &peaks.poles().on_grid(&grid, k.delta))?;
            }
            Ok(())
        }
    }
}
