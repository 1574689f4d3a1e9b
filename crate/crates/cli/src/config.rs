//! Experiment configuration: a TOML document plus flag overrides, validated as a whole
//! before anything runs.

use std::path::PathBuf;

use clap::ValueEnum;
use iqsim::studies::LadderModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Dwave,
    LearningMap,
    FiniteT,
    NoiseBudget,
    Unprepare,
    Cphl,
    StaircaseBench,
    ShlRing,
    ShlFm,
    ShlAfm,
    Kubo,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Experiment::Dwave => "dwave",
            Experiment::LearningMap => "learning-map",
            Experiment::FiniteT => "finite-t",
            Experiment::NoiseBudget => "noise-budget",
            Experiment::Unprepare => "unprepare",
            Experiment::Cphl => "cphl",
            Experiment::StaircaseBench => "staircase-bench",
            Experiment::ShlRing => "shl-ring",
            Experiment::ShlFm => "shl-fm",
            Experiment::ShlAfm => "shl-afm",
            Experiment::Kubo => "kubo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Formats {
    pub json: bool,
    pub csv: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self { json: true, csv: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub restarts: usize,
    pub width: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { restarts: 8, width: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwaveSection {
    pub lambda: f64,
    pub depths: Vec<usize>,
    pub repulsive: bool,
}

impl Default for DwaveSection {
    fn default() -> Self {
        Self { lambda: 2.0, depths: vec![1, 3, 5], repulsive: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub lambdas: Vec<f64>,
    pub depths: Vec<usize>,
    pub repulsive: bool,
}

impl Default for MapSection {
    fn default() -> Self {
        Self { lambdas: vec![0.0, 0.5, 1.0, 1.5, 2.0], depths: vec![1, 2, 3, 4, 5], repulsive: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteTSection {
    pub lambda: f64,
    pub temperatures: Vec<f64>,
    pub depth: usize,
}

impl Default for FiniteTSection {
    fn default() -> Self {
        Self { lambda: 2.0, temperatures: vec![0.32, 0.5, 1.0], depth: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub depth: usize,
    pub shots_per_eval: u64,
    pub budget: u64,
    pub runs: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub margin: f64,
    pub min_step: f64,
}

impl Default for BudgetSection {
    fn default() -> Self {
        let p = iqsim::varcirc::PatternOptions::default();
        Self { depth: 5, shots_per_eval: 15, budget: 30_000, runs: 50, initial_step: p.initial_step, shrink: p.shrink, margin: p.margin, min_step: p.min_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnprepareSection {
    pub lambdas: Vec<f64>,
    pub depths: Vec<usize>,
    pub total_time: f64,
    pub steps: usize,
}

impl Default for UnprepareSection {
    fn default() -> Self {
        Self { lambdas: vec![0.0, 1.0, 2.0], depths: vec![1, 3, 5], total_time: 20.0, steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CphlSection {
    pub sites: usize,
    pub grid_points: usize,
    pub m_max: usize,
    pub lambda0: f64,
    pub max_iters: usize,
    pub base_weight: f64,
    pub convergence_tol: f64,
}

impl Default for CphlSection {
    fn default() -> Self {
        let c = iqsim::cphl::CphlConfig::default();
        Self { sites: 8, grid_points: c.grid.len(), m_max: c.m_max, lambda0: c.lambda0, max_iters: c.max_iters, base_weight: c.base_weight, convergence_tol: c.convergence_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaircaseSection {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub g: f64,
    pub fidelity_sites: usize,
    pub fidelity_g: f64,
    pub starts: usize,
}

impl Default for StaircaseSection {
    fn default() -> Self {
        Self { sizes: vec![1_000, 10_000, 100_000], repeats: 3, g: 0.0, fidelity_sites: 5, fidelity_g: -1.0, starts: iqsim::staircase::DEFAULT_STARTS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShlSection {
    pub delta: f64,
    pub widths: Vec<f64>,
    pub max_iters: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    /// Points of the emitted spectra.
    pub points: usize,
}

impl Default for ShlSection {
    fn default() -> Self {
        let o = iqsim::shl::ShlOptions::default();
        Self { delta: o.delta, widths: o.widths, max_iters: o.max_iters, tolerance: o.tolerance, fd_step: o.fd_step, points: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingSection {
    pub bz: f64,
    pub j_heis: f64,
    pub j_ring: f64,
    pub start: f64,
}

impl Default for RingSection {
    fn default() -> Self {
        Self { bz: 1.0, j_heis: 0.3, j_ring: 0.5, start: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub sites: usize,
    pub bz: f64,
    pub j: f64,
    pub start: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FmSection(pub ChainSection);

impl Default for FmSection {
    fn default() -> Self {
        Self(ChainSection { sites: 10, bz: 1.0, j: 1.5, start: [0.5, 0.5] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AfmSection(pub ChainSection);

impl Default for AfmSection {
    fn default() -> Self {
        Self(ChainSection { sites: 8, bz: 0.0, j: -1.5, start: [0.3, -1.0] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KuboModel {
    TwoSpin,
    FmChain,
    AfmChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KuboSection {
    pub model: KuboModel,
    pub bz: f64,
    pub j_ising: f64,
    pub j_heis: f64,
    /// Chain exchange.
    pub j: f64,
    pub sites: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    pub delta: f64,
}

impl Default for KuboSection {
    fn default() -> Self {
        Self {
            model: KuboModel::TwoSpin,
            bz: 1.0,
            j_ising: 0.5,
            j_heis: 0.25,
            j: 1.5,
            sites: 10,
            omega_min: -10.0,
            omega_max: 10.0,
            points: 2000,
            delta: iqsim::exact::DEFAULT_BROADENING,
        }
    }
}

/// Fully resolved configuration; serialized form feeds the manifest hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub formats: Formats,
    pub ladder: LadderModel,
    pub search: SearchSection,
    pub dwave: DwaveSection,
    pub learning_map: MapSection,
    pub finite_t: FiniteTSection,
    pub noise_budget: BudgetSection,
    pub unprepare: UnprepareSection,
    pub cphl: CphlSection,
    pub staircase: StaircaseSection,
    pub shl: ShlSection,
    pub shl_ring: RingSection,
    pub shl_fm: FmSection,
    pub shl_afm: AfmSection,
    pub kubo: KuboSection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

const SECTIONS: [&str; 15] = [
    "formats",
    "ladder",
    "search",
    "dwave",
    "learning_map",
    "finite_t",
    "noise_budget",
    "unprepare",
    "cphl",
    "staircase",
    "shl",
    "shl_ring",
    "shl_fm",
    "shl_afm",
    "kubo",
];

/// Deserializes `key`, filling absent fields from the section default.
fn section<T: DeserializeOwned + Serialize + Default>(table: &toml::Table, key: &str, errors: &mut Vec<FieldError>) -> T {
    let Some(given) = table.get(key) else { return T::default() };
    let Some(given) = given.as_table() else {
        errors.push(FieldError::new(key, "expected a table"));
        return T::default();
    };
    let mut merged = toml::Table::try_from(T::default()).expect("section defaults serialize");
    merged.extend(given.iter().map(|(k, v)| (k.clone(), v.clone())));
    toml::Value::Table(merged).try_into::<T>().unwrap_or_else(|e| {
        errors.push(FieldError::new(key, e.message().trim()));
        T::default()
    })
}

/// Sets `path` (dot-separated) to `value`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), FieldError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| FieldError::new(path, "empty key"))?;
    let mut current = table;
    for p in parts {
        let entry = current.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| FieldError::new(path, format!("`{p}` is not a table")))?;
    }
    current.insert(leaf.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling back to a string.
pub fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

impl ExperimentConfig {
    /// Builds the configuration from a merged table, collecting every field-level problem.
    pub fn from_table(table: &toml::Table) -> Result<Self, Vec<FieldError>> {
        let mut errors = Vec::new();
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) && !["experiment", "seed", "output_dir"].contains(&key.as_str()) {
                errors.push(FieldError::new(key.as_str(), "unknown key"));
            }
        }
        let experiment = match table.get("experiment") {
            None => {
                let names: Vec<&str> = Experiment::value_variants().iter().map(|e| e.id()).collect();
                errors.push(FieldError::new("experiment", format!("missing; expected one of {}", names.join(", "))));
                None
            }
            Some(v) => v.clone().try_into::<Experiment>().map_err(|e| errors.push(FieldError::new("experiment", e.message().trim()))).ok(),
        };
        let seed = match table.get("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => {
                errors.push(FieldError::new("seed", "expected a non-negative integer"));
                0
            }
        };
        let output_dir = match table.get("output_dir") {
            Some(toml::Value::String(s)) if !s.is_empty() => Some(PathBuf::from(s)),
            Some(_) => {
                errors.push(FieldError::new("output_dir", "expected a non-empty path string"));
                None
            }
            None => {
                errors.push(FieldError::new("output_dir", "missing; set it in the file or with --output-dir"));
                None
            }
        };
        let cfg = ExperimentConfig {
            experiment: experiment.unwrap_or(Experiment::Kubo),
            seed,
            output_dir: output_dir.clone().unwrap_or_default(),
            formats: section(table, "formats", &mut errors),
            ladder: section(table, "ladder", &mut errors),
            search: section(table, "search", &mut errors),
            dwave: section(table, "dwave", &mut errors),
            learning_map: section(table, "learning_map", &mut errors),
            finite_t: section(table, "finite_t", &mut errors),
            noise_budget: section(table, "noise_budget", &mut errors),
            unprepare: section(table, "unprepare", &mut errors),
            cphl: section(table, "cphl", &mut errors),
            staircase: section(table, "staircase", &mut errors),
            shl: section(table, "shl", &mut errors),
            shl_ring: section(table, "shl_ring", &mut errors),
            shl_fm: section(table, "shl_fm", &mut errors),
            shl_afm: section(table, "shl_afm", &mut errors),
            kubo: section(table, "kubo", &mut errors),
        };
        errors.extend(cfg.check());
        if errors.is_empty() && experiment.is_some() && output_dir.is_some() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Range checks on every section.
    fn check(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        let mut need = |ok: bool, field: &str, msg: &str| {
            if !ok {
                e.push(FieldError::new(field, msg));
            }
        };
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let increasing = |xs: &[usize]| !xs.is_empty() && xs[0] >= 1 && xs.windows(2).all(|w| w[1] > w[0]);
        need(self.formats.json || self.formats.csv, "formats", "at least one of json, csv must be enabled");
        let l = &self.ladder;
        need(l.rungs >= 2 && l.rungs <= 6, "ladder.rungs", "must lie in 2..=6");
        need(l.n_up <= 2 * l.rungs && l.n_down <= 2 * l.rungs, "ladder.n_up", "filling exceeds the number of sites");
        need(finite(&[l.t_x, l.t_y, l.u]), "ladder", "couplings must be finite");
        need(self.search.width > 0.0 && self.search.width.is_finite(), "search.width", "must be positive");
        need(self.dwave.lambda.is_finite() && self.dwave.lambda >= 0.0, "dwave.lambda", "must be a non-negative number");
        need(increasing(&self.dwave.depths), "dwave.depths", "must be a non-empty, strictly increasing list of positive depths");
        need(!self.learning_map.lambdas.is_empty() && finite(&self.learning_map.lambdas), "learning_map.lambdas", "must be a non-empty list of numbers");
        need(increasing(&self.learning_map.depths), "learning_map.depths", "must be a non-empty, strictly increasing list of positive depths");
        let f = &self.finite_t;
        need(!f.temperatures.is_empty() && f.temperatures.iter().all(|t| *t > 0.0 && t.is_finite()), "finite_t.temperatures", "must be positive");
        need(f.depth >= 1, "finite_t.depth", "must be at least 1");
        let b = &self.noise_budget;
        need(b.runs >= 2, "noise_budget.runs", "at least two runs are needed for the t-test");
        need(b.shots_per_eval >= 1 && b.budget >= b.shots_per_eval, "noise_budget.budget", "must cover at least one evaluation");
        need(b.initial_step > 0.0 && b.min_step > 0.0 && b.shrink > 0.0 && b.shrink < 1.0, "noise_budget", "steps must be positive and shrink in (0, 1)");
        let u = &self.unprepare;
        need(!u.lambdas.is_empty() && finite(&u.lambdas), "unprepare.lambdas", "must be a non-empty list of numbers");
        need(increasing(&u.depths), "unprepare.depths", "must be a non-empty, strictly increasing list of positive depths");
        need(u.total_time > 0.0 && u.steps >= 1, "unprepare.total_time", "needs positive time and at least one step");
        let c = &self.cphl;
        need((4..=12).contains(&c.sites), "cphl.sites", "must lie in 4..=12");
        need(c.grid_points >= 3, "cphl.grid_points", "must be at least 3");
        need(c.m_max >= 1 && c.base_weight >= 0.0 && c.lambda0 >= 0.0, "cphl", "m_max ≥ 1, base_weight ≥ 0 and lambda0 ≥ 0 are required");
        let s = &self.staircase;
        need(s.sizes.iter().all(|n| *n >= 2), "staircase.sizes", "every size must be at least 2");
        need((4..=12).contains(&s.fidelity_sites), "staircase.fidelity_sites", "must lie in 4..=12");
        need(s.starts >= 1, "staircase.starts", "must be at least 1");
        let h = &self.shl;
        need(h.delta > 0.0 && h.widths.iter().all(|w| *w > 0.0), "shl.delta", "broadenings must be positive");
        need(h.points >= 2, "shl.points", "must be at least 2");
        need(self.shl_fm.0.sites >= 2 && self.shl_fm.0.sites <= 12, "shl_fm.sites", "must lie in 2..=12");
        need(self.shl_afm.0.sites >= 2 && self.shl_afm.0.sites <= 12 && self.shl_afm.0.sites.is_multiple_of(2), "shl_afm.sites", "must be even and lie in 2..=12");
        let k = &self.kubo;
        need(k.delta > 0.0, "kubo.delta", "must be positive");
        need(k.points >= 2 && k.omega_max > k.omega_min, "kubo.points", "grid needs at least two points on a non-empty interval");
        need(k.model == KuboModel::TwoSpin || (2..=12).contains(&k.sites), "kubo.sites", "must lie in 2..=12");
        need(k.model != KuboModel::AfmChain || k.sites.is_multiple_of(2), "kubo.sites", "the antiferromagnetic chain needs an even size");
        e
    }

    /// SHA-256 of the canonical TOML rendering of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("configuration serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
