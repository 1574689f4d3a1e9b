//! `iqsim`: runs one configured experiment and writes its artifacts plus a manifest.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use config::{parse_value, set_path, Experiment, ExperimentConfig, FieldError};
use runner::{Output, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_RESOURCE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "iqsim", version, about = "Hamiltonian learning and variational circuit experiments")]
struct Args {
    /// TOML experiment configuration.
    config: Option<PathBuf>,
    /// Overrides the `experiment` key.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Ladder length.
    #[arg(long)]
    rungs: Option<i64>,
    /// Pairing bias of the ladder experiments.
    #[arg(long)]
    lambda: Option<f64>,
    /// Deepest circuit; ladder scans run depths `1..=D`.
    #[arg(long)]
    depth: Option<i64>,
    /// System size of the selected CPHL, chain, Kubo or staircase experiment.
    #[arg(long)]
    sites: Option<i64>,
    /// Repetitions of the noise-budget study.
    #[arg(long)]
    runs: Option<i64>,
    /// Any field as `section.key=value`, with the value in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_sha256: String,
    seed: u64,
    iqsim_version: &'static str,
    cli_version: &'static str,
    started_unix: u64,
    wall_time_seconds: f64,
    threads: usize,
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

fn fail(code: u8, body: serde_json::Value) -> ExitCode {
    eprintln!("{body}");
    ExitCode::from(code)
}

fn config_errors(errors: Vec<FieldError>) -> ExitCode {
    fail(EXIT_CONFIG, json!({ "error": "config_invalid", "fields": errors }))
}

/// Applies typed flags on top of the file; flags win over `--set`.
fn overrides(args: &Args, table: &mut toml::Table) -> Result<(), Vec<FieldError>> {
    let mut errors = Vec::new();
    let mut updates: Vec<(String, toml::Value)> = Vec::new();
    let mut put = |path: &str, value: toml::Value| updates.push((path.to_string(), value));
    for s in &args.sets {
        match s.split_once('=') {
            Some((k, v)) => put(k.trim(), parse_value(v.trim())),
            None => errors.push(FieldError { field: s.clone(), message: "expected KEY=VALUE".into() }),
        }
    }
    if let Some(e) = args.experiment {
        put("experiment", toml::Value::String(e.id().into()));
    }
    if let Some(s) = args.seed {
        match i64::try_from(s) {
            Ok(s) => put("seed", toml::Value::Integer(s)),
            Err(_) => errors.push(FieldError { field: "seed".into(), message: "too large".into() }),
        }
    }
    if let Some(d) = &args.output_dir {
        put("output_dir", toml::Value::String(d.to_string_lossy().into_owned()));
    }
    if let Some(r) = args.rungs {
        put("ladder.rungs", toml::Value::Integer(r));
    }
    if let Some(n) = args.runs {
        put("noise_budget.runs", toml::Value::Integer(n));
    }
    if let Some(l) = args.lambda {
        put("dwave.lambda", toml::Value::Float(l));
        put("finite_t.lambda", toml::Value::Float(l));
        put("learning_map.lambdas", toml::Value::Array(vec![toml::Value::Float(l)]));
        put("unprepare.lambdas", toml::Value::Array(vec![toml::Value::Float(l)]));
    }
    if let Some(d) = args.depth {
        let scan = toml::Value::Array((1..=d.max(0)).map(toml::Value::Integer).collect());
        for key in ["dwave.depths", "learning_map.depths", "unprepare.depths"] {
            put(key, scan.clone());
        }
        put("finite_t.depth", toml::Value::Integer(d));
        put("noise_budget.depth", toml::Value::Integer(d));
    }
    for (path, value) in updates {
        if let Err(e) = set_path(table, &path, value) {
            errors.push(e);
        }
    }
    // sizes live in different sections, so --sites follows the chosen experiment
    if let Some(n) = args.sites {
        let key = match table.get("experiment").and_then(|v| v.as_str()) {
            Some("cphl") => Some("cphl.sites"),
            Some("shl-fm") => Some("shl_fm.sites"),
            Some("shl-afm") => Some("shl_afm.sites"),
            Some("kubo") => Some("kubo.sites"),
            Some("staircase-bench") => Some("staircase.fidelity_sites"),
            _ => None,
        };
        match key {
            Some(key) => set_path(table, key, toml::Value::Integer(n)).unwrap_or_else(|e| errors.push(e)),
            None => errors.push(FieldError { field: "sites".into(), message: "the selected experiment has no size setting".into() }),
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut table = match &args.config {
        None => toml::Table::new(),
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return config_errors(vec![FieldError { field: "config".into(), message: format!("{}: {e}", path.display()) }]),
            };
            match text.parse::<toml::Table>() {
                Ok(t) => t,
                Err(e) => return config_errors(vec![FieldError { field: "config".into(), message: e.message().to_string() }]),
            }
        }
    };
    if let Err(errors) = overrides(&args, &mut table) {
        return config_errors(errors);
    }
    let cfg = match ExperimentConfig::from_table(&table) {
        Ok(c) => c,
        Err(errors) => return config_errors(errors),
    };
    if args.dry_run {
        print!("{}", toml::to_string(&cfg).expect("configuration serializes"));
        return ExitCode::SUCCESS;
    }

    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut out = match Output::new(&cfg.output_dir, cfg.formats.json, cfg.formats.csv) {
        Ok(o) => o,
        Err(e) => return run_error(e),
    };
    if let Err(e) = runner::run(&cfg, &mut out) {
        return run_error(e);
    }
    let manifest = Manifest {
        experiment: cfg.experiment.id(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        iqsim_version: iqsim::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
        started_unix,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        threads: runner::threads(),
        files: out.files.clone(),
        config: &cfg,
    };
    let written = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string()).and_then(|text| {
        std::fs::write(cfg.output_dir.join("manifest.json"), text + "\n").map_err(|e| e.to_string())
    });
    if let Err(message) = written {
        return fail(EXIT_NUMERICAL, json!({ "error": "io", "message": message }));
    }
    println!("{}", cfg.output_dir.join("manifest.json").display());
    ExitCode::SUCCESS
}

fn run_error(e: RunError) -> ExitCode {
    match e {
        RunError::Io(message) => fail(EXIT_NUMERICAL, json!({ "error": "io", "message": message })),
        RunError::Numerical(err) => {
            let kind = format!("{err:?}");
            let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Unknown").to_string();
            let code = match err {
                iqsim::Error::DimensionCap { .. } | iqsim::Error::IterationCap(_) => EXIT_RESOURCE,
                _ => EXIT_NUMERICAL,
            };
            let error = if code == EXIT_RESOURCE { "resource_cap" } else { "numerical" };
            fail(code, json!({ "error": error, "kind": kind, "message": err.to_string() }))
        }
    }
}
