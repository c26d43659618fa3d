//! Batch front-end for the nlhom experiments.
//!
//! A run reads one TOML configuration, executes a single command, and writes
//! CSV tables, binary field dumps and a `manifest.json` into the output
//! directory. See [`config::RunConfig`] for the document layout.

pub mod config;
pub mod run;

use std::fs;
use std::path::Path;

use serde::Serialize;

pub use config::{parse_config, Command, RunConfig, Threads};
pub use run::{Invariant, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<nlhom::Error> for CliError {
    fn from(e: nlhom::Error) -> Self {
        use nlhom::Error as E;
        match e {
            E::Solver(_) | E::NonFinite(_) | E::SingularGradient | E::Inconsistent(_) => CliError::Solver(e.to_string()),
            E::Io(s) => CliError::Io(s),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'static str,
    version: &'static str,
    command: String,
    status: i32,
    seed: u64,
    threads: usize,
    deterministic: bool,
    solves: usize,
    unconverged: usize,
    max_grad_norm: f64,
    solver_tol: f64,
    invariants: &'a [Invariant],
    violated: Vec<&'a str>,
    files: &'a [String],
    error: Option<String>,
    config: &'a RunConfig,
}

/// Status and artifacts of a finished run.
#[derive(Debug)]
pub struct RunSummary {
    pub status: i32,
    pub outcome: Option<Outcome>,
    pub error: Option<CliError>,
}

fn status_of(out: &Outcome) -> i32 {
    if out.unconverged > 0 {
        3
    } else if out.all_passed() {
        0
    } else {
        1
    }
}

/// Executes `cfg` inside a worker pool of the configured size and writes the
/// manifest. Configuration errors are returned before anything is written.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let threads = match cfg.threads {
        Threads::Auto => 0,
        Threads::Count(n) => n,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir)?;
    let result = pool.install(|| run::execute(cfg, dir));
    let (status, outcome, error) = match result {
        Ok(out) => (status_of(&out), Some(out), None),
        Err(e) => (e.exit_code(), None, Some(e)),
    };
    let empty = Outcome::default();
    let out = outcome.as_ref().unwrap_or(&empty);
    let manifest = Manifest {
        name: "nlhom",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command.to_string(),
        status,
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        deterministic: cfg.deterministic,
        solves: out.solves,
        unconverged: out.unconverged,
        max_grad_norm: out.max_grad_norm,
        solver_tol: cfg.solver.tol,
        invariants: &out.invariants,
        violated: out.invariants.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect(),
        files: &out.files,
        error: error.as_ref().map(|e| e.to_string()),
        config: cfg,
    };
    write_manifest(dir, &manifest)?;
    Ok(RunSummary { status, outcome, error })
}

fn write_manifest(dir: &Path, m: &Manifest<'_>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}
