//! Experiment driver: declarative TOML configs in, deterministic result
//! documents and per-figure tables out.

pub mod config;
pub mod experiments;
pub mod persist;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{apply_overrides, ExperimentKind, RawConfig, ResolvedConfig};
pub use experiments::{execute, DataFactory, RunOutcome};
pub use persist::{read_checkpoint, read_dataset_cache, write_checkpoint, write_dataset_cache};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<basin_core::Error> for CliError {
    fn from(e: basin_core::Error) -> Self {
        use basin_core::Error as E;
        match e {
            E::BadIdxFile { .. } | E::Io(_) | E::EmptyDataset => CliError::Data(e.to_string()),
            E::InvalidSpec(_)
            | E::InvalidArgument(_)
            | E::InfeasibleQuota { .. }
            | E::PoisonSourceExhausted { .. }
            | E::DatasetsOverlap(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl CliError {
    /// Process exit code: 2 config error, 3 data error, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

/// What [`run_config`] reports back to the caller.
#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config_hash: String,
    pub flagged_seeds: usize,
    pub wall_clock_secs: f64,
}

/// Load a config file, apply overrides, resolve, execute, and persist the
/// echo + result record. Refuses to overwrite an existing result for the
/// same resolved config unless `force` is set.
pub fn run_config(path: &Path, overrides: &[String], force: bool) -> Result<RunSummary, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let patched = apply_overrides(&text, overrides)?;
    let cfg = RawConfig::from_toml(&patched)?.resolve()?;
    run_resolved(&cfg, force)
}

/// Execute an already-resolved config (tests and library callers).
pub fn run_resolved(cfg: &ResolvedConfig, force: bool) -> Result<RunSummary, CliError> {
    let dir = cfg.run_dir();
    let result_path = dir.join("result.json");
    if result_path.exists() && !force {
        return Err(CliError::Config(format!(
            "{} already holds results for this configuration; re-run with --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;

    let started = Instant::now();
    let outcome = experiments::execute(cfg, &dir)?;
    let wall = started.elapsed().as_secs_f64();

    let record = persist::ResultRecord {
        config_hash: cfg.hash(),
        kind: cfg.kind.as_str().to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        payload: outcome.payload,
    };
    persist::write_result(&dir, &record, wall, outcome.flagged_seeds)?;
    Ok(RunSummary {
        dir,
        config_hash: cfg.hash(),
        flagged_seeds: outcome.flagged_seeds,
        wall_clock_secs: wall,
    })
}
