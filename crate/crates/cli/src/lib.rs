//! Batch front-end for the `qbsde` library: experiment configs in, result
//! files out.
//!
//! Exit codes: 0 success, 1 an applicable check failed, 2 configuration
//! error, 3 numerical or I/O failure.

pub mod config;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

use config::{ExperimentConfig, Issue};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Issue>),

    #[error("{0}")]
    Numeric(#[from] qbsde::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io { .. } => 3,
        }
    }

    fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config(vec![Issue { path: path.into(), message: message.into() }])
    }
}

/// Reads and validates a config file.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config("$", format!("cannot read {}: {e}", path.display())))?;
    config::parse(&text).map_err(CliError::Config)
}

/// Output directory of `cfg`, relative paths resolved against the config
/// file's directory.
pub fn output_dir(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    let dir = PathBuf::from(&cfg.output.directory);
    if dir.is_absolute() {
        dir
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(dir)
    }
}

/// `qbsde run`: returns the process exit code.
pub fn run_file(path: &Path, out_override: Option<&Path>) -> Result<i32, CliError> {
    let cfg = load(path)?;
    let dir = out_override.map_or_else(|| output_dir(&cfg, path), Path::to_path_buf);
    let outcome = run::execute(&cfg)?;
    output::write_all(&dir, &cfg, &outcome)?;
    Ok(if outcome.check_failed { 1 } else { 0 })
}

/// Parses `50,100,200` into a strictly increasing list.
pub fn parse_n_list(text: &str) -> Result<Vec<usize>, CliError> {
    let list: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config("--N", format!("expected comma-separated step counts: {e}")))?;
    if list.is_empty() || list[0] == 0 || !list.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::config("--N", "step counts must be positive and strictly increasing"));
    }
    Ok(list)
}

/// `qbsde converge`: writes `convergence.csv` and returns the table.
pub fn converge_file(path: &Path, n_list: &[usize], out_override: Option<&Path>) -> Result<String, CliError> {
    let cfg = load(path)?;
    let dir = out_override.map_or_else(|| output_dir(&cfg, path), Path::to_path_buf);
    let (rows, reference) = run::convergence(&cfg, n_list)?;
    let table = run::convergence_table(&rows, reference);
    output::write_table(&dir, "convergence.csv", &cfg.hash(), &table)?;
    Ok(table)
}

/// Applies `QBSDE_THREADS` to the global pool.
pub fn configure_threads(value: Option<&str>) -> Result<(), CliError> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::config("QBSDE_THREADS", format!("expected a positive integer, got {v:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
