//! Artifact writing. CSV files start with a `# config_hash=<sha256>` line;
//! JSON files carry the hash as their `config_hash` field.

use std::path::Path;

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::run::Outcome;
use crate::CliError;

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

pub fn write_table(dir: &Path, name: &str, hash: &str, body: &str) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write(&dir.join(name), &format!("# config_hash={hash}\n{body}"))
}

pub fn write_json(dir: &Path, name: &str, hash: &str, body: Value) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let doc = json!({ "config_hash": hash, "body": body });
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialise");
    text.push('\n');
    write(&dir.join(name), &text)
}

pub fn write_all(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome) -> Result<(), CliError> {
    let hash = cfg.hash();
    write_json(dir, "config.resolved.json", &hash, json!(cfg))?;
    let mut results = outcome.results.clone();
    results["command"] = json!(cfg.command);
    results["check_failed"] = json!(outcome.check_failed);
    write_json(dir, "results.json", &hash, results)?;
    if cfg.output.wants("json") {
        for (name, body) in &outcome.reports {
            write_json(dir, name, &hash, body.clone())?;
        }
    }
    if cfg.output.wants("csv") {
        for (name, body) in &outcome.tables {
            write_table(dir, name, &hash, body)?;
        }
    }
    Ok(())
}
