//! Run hashes and all-or-nothing output staging.

use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::commands::Summary;
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

/// SHA-256 of the canonical config and the package version.
pub fn run_hash(cfg: &RunConfig, command: Command) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical_json(command).as_bytes());
    h.update(b"\n");
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files held in memory until the command has fully succeeded.
#[derive(Debug)]
pub struct Staged {
    run: String,
    files: Vec<(String, Vec<u8>)>,
    timing_files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(run: &str) -> Self {
        Self {
            run: run.to_string(),
            files: Vec::new(),
            timing_files: Vec::new(),
        }
    }

    pub fn bytes(&mut self, name: &str, data: Vec<u8>) {
        self.files.push((name.to_string(), data));
    }

    /// Files with wall-clock content; listed in the manifest without checksums.
    pub fn timing_bytes(&mut self, name: &str, data: Vec<u8>) {
        self.timing_files.push((name.to_string(), data));
    }

    pub fn json(&mut self, name: &str, value: Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::io(e.to_string()))?;
        text.push('\n');
        self.bytes(name, text.into_bytes());
        Ok(())
    }

    /// Add the manifest and timings, then write everything to the output directory.
    pub fn finish(mut self, cfg: &RunConfig, command: Command, details: Value, timings: Value) -> CliResult<Summary> {
        let config: Value = serde_json::from_str(&cfg.canonical_json(command)).expect("canonical config is JSON");
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(n, b)| json!({"name": n, "sha256": sha256_hex(b)}))
            .collect();
        let manifest = json!({
            "run": self.run,
            "command": command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "threads": cfg.threads,
            "details": details,
            "files": files,
            "timing_files": self.timing_files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            "config": config,
        });
        let manifest_name = format!("{}_manifest.json", command.name());
        self.json(&manifest_name, manifest)?;
        if !timings.is_null() {
            let mut t = json!({"run": self.run});
            if let (Some(dst), Some(src)) = (t.as_object_mut(), timings.as_object()) {
                dst.extend(src.clone());
            }
            let mut text = serde_json::to_string_pretty(&t).map_err(|e| CliError::io(e.to_string()))?;
            text.push('\n');
            self.timing_files.push((format!("{}_timings.json", command.name()), text.into_bytes()));
        }
        write_all(&cfg.output, self.files.iter().chain(&self.timing_files))?;
        Ok(Summary {
            command,
            run: self.run,
            output: cfg.output.clone(),
            files: self.files.iter().chain(&self.timing_files).map(|(n, _)| n.clone()).collect(),
        })
    }
}

fn write_all<'a>(dir: &Path, files: impl Iterator<Item = &'a (String, Vec<u8>)>) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
