//! Run manifest embedded in every output file.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// File path or builtin name as given on the command line.
    pub input: String,
    /// SHA-256 of the input file bytes, or of the serialized builtin system.
    pub input_sha256: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    pub version: String,
    pub solver: String,
    pub started_at: String,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    input: String,
    input_sha256: String,
    config: Value,
    solver: String,
    started_at: String,
    t0: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: impl Serialize, solver: String) -> Self {
        Self {
            command: command.to_string(),
            input: String::new(),
            input_sha256: String::new(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            solver,
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            t0: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, sha256: String) {
        self.input = name.to_string();
        self.input_sha256 = sha256;
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            input: self.input.clone(),
            input_sha256: self.input_sha256.clone(),
            config: self.config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            solver: self.solver.clone(),
            started_at: self.started_at.clone(),
            wall_clock_seconds: self.t0.elapsed().as_secs_f64(),
        }
    }
}

/// First line of CSV and SDPA outputs: `<prefix> manifest: {json}`.
pub fn comment_line(prefix: &str, m: &RunManifest) -> String {
    format!("{prefix} manifest: {}\n", serde_json::to_string(m).expect("manifest serializes"))
}

/// Parses the manifest back from a comment line written by [`comment_line`].
#[cfg(test)]
pub fn parse_comment_line(line: &str) -> Option<RunManifest> {
    let (_, json) = line.split_once("manifest: ")?;
    serde_json::from_str(json.trim_end().trim_end_matches("-->")).ok()
}

/// Removes wall-clock fields so that numeric outputs are reproducible; the
/// elapsed time lives in the manifest only.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("seconds");
            map.remove("solve_time");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
