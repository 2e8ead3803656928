use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Written once per command next to its outputs. The only file carrying
/// timestamps, so every other artifact stays byte-reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub code_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: f64,
    pub timings_ms: Vec<(String, f64)>,
}

pub struct RunClock {
    start: Instant,
    started_unix_ms: u128,
    last: Instant,
    phases: Vec<(String, f64)>,
}

impl RunClock {
    pub fn start() -> Self {
        let now = Instant::now();
        RunClock {
            start: now,
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            last: now,
            phases: Vec::new(),
        }
    }

    /// Closes the current phase under `name`.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push((name.to_string(), (now - self.last).as_secs_f64() * 1e3));
        self.last = now;
    }

    pub fn finish(
        self,
        command: &str,
        config: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            outputs,
            started_unix_ms: self.started_unix_ms,
            wall_clock_ms: self.start.elapsed().as_secs_f64() * 1e3,
            timings_ms: self.phases,
        }
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_NAME);
        let body = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(&path, body + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}
