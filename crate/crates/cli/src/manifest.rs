//! Per-run record of configuration, inputs, outputs and metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub started_at: String,
    pub finished_at: String,
    /// Path → hex sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects inputs and outputs while a stage runs.
pub struct RunRecorder {
    command: String,
    config: PipelineConfig,
    started_at: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    metrics: serde_json::Map<String, serde_json::Value>,
}

impl RunRecorder {
    pub fn start(command: &str, config: &PipelineConfig) -> Self {
        RunRecorder {
            command: command.to_owned(),
            config: config.clone(),
            started_at: now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_owned());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_owned());
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metrics.insert(key.to_owned(), value);
    }

    /// Hashes every recorded file and writes `<work_dir>/manifests/<name>.json`.
    pub fn finish(self, name: &str) -> CliResult<PathBuf> {
        let hash_all = |paths: &[PathBuf]| -> CliResult<BTreeMap<String, String>> {
            paths
                .iter()
                .filter(|p| p.is_file())
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            config: self.config,
            started_at: self.started_at,
            finished_at: now(),
            metrics: serde_json::Value::Object(self.metrics),
        };
        let dir = manifest.config.work_dir.join("manifests");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
