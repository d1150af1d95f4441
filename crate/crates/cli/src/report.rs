//! Per-stage JSON run reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use crate::io::{sha256_file, write_json};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: &'static str,
    pub params: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
    pub wall_time_s: f64,
}

/// Collects what a stage read and wrote while it runs.
pub struct Recorder {
    command: String,
    params: serde_json::Value,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: serde_json::Map<String, serde_json::Value>,
}

impl Recorder {
    pub fn new(command: &str, params: &impl Serialize) -> Self {
        Recorder {
            command: command.to_string(),
            params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
    }

    pub fn finish(self, path: &Path) -> Result<()> {
        let digest = |ps: &[PathBuf]| -> Result<Vec<FileDigest>> {
            ps.iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let report = RunReport {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            params: self.params,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            summary: serde_json::Value::Object(self.summary),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &report)
    }
}

/// `<out>.report.json` next to the primary output.
pub fn default_report_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}
