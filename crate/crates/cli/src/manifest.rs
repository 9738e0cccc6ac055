//! Run manifests: a JSON record of what a command consumed and produced.
//!
//! Everything except the `timing` section is deterministic for a given
//! (inputs, config, seed); re-running a command with the same manifest inputs
//! reproduces the listed output files byte for byte.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Timing {
    pub total_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellTiming {
    pub sigma: f64,
    pub r: f64,
    pub replicate: usize,
    pub mode: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    /// Wall-clock only; the one section that varies between identical runs.
    pub timing: Timing,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timing: Timing::default(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| PipelineError::io(path, e))?;
        Ok(path.to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_inputs_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "x,y,z,sxx,syy,szz\n0,0,0,1,1,1\n").unwrap();
        let mut m = RunManifest::new("register", 7, serde_json::json!({"components": 3}));
        m.add_input(&input).unwrap();
        m.add_output(dir.path().join("out.csv"));
        m.timing.total_seconds = 0.5;
        let p = m.write(dir.path().join("manifest.json")).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "register");
        assert_eq!(v["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
        assert_eq!(v["seed"], 7);
    }
}
