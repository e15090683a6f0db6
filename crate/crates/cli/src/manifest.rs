//! Run manifests. The digest covers the subcommand, the resolved parameters
//! and the content hashes of the inputs; paths, job counts and timings are
//! recorded but excluded, so equal runs share a digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub params: Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: BTreeMap<String, String>,
    pub jobs: usize,
    pub timings_ms: BTreeMap<String, f64>,
    pub digest: String,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(subcommand: &'static str, params: Value, seed: u64, jobs: usize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            params,
            seed,
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            jobs,
            timings_ms: BTreeMap::new(),
            digest: String::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = file_digest(path)?;
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn add_output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.to_string(), path.display().to_string());
    }

    /// Fix the digest; call once all inputs are registered.
    pub fn seal(&mut self) -> String {
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|i| json!({"role": i.role, "sha256": i.sha256}))
            .collect();
        let canonical = json!({
            "tool": self.tool,
            "version": self.version,
            "subcommand": self.subcommand,
            "params": self.params,
            "seed": self.seed,
            "inputs": inputs,
        });
        self.digest = sha256_hex(canonical.to_string().as_bytes());
        self.digest.clone()
    }

    pub fn lap(&mut self, name: &str) {
        if let Some(t) = self.started {
            self.timings_ms.insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
        }
    }

    /// Write next to `primary` as `<primary>.manifest.json`.
    pub fn write_beside(&mut self, primary: &Path) -> Result<(), CliError> {
        self.lap("total");
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = std::path::PathBuf::from(name);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_paths_jobs_and_timings() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "x,y\n1,2\n").unwrap();
        std::fs::write(&b, "x,y\n1,2\n").unwrap();
        let mut m1 = RunManifest::new("explain", json!({"sigma": 1.0}), 7, 1);
        m1.add_input("data", &a).unwrap();
        m1.lap("x");
        let mut m2 = RunManifest::new("explain", json!({"sigma": 1.0}), 7, 8);
        m2.add_input("data", &b).unwrap();
        assert_eq!(m1.seal(), m2.seal());
        let mut m3 = RunManifest::new("explain", json!({"sigma": 2.0}), 7, 1);
        m3.add_input("data", &a).unwrap();
        assert_ne!(m1.digest, m3.seal());
        assert_eq!(m1.digest.len(), 64);
    }
}
