//! Run manifests.
//!
//! Every command writes `manifest.json` next to its outputs. It records the
//! exact arguments, the full configuration text with its hash, the seed and
//! its named sub-seeds, and hashes of every input and output file, which is
//! enough to re-execute the run and check that the outputs match byte for
//! byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TapError};
use crate::rng::sub_seed;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Names of the random streams derived from the global seed.
pub const STREAMS: [&str; 9] = [
    "data",
    "split",
    "train",
    "pairs",
    "verifier",
    "calibration",
    "restarts",
    "opt",
    "synthetic",
];

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the output directory for outputs, as given for inputs.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as parsed.
    pub args: Vec<String>,
    pub config_sha256: Option<String>,
    pub config_text: Option<String>,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// An output whose bytes differ from the recorded hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub path: PathBuf,
    pub expected: String,
    pub found: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config_sha256: None,
            config_text: None,
            seed,
            sub_seeds: STREAMS.iter().map(|s| (s.to_string(), sub_seed(seed, s))).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, text: &str) -> Self {
        self.config_sha256 = Some(sha256_bytes(text.as_bytes()));
        self.config_text = Some(text.into());
        self
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records `dir/rel`.
    pub fn add_output(&mut self, dir: &Path, rel: &Path) -> Result<()> {
        self.outputs.push(FileHash {
            path: rel.to_path_buf(),
            sha256: sha256_file(&dir.join(rel))?,
        });
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TapError::Config(format!("bad manifest {}: {e}", path.display())))
    }

    /// Inputs whose current bytes differ from the recorded hash.
    pub fn changed_inputs(&self) -> Vec<Mismatch> {
        self.inputs
            .iter()
            .filter_map(|f| {
                let found = sha256_file(&f.path).ok();
                (found.as_deref() != Some(f.sha256.as_str())).then(|| Mismatch {
                    path: f.path.clone(),
                    expected: f.sha256.clone(),
                    found,
                })
            })
            .collect()
    }

    /// Recorded outputs whose bytes in `dir` differ.
    pub fn compare_outputs(&self, dir: &Path) -> Vec<Mismatch> {
        self.outputs
            .iter()
            .filter_map(|f| {
                let found = sha256_file(&dir.join(&f.path)).ok();
                (found.as_deref() != Some(f.sha256.as_str())).then(|| Mismatch {
                    path: f.path.clone(),
                    expected: f.sha256.clone(),
                    found,
                })
            })
            .collect()
    }
}
