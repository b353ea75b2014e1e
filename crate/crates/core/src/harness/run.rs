use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blob;
use super::checkpoint;
use crate::curves::LossCurve;
use crate::error::{Error, Result};
use crate::interference::UpdateVector;
use crate::trainer::{RunConfig, TokenSet, TrainState};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    /// Checkpoints written so far, ascending.
    pub checkpoint_steps: Vec<u64>,
    pub tool_version: String,
    pub status: RunStatus,
    /// Tensors left out of the proxy accumulators.
    pub proxy_excluded: Vec<String>,
}

/// FNV-1a 64 of the canonical config snapshot, as hex.
pub fn config_hash(cfg: &RunConfig) -> String {
    format!("{:016x}", blob::fnv1a64(cfg.snapshot().as_bytes()))
}

/// Read access to a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("manifest.json").is_file() {
            return Err(Error::invalid(format!(
                "{} is not a run directory (no manifest.json)",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    /// Wraps `root` without checking it; used while a run is being written.
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn token_set_path(&self) -> PathBuf {
        self.root.join("eval").join("token_set.json")
    }

    pub fn snapshot_path(&self, step: u64) -> PathBuf {
        self.root
            .join("eval")
            .join(format!("step_{step}_token_losses.bin"))
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        blob::read_json(&self.manifest_path())
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        blob::write_json_atomic(&self.manifest_path(), m)
    }

    pub fn config(&self) -> Result<RunConfig> {
        let p = self.config_path();
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        RunConfig::parse(&text)
    }

    pub fn token_set(&self) -> Result<TokenSet> {
        blob::read_json(&self.token_set_path())
    }

    pub fn write_snapshot(&self, step: u64, losses: &[f64]) -> Result<()> {
        blob::write_f64_array(&self.snapshot_path(step), losses)
    }

    /// Per-token held-out losses recorded at checkpoint `step`.
    pub fn snapshot(&self, step: u64) -> Result<Vec<f64>> {
        let p = self.snapshot_path(step);
        if !p.is_file() {
            return Err(Error::invalid(format!(
                "no per-token loss snapshot for step {step} (expected {})",
                p.display()
            )));
        }
        blob::read_f64_array(&p)
    }

    pub fn checkpoint(&self, step: u64) -> Result<TrainState> {
        checkpoint::load_checkpoint(&self.root, step)
    }

    pub fn update(&self, step: u64) -> Result<UpdateVector> {
        checkpoint::load_update(&self.root, step)
    }

    /// The training-batch loss curve from `log.jsonl`.
    pub fn loss_curve(&self) -> Result<LossCurve> {
        LossCurve::load(&self.log_path())
    }
}
