use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::blob::{self, TensorEntry};
use crate::error::{Error, Result};
use crate::interference::UpdateVector;
use crate::trainer::{Model, ModelConfig, ParamSet, RngState, TrainState};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: u64,
    pub rng: RngState,
    pub model: ModelConfig,
    /// Parameter tensors, in the model's layout order.
    pub tensors: Vec<TensorEntry>,
    pub adam_m: Vec<TensorEntry>,
    pub adam_v: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VectorManifest {
    step: u64,
    tensors: Vec<TensorEntry>,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step}"))
}

pub fn update_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("updates").join(format!("step_{step}"))
}

fn write_set(dir: &Path, prefix: &str, p: &ParamSet) -> Result<Vec<TensorEntry>> {
    p.iter()
        .map(|(spec, data)| {
            let file = format!("{prefix}.{}.bin", spec.name);
            blob::write_tensor(dir, &file, &spec.name, &spec.shape, data)
        })
        .collect()
}

fn read_set(dir: &Path, entries: &[TensorEntry], model: &Model) -> Result<ParamSet> {
    let layout = model.layout();
    let specs = layout.specs();
    let matches = entries.len() == specs.len()
        && entries
            .iter()
            .zip(specs)
            .all(|(e, s)| e.name == s.name && e.shape == s.shape);
    if !matches {
        return Err(Error::invalid(format!(
            "checkpoint tensors in {} do not match the model layout",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(layout.total());
    for e in entries {
        data.extend(blob::read_tensor(dir, e)?);
    }
    ParamSet::from_flat(layout.clone(), data)
}

/// Writes `state` into `dir` (replacing it atomically).
pub fn save_checkpoint_to(state: &TrainState, dir: &Path) -> Result<CheckpointManifest> {
    let mut manifest = None;
    blob::write_dir_atomic(dir, |tmp| {
        let m = CheckpointManifest {
            step: state.step,
            rng: state.rng_state(),
            model: state.model.config().clone(),
            tensors: write_set(tmp, "param", &state.params)?,
            adam_m: write_set(tmp, "adam_m", &state.adam_m)?,
            adam_v: write_set(tmp, "adam_v", &state.adam_v)?,
        };
        blob::write_json_atomic(&tmp.join(MANIFEST), &m)?;
        manifest = Some(m);
        Ok(())
    })?;
    Ok(manifest.expect("filled"))
}

pub fn load_checkpoint_from(dir: &Path) -> Result<TrainState> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "no checkpoint at {}",
            dir.display()
        )));
    }
    let m: CheckpointManifest = blob::read_json(&path)?;
    let model = Arc::new(Model::new(m.model.clone())?);
    let params = read_set(dir, &m.tensors, &model)?;
    let adam_m = read_set(dir, &m.adam_m, &model)?;
    let adam_v = read_set(dir, &m.adam_v, &model)?;
    TrainState::from_parts(model, params, adam_m, adam_v, m.step, m.rng)
}

/// `run_dir/checkpoints/step_<n>/`.
pub fn save_checkpoint(state: &TrainState, run_dir: &Path) -> Result<CheckpointManifest> {
    save_checkpoint_to(state, &checkpoint_path(run_dir, state.step))
}

pub fn load_checkpoint(run_dir: &Path, step: u64) -> Result<TrainState> {
    load_checkpoint_from(&checkpoint_path(run_dir, step))
}

/// Stores the update applied immediately after checkpoint `step`.
pub fn save_update(run_dir: &Path, step: u64, delta: &UpdateVector) -> Result<()> {
    let dir = update_path(run_dir, step);
    blob::write_dir_atomic(&dir, |tmp| {
        let e = blob::write_tensor(tmp, "delta.bin", "delta", &[delta.len()], delta.values())?;
        blob::write_json_atomic(
            &tmp.join(MANIFEST),
            &VectorManifest {
                step,
                tensors: vec![e],
            },
        )
    })
}

pub fn load_update(run_dir: &Path, step: u64) -> Result<UpdateVector> {
    let dir = update_path(run_dir, step);
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "no update recorded after step {step} ({})",
            dir.display()
        )));
    }
    let m: VectorManifest = blob::read_json(&path)?;
    let e = m
        .tensors
        .first()
        .ok_or_else(|| Error::invalid(format!("empty update manifest in {}", dir.display())))?;
    UpdateVector::new(blob::read_tensor(&dir, e)?)
}
