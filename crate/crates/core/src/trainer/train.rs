use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{Batcher, Corpus};
use super::optim::adamw_step;
use super::state::{build_model, TrainState};
use crate::curves::CurveSource;
use crate::error::{Error, Result};
use crate::harness::{self, blob, RunDir, RunManifest, RunStatus};
use crate::numeric;

/// Consecutive steps above the divergence threshold before aborting.
pub const DIVERGENCE_PATIENCE: u64 = 100;
pub const DIVERGENCE_FACTOR: f64 = 3.0;

/// One line of `log.jsonl`. `loss` and `grad_norm` are measured on the
/// step's batch before the update; the update is the one the step applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub source: CurveSource,
    pub lr: f64,
    pub grad_norm: f64,
    pub update_norm: f64,
    pub cos_update_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint_steps: Vec<u64>,
    pub n_params: usize,
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Log {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(f),
        })
    }

    fn push(&mut self, rec: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Json {
            path: self.path.clone(),
            source: e,
        })?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (numeric::norm2(a), numeric::norm2(b));
    if na > 0.0 && nb > 0.0 {
        (numeric::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Trains from scratch and writes a complete run directory under `out`:
/// `config.snapshot`, `log.jsonl`, `manifest.json`, checkpoints at the
/// power-of-two schedule, the update following each checkpoint, and per-token
/// held-out losses at every checkpoint.
pub fn train(cfg: &RunConfig, corpus: Vec<u8>, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let (mc, tc) = (&cfg.model, &cfg.train);
    if let Some(&b) = corpus.iter().find(|&&b| b as usize >= mc.vocab_size) {
        return Err(Error::invalid(format!(
            "corpus byte {b} is outside vocab_size {}",
            mc.vocab_size
        )));
    }
    let corpus = Corpus::new(corpus, mc.seq_len, tc.eval_sequences)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let run = RunDir::at(out);
    blob::write_atomic(&run.config_path(), cfg.snapshot().as_bytes())?;
    let token_set = corpus.token_set();
    blob::write_json_atomic(&run.token_set_path(), &token_set)?;
    let eval_batch = token_set.batch()?;

    let mut state = build_model(mc)?;
    let model = state.model.clone();
    let hash = harness::config_hash(cfg);
    let mut manifest = RunManifest {
        run_id: format!("run-{hash}"),
        config_hash: hash,
        checkpoint_steps: Vec::new(),
        tool_version: harness::TOOL_VERSION.to_string(),
        status: RunStatus::Running,
        proxy_excluded: ["wte", "wpe"].map(String::from).to_vec(),
    };
    run.write_manifest(&manifest)?;
    let mut log = Log::create(run.log_path())?;

    let schedule = tc.checkpoint_steps();
    let mut batcher = Batcher::new(mc.seed);
    let mut pending: Option<u64> = None;
    let mut initial = f64::NAN;
    let mut last = f64::NAN;
    let mut over = 0u64;

    let abort = |log: &mut Log, manifest: &mut RunManifest, status, err: Error| -> Error {
        let _ = log.flush();
        manifest.status = status;
        let _ = run.write_manifest(manifest);
        err
    };

    for t in 1..=tc.total_steps {
        let batch = batcher.batch(&corpus, t, tc.batch_sequences);
        let bw = model.backward(&state.params, &batch, false)?;
        if t == 1 {
            initial = bw.loss;
        }
        last = bw.loss;
        let upd = match adamw_step(&mut state, &bw.grads, tc, t) {
            Ok(u) => u,
            Err(e) => return Err(abort(&mut log, &mut manifest, RunStatus::Diverged, e)),
        };
        let g = bw.grads.flat();
        log.push(&StepRecord {
            step: t,
            loss: bw.loss,
            source: CurveSource::TrainBatch,
            lr: upd.lr,
            grad_norm: numeric::norm2(g),
            update_norm: upd.delta.norm(),
            cos_update_grad: cosine(upd.delta.values(), g),
        })?;
        if let Some(p) = pending.take() {
            harness::save_update(out, p, &upd.delta)?;
        }

        if !bw.loss.is_finite() || bw.loss > DIVERGENCE_FACTOR * initial {
            over += 1;
            if over >= DIVERGENCE_PATIENCE || !bw.loss.is_finite() {
                let err = Error::Diverged {
                    step: t,
                    loss: bw.loss,
                    initial,
                };
                return Err(abort(&mut log, &mut manifest, RunStatus::Diverged, err));
            }
        } else {
            over = 0;
        }

        if schedule.binary_search(&t).is_ok() {
            harness::save_checkpoint(&state, out)?;
            let losses = model.forward_per_token(&state.params, &eval_batch)?;
            run.write_snapshot(t, &losses)?;
            manifest.checkpoint_steps.push(t);
            run.write_manifest(&manifest)?;
            log.flush()?;
            pending = Some(t);
            log::info!("step {t}: train loss {:.4}", bw.loss);
        }
    }

    if let Some(p) = pending {
        // Look-ahead update for the final checkpoint, on a scratch copy.
        let batch = batcher.batch(&corpus, p + 1, tc.batch_sequences);
        let bw = model.backward(&state.params, &batch, false)?;
        let mut scratch: TrainState = state.clone();
        let upd = adamw_step(&mut scratch, &bw.grads, tc, p + 1)?;
        harness::save_update(out, p, &upd.delta)?;
    }
    log.flush()?;
    manifest.status = RunStatus::Complete;
    run.write_manifest(&manifest)?;
    Ok(TrainSummary {
        run_dir: out.to_path_buf(),
        initial_loss: initial,
        final_loss: last,
        checkpoint_steps: manifest.checkpoint_steps,
        n_params: model.n_params(),
    })
}
