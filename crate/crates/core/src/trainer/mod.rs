//! Desk-scale byte-level language model: manual forward/backward in f64,
//! AdamW with linear warmup, power-of-two checkpointing, exact per-token
//! gradients and proxy interference accumulators.

mod batch;
mod config;
mod data;
mod gemm;
mod model;
mod optim;
mod params;
mod proxy;
mod state;
mod train;

pub use batch::TokenBatch;
pub use config::{ModelConfig, RunConfig, TrainConfig};
pub use data::{Batcher, Corpus, TokenSet};
pub use model::{Backward, Model, INIT_STD, PER_TOKEN_CAP};
pub use optim::{adamw_step, AdamUpdate};
pub use params::{Layout, ParamSet, TensorSpec};
pub use proxy::{ProxyAccumulator, ProxyTensor};
pub use state::{backward, build_model, forward_per_token, per_token_grads, RngState, TrainState};
pub use train::{train, StepRecord, TrainSummary, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE};
