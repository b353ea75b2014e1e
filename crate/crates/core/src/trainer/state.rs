use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::TokenBatch;
use super::config::ModelConfig;
use super::model::{Backward, Model};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::interference::GradientMatrix;

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    #[serde(with = "hex32")]
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position; kept as a string since it is 128-bit.
    #[serde(with = "u128_str")]
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

mod hex32 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        let hex: String = v.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 64 || !s.is_ascii() {
            return Err(D::Error::custom("expected 64 hex digits"));
        }
        let mut out = [0u8; 32];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(D::Error::custom)?;
        }
        Ok(out)
    }
}

mod u128_str {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// Parameters, AdamW moments, step counter and generator of one run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Arc<Model>,
    pub params: ParamSet,
    pub adam_m: ParamSet,
    pub adam_v: ParamSet,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Reassembles a state from stored parts, checking shapes.
    pub fn from_parts(
        model: Arc<Model>,
        params: ParamSet,
        adam_m: ParamSet,
        adam_v: ParamSet,
        step: u64,
        rng: RngState,
    ) -> Result<Self> {
        let layout = model.layout();
        for (what, p) in [
            ("params", &params),
            ("adam_m", &adam_m),
            ("adam_v", &adam_v),
        ] {
            if **p.layout() != **layout {
                return Err(Error::invalid(format!(
                    "{what} do not match the model's tensor layout"
                )));
            }
        }
        Ok(Self {
            model,
            params,
            adam_m,
            adam_v,
            step,
            rng: rng.restore(),
        })
    }
}

/// Fresh model state: parameters drawn from `cfg.seed`, moments zeroed.
pub fn build_model(cfg: &ModelConfig) -> Result<TrainState> {
    let model = Arc::new(Model::new(cfg.clone())?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = model.init_params(&mut rng);
    let adam_m = params.zeros_like();
    let adam_v = params.zeros_like();
    Ok(TrainState {
        model,
        params,
        adam_m,
        adam_v,
        step: 0,
        rng,
    })
}

pub fn forward_per_token(state: &TrainState, batch: &TokenBatch) -> Result<Vec<f64>> {
    state.model.forward_per_token(&state.params, batch)
}

pub fn backward(
    state: &TrainState,
    batch: &TokenBatch,
    accumulate_proxy: bool,
) -> Result<Backward> {
    state.model.backward(&state.params, batch, accumulate_proxy)
}

pub fn per_token_grads(
    state: &TrainState,
    batch: &TokenBatch,
    positions: &[(usize, usize)],
) -> Result<GradientMatrix> {
    state.model.per_token_grads(&state.params, batch, positions)
}
