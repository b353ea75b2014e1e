use super::config::TrainConfig;
use super::params::ParamSet;
use super::state::TrainState;
use crate::error::{Error, Result};
use crate::interference::UpdateVector;

#[derive(Debug, Clone)]
pub struct AdamUpdate {
    pub lr: f64,
    /// `θ_new − θ_old`, flattened in layout order.
    pub delta: UpdateVector,
}

/// One AdamW step (bias-corrected moments, decoupled weight decay).
/// Decay applies to matrices only; vectors (biases, norm gains) are exempt.
pub fn adamw_step(
    state: &mut TrainState,
    grads: &ParamSet,
    cfg: &TrainConfig,
    t: u64,
) -> Result<AdamUpdate> {
    if t != state.step + 1 {
        return Err(Error::invalid(format!(
            "step {t} does not follow state step {}",
            state.step
        )));
    }
    if !grads.same_layout(&state.params) {
        return Err(Error::invalid("gradient layout differs from parameters"));
    }
    if let Some(i) = grads.flat().iter().position(|g| !g.is_finite()) {
        let tensor = grads
            .layout()
            .tensor_of(i)
            .map_or_else(|| "?".to_string(), |s| s.name.clone());
        return Err(Error::NonFiniteGradient { step: t, tensor });
    }

    let lr = cfg.lr_at(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powf(t as f64);
    let bc2 = 1.0 - b2.powf(t as f64);
    let layout = state.params.layout().clone();
    let mut delta = vec![0.0; layout.total()];
    let theta = state.params.flat_mut();
    let m = state.adam_m.flat_mut();
    let v = state.adam_v.flat_mut();
    let g = grads.flat();
    for spec in layout.specs() {
        let decay = if spec.shape.len() >= 2 {
            cfg.weight_decay
        } else {
            0.0
        };
        for i in spec.range() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let old = theta[i];
            let mut new = old * (1.0 - lr * decay);
            new -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            theta[i] = new;
            delta[i] = new - old;
        }
    }
    state.step = t;
    Ok(AdamUpdate {
        lr,
        delta: UpdateVector::new(delta)?,
    })
}
