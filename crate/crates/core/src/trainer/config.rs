use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_dim: usize,
    /// Maximum sequence length (size of the positional table).
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            mlp_dim: 256,
            seq_len: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("mlp_dim", self.mlp_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be >= 2".into()));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::Config("vocab_size too large".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_sequences: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Checkpoints are written at steps `2^i` for `i <= checkpoint_exponent_max`.
    pub checkpoint_exponent_max: u32,
    /// Held-out sequences whose every position forms the evaluation token set.
    pub eval_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_sequences: 32,
            total_steps: 1 << 14,
            warmup_steps: 256,
            peak_lr: 1.3e-3,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            checkpoint_exponent_max: 14,
            eval_sequences: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sequences == 0 || self.total_steps == 0 || self.warmup_steps == 0 {
            return Err(Error::Config(
                "batch_sequences, total_steps and warmup_steps must be positive".into(),
            ));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be < total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("peak_lr must be > 0".into()));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be > 0 and weight_decay >= 0".into(),
            ));
        }
        if self.checkpoint_exponent_max > 62 {
            return Err(Error::Config(
                "checkpoint_exponent_max must be <= 62".into(),
            ));
        }
        if self.eval_sequences == 0 {
            return Err(Error::Config("eval_sequences must be positive".into()));
        }
        Ok(())
    }

    /// Linear warmup to `peak_lr`, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.warmup_steps {
            self.peak_lr
        } else {
            self.peak_lr * step as f64 / self.warmup_steps as f64
        }
    }

    /// `{2^i : 2^i <= total_steps} ∪ {total_steps}`, ascending.
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = (0..=self.checkpoint_exponent_max)
            .map(|i| 1u64 << i)
            .take_while(|&s| s <= self.total_steps)
            .collect();
        if steps.last() != Some(&self.total_steps) {
            steps.push(self.total_steps);
        }
        steps
    }
}

/// Both halves of a run's configuration, as read from one flat file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses flat `key = value` lines. Keys are the field names of
    /// [`ModelConfig`] and [`TrainConfig`]; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let mut cfg = RunConfig::default();
        for (key, value) in table {
            cfg.set(&key, &value_text(&value)?)?;
        }
        Ok(cfg)
    }

    /// Overrides one field by name from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "vocab_size" => m.vocab_size = num(key, value)?,
            "d_model" => m.d_model = num(key, value)?,
            "n_layers" => m.n_layers = num(key, value)?,
            "n_heads" => m.n_heads = num(key, value)?,
            "mlp_dim" => m.mlp_dim = num(key, value)?,
            "seq_len" => m.seq_len = num(key, value)?,
            "seed" => m.seed = num(key, value)?,
            "batch_sequences" => t.batch_sequences = num(key, value)?,
            "total_steps" => t.total_steps = num(key, value)?,
            "warmup_steps" => t.warmup_steps = num(key, value)?,
            "peak_lr" => t.peak_lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "eps" => t.eps = num(key, value)?,
            "checkpoint_exponent_max" => t.checkpoint_exponent_max = num(key, value)?,
            "eval_sequences" => t.eval_sequences = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Canonical `key = value` rendering; the run's provenance snapshot.
    pub fn snapshot(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let lines = [
            format!("vocab_size = {}", m.vocab_size),
            format!("d_model = {}", m.d_model),
            format!("n_layers = {}", m.n_layers),
            format!("n_heads = {}", m.n_heads),
            format!("mlp_dim = {}", m.mlp_dim),
            format!("seq_len = {}", m.seq_len),
            format!("seed = {}", m.seed),
            format!("batch_sequences = {}", t.batch_sequences),
            format!("total_steps = {}", t.total_steps),
            format!("warmup_steps = {}", t.warmup_steps),
            format!("peak_lr = {:e}", t.peak_lr),
            format!("weight_decay = {:e}", t.weight_decay),
            format!("beta1 = {:e}", t.beta1),
            format!("beta2 = {:e}", t.beta2),
            format!("eps = {:e}", t.eps),
            format!("checkpoint_exponent_max = {}", t.checkpoint_exponent_max),
            format!("eval_sequences = {}", t.eval_sequences),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

fn value_text(v: &toml::Value) -> Result<String> {
    match v {
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:e}")),
        toml::Value::String(s) => Ok(s.clone()),
        other => Err(Error::Config(format!("unsupported config value {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_schedule() {
        let t = TrainConfig::default();
        let steps = t.checkpoint_steps();
        assert_eq!(steps.len(), 15);
        assert_eq!(steps[0], 1);
        assert_eq!(*steps.last().unwrap(), 16384);
        assert!(steps.windows(2).all(|w| w[1] == 2 * w[0]));

        let t = TrainConfig {
            total_steps: 100,
            warmup_steps: 10,
            checkpoint_exponent_max: 14,
            ..Default::default()
        };
        assert_eq!(t.checkpoint_steps(), vec![1, 2, 4, 8, 16, 32, 64, 100]);
    }

    #[test]
    fn warmup_then_constant() {
        let t = TrainConfig {
            peak_lr: 6.8e-4,
            warmup_steps: 2000,
            total_steps: 1 << 18,
            ..Default::default()
        };
        assert!((t.lr_at(1000) - 3.4e-4).abs() < 1e-18);
        assert_eq!(t.lr_at(2000), 6.8e-4);
        assert_eq!(t.lr_at(1 << 17), 6.8e-4);
        assert_eq!(t.lr_at(0), 0.0);
    }

    #[test]
    fn parse_flat_file_and_override() {
        let mut cfg =
            RunConfig::parse("d_model = 32\nn_heads = 4\npeak_lr = 2e-3\nseed = 7\n").unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.seed, 7);
        assert_eq!(cfg.train.peak_lr, 2e-3);
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.model.seed, 9);
        cfg.validate().unwrap();
        let round = RunConfig::parse(&cfg.snapshot()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::parse("dmodel = 3").is_err());
        assert!(RunConfig::parse("d_model = \"x\"").is_err());
        let mut cfg = RunConfig::default();
        cfg.model.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.warmup_steps = cfg.train.total_steps;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.seq_len = 1;
        assert!(cfg.validate().is_err());
    }
}
