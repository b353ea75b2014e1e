use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::TokenBatch;
use crate::error::{Error, Result};

/// Byte corpus cut into non-overlapping windows of `seq_len + 1` bytes. The
/// last `eval_sequences` windows are held out.
#[derive(Debug, Clone)]
pub struct Corpus {
    bytes: Vec<u8>,
    seq_len: usize,
    n_train: usize,
    n_eval: usize,
}

/// Fixed held-out evaluation tokens: every position of the held-out windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet {
    pub seq_len: usize,
    /// Byte offsets of the held-out windows in the corpus.
    pub window_offsets: Vec<usize>,
    /// The held-out windows themselves, `seq_len + 1` bytes each.
    pub windows: Vec<Vec<u8>>,
    pub n_tokens: usize,
}

impl TokenSet {
    /// `(sequence, position)` of token `k` in the eval batch.
    pub fn position(&self, k: usize) -> (usize, usize) {
        (k / self.seq_len, k % self.seq_len)
    }

    /// The first `n` tokens, in order.
    pub fn positions(&self, n: usize) -> Vec<(usize, usize)> {
        (0..n.min(self.n_tokens))
            .map(|k| self.position(k))
            .collect()
    }

    pub fn batch(&self) -> Result<TokenBatch> {
        let batch = TokenBatch::from_windows(&self.windows)?;
        if batch.seq() != self.seq_len || batch.n_positions() != self.n_tokens {
            return Err(Error::invalid("token set windows disagree with its header"));
        }
        Ok(batch)
    }
}

impl Corpus {
    pub fn new(bytes: Vec<u8>, seq_len: usize, eval_sequences: usize) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::invalid("corpus is empty"));
        }
        let n_windows = (bytes.len() - 1) / seq_len;
        if n_windows <= eval_sequences {
            return Err(Error::invalid(format!(
                "corpus of {} bytes gives {n_windows} windows of {} bytes; need more than \
                 the {eval_sequences} held out",
                bytes.len(),
                seq_len + 1
            )));
        }
        Ok(Self {
            bytes,
            seq_len,
            n_train: n_windows - eval_sequences,
            n_eval: eval_sequences,
        })
    }

    pub fn n_train_windows(&self) -> usize {
        self.n_train
    }

    fn window(&self, w: usize) -> &[u8] {
        &self.bytes[w * self.seq_len..w * self.seq_len + self.seq_len + 1]
    }

    pub fn token_set(&self) -> TokenSet {
        TokenSet {
            seq_len: self.seq_len,
            window_offsets: (self.n_train..self.n_train + self.n_eval)
                .map(|w| w * self.seq_len)
                .collect(),
            windows: (self.n_train..self.n_train + self.n_eval)
                .map(|w| self.window(w).to_vec())
                .collect(),
            n_tokens: self.n_eval * self.seq_len,
        }
    }

    pub fn eval_batch(&self) -> TokenBatch {
        self.token_set()
            .batch()
            .expect("eval windows are well formed")
    }
}

/// Deterministic sequential batching over shuffled training windows.
/// Epoch `e` uses ChaCha8 stream `e + 1` of the run seed; a corpus shorter
/// than the run is revisited in a fresh order.
#[derive(Debug, Clone)]
pub struct Batcher {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
}

impl Batcher {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            epoch: u64::MAX,
            order: Vec::new(),
        }
    }

    fn ensure_epoch(&mut self, epoch: u64, n: usize) {
        if self.epoch == epoch && self.order.len() == n {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch + 1);
        self.order = (0..n).collect();
        self.order.shuffle(&mut rng);
        self.epoch = epoch;
    }

    /// Batch consumed by optimizer step `step` (1-based).
    pub fn batch(&mut self, corpus: &Corpus, step: u64, batch_sequences: usize) -> TokenBatch {
        let n = corpus.n_train;
        let start = (step - 1) * batch_sequences as u64;
        let windows: Vec<&[u8]> = (0..batch_sequences as u64)
            .map(|k| {
                let g = start + k;
                self.ensure_epoch(g / n as u64, n);
                corpus.window(self.order[(g % n as u64) as usize])
            })
            .collect();
        TokenBatch::from_windows(&windows).expect("training windows are well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_and_holdout() {
        let bytes: Vec<u8> = (0..=40u8).collect();
        let c = Corpus::new(bytes, 4, 2).unwrap();
        assert_eq!(c.n_train_windows(), 8);
        let ts = c.token_set();
        assert_eq!(ts.window_offsets, vec![32, 36]);
        assert_eq!(ts.n_tokens, 8);
        assert_eq!(ts.position(5), (1, 1));
        let eb = c.eval_batch();
        assert_eq!(eb.inputs(1), &[36, 37, 38, 39]);
        assert_eq!(eb.targets(1), &[37, 38, 39, 40]);
        assert_eq!(ts.batch().unwrap(), eb);
        assert!(Corpus::new(vec![1, 2, 3], 4, 1).is_err());
        assert!(Corpus::new(vec![], 4, 1).is_err());
    }

    #[test]
    fn batches_are_deterministic_and_cover_an_epoch() {
        let bytes: Vec<u8> = (0..=200u8).collect();
        let c = Corpus::new(bytes, 4, 2).unwrap();
        let n = c.n_train_windows();
        let mut a = Batcher::new(5);
        let mut firsts: Vec<u32> = (1..=n as u64)
            .map(|s| a.batch(&c, s, 1).inputs(0)[0])
            .collect();
        firsts.sort_unstable();
        let want: Vec<u32> = (0..n as u32).map(|w| w * 4).collect();
        assert_eq!(firsts, want);
        let mut b = Batcher::new(5);
        assert_eq!(a.batch(&c, 3, 2), b.batch(&c, 3, 2));
        let mut other = Batcher::new(6);
        let differs = (1..5).any(|s| other.batch(&c, s, 4) != b.batch(&c, s, 4));
        assert!(differs);
    }
}
