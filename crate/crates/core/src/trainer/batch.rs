use crate::error::{Error, Result};

/// `n_seq x seq` token ids with next-token targets, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    n_seq: usize,
    seq: usize,
    inputs: Vec<u32>,
    targets: Vec<u32>,
}

impl TokenBatch {
    pub fn new(n_seq: usize, seq: usize, inputs: Vec<u32>, targets: Vec<u32>) -> Result<Self> {
        if n_seq == 0 || seq == 0 {
            return Err(Error::invalid("token batch needs at least one position"));
        }
        if inputs.len() != n_seq * seq || targets.len() != n_seq * seq {
            return Err(Error::invalid(format!(
                "token batch expects {n_seq} x {seq} inputs and targets"
            )));
        }
        for b in 0..n_seq {
            let row = b * seq;
            for s in 0..seq - 1 {
                if targets[row + s] != inputs[row + s + 1] {
                    return Err(Error::invalid(format!(
                        "targets[{b}][{s}] is not inputs[{b}][{}]",
                        s + 1
                    )));
                }
            }
        }
        Ok(Self {
            n_seq,
            seq,
            inputs,
            targets,
        })
    }

    /// Each window holds `seq + 1` tokens; inputs drop the last, targets the first.
    pub fn from_windows<T: AsRef<[u8]>>(windows: &[T]) -> Result<Self> {
        let len = windows.first().map_or(0, |w| w.as_ref().len());
        if len < 2 || windows.iter().any(|w| w.as_ref().len() != len) {
            return Err(Error::invalid(
                "windows must be non-empty, of equal length >= 2",
            ));
        }
        let seq = len - 1;
        let mut inputs = Vec::with_capacity(windows.len() * seq);
        let mut targets = Vec::with_capacity(windows.len() * seq);
        for w in windows {
            let w = w.as_ref();
            inputs.extend(w[..seq].iter().map(|&b| u32::from(b)));
            targets.extend(w[1..].iter().map(|&b| u32::from(b)));
        }
        Self::new(windows.len(), seq, inputs, targets)
    }

    pub fn n_seq(&self) -> usize {
        self.n_seq
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn n_positions(&self) -> usize {
        self.n_seq * self.seq
    }

    pub fn inputs(&self, b: usize) -> &[u32] {
        &self.inputs[b * self.seq..(b + 1) * self.seq]
    }

    pub fn targets(&self, b: usize) -> &[u32] {
        &self.targets[b * self.seq..(b + 1) * self.seq]
    }

    /// Copy holding only sequence `b`.
    pub fn sequence(&self, b: usize) -> TokenBatch {
        TokenBatch {
            n_seq: 1,
            seq: self.seq,
            inputs: self.inputs(b).to_vec(),
            targets: self.targets(b).to_vec(),
        }
    }

    pub(crate) fn check(&self, vocab: usize, max_seq: usize) -> Result<()> {
        if self.seq > max_seq {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds model seq_len {max_seq}",
                self.seq
            )));
        }
        if let Some(&t) = self
            .inputs
            .iter()
            .chain(&self.targets)
            .find(|&&t| t as usize >= vocab)
        {
            return Err(Error::invalid(format!(
                "token id {t} out of range for vocab_size {vocab}"
            )));
        }
        Ok(())
    }
}
