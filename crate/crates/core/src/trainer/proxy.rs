use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-position contribution sums for one linear map's weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub sum_grads: Vec<f64>,
    pub sum_abs_grads: Vec<f64>,
}

impl ProxyTensor {
    /// `1 − |Σ g| / Σ |x|⊗|dy|` per element; 0 where nothing contributed.
    pub fn gdi(&self) -> Vec<f64> {
        self.sum_grads
            .iter()
            .zip(&self.sum_abs_grads)
            .map(|(&s, &a)| {
                if a > 0.0 {
                    (1.0 - s.abs() / a).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn mean_gdi(&self) -> f64 {
        let g = self.gdi();
        crate::numeric::mean(&g)
    }

    /// Elements violating `sum_abs_grads >= |sum_grads|`.
    pub fn bound_violations(&self) -> usize {
        self.sum_grads
            .iter()
            .zip(&self.sum_abs_grads)
            .filter(|(s, a)| s.abs() > **a)
            .count()
    }
}

/// Proxy accumulators over every instrumented weight. Token embeddings,
/// positional embeddings and the tied output head are not instrumented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyAccumulator {
    pub tensors: Vec<ProxyTensor>,
    /// Token positions folded into the sums since the last reset.
    pub positions: usize,
}

impl ProxyAccumulator {
    pub fn new(tensors: Vec<ProxyTensor>, positions: usize) -> Self {
        Self { tensors, positions }
    }

    pub fn get(&self, name: &str) -> Option<&ProxyTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds another pass over the same tensors.
    pub fn merge(&mut self, other: &ProxyAccumulator) -> Result<()> {
        let compatible = self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !compatible {
            return Err(Error::invalid("proxy accumulators cover different tensors"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.sum_grads
                .iter_mut()
                .zip(&b.sum_grads)
                .for_each(|(x, y)| *x += y);
            a.sum_abs_grads
                .iter_mut()
                .zip(&b.sum_abs_grads)
                .for_each(|(x, y)| *x += y);
        }
        self.positions += other.positions;
        Ok(())
    }

    pub fn reset(&mut self) {
        for t in &mut self.tensors {
            t.sum_grads.fill(0.0);
            t.sum_abs_grads.fill(0.0);
        }
        self.positions = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: Vec<f64>, a: Vec<f64>) -> ProxyTensor {
        ProxyTensor {
            name: "w".into(),
            shape: vec![s.len()],
            sum_grads: s,
            sum_abs_grads: a,
        }
    }

    #[test]
    fn gdi_values() {
        let p = t(vec![1.0, -0.5, 0.0, 0.0], vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(p.gdi(), vec![0.0, 0.75, 1.0, 0.0]);
        assert_eq!(p.bound_violations(), 0);
        assert_eq!(t(vec![2.0], vec![1.0]).bound_violations(), 1);
    }

    #[test]
    fn merge_and_reset() {
        let mut a = ProxyAccumulator::new(vec![t(vec![1.0], vec![1.0])], 1);
        let b = ProxyAccumulator::new(vec![t(vec![-1.0], vec![1.0])], 1);
        a.merge(&b).unwrap();
        assert_eq!(a.tensors[0].gdi(), vec![1.0]);
        assert_eq!(a.positions, 2);
        a.reset();
        assert_eq!(a.positions, 0);
        let c = ProxyAccumulator::new(vec![], 0);
        assert!(a.merge(&c).is_err());
    }
}
