use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered tensor names and shapes over one contiguous buffer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let spec = TensorSpec {
            name: name.into(),
            shape,
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, idx: usize) -> &TensorSpec {
        &self.specs[idx]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Tensor owning flat coordinate `i`.
    pub fn tensor_of(&self, i: usize) -> Option<&TensorSpec> {
        let k = self.specs.partition_point(|s| s.offset <= i);
        self.specs[..k].last().filter(|s| i < s.offset + s.len())
    }
}

/// A named collection of f64 tensors stored in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.total()];
        Self { layout, data }
    }

    pub fn from_flat(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::invalid(format!(
                "flat buffer has {} values, layout expects {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn tensor(&self, idx: usize) -> &[f64] {
        &self.data[self.layout.spec(idx).range()]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut [f64] {
        let r = self.layout.spec(idx).range();
        &mut self.data[r]
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.tensor(i))
    }

    /// `(spec, values)` pairs in layout order.
    pub fn iter(&self) -> impl Iterator<Item = (&TensorSpec, &[f64])> {
        self.layout
            .specs()
            .iter()
            .map(move |s| (s, &self.data[s.range()]))
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous() {
        let mut l = Layout::new();
        l.push("a", vec![2, 3]);
        l.push("b", vec![4]);
        l.push("c", vec![1, 1, 5]);
        assert_eq!(l.total(), 15);
        assert_eq!(l.spec(1).offset, 6);
        assert_eq!(l.spec(2).range(), 10..15);
        assert_eq!(l.tensor_of(0).unwrap().name, "a");
        assert_eq!(l.tensor_of(9).unwrap().name, "b");
        assert_eq!(l.tensor_of(14).unwrap().name, "c");
        assert!(l.tensor_of(15).is_none());
    }

    #[test]
    fn views_and_axpy() {
        let mut l = Layout::new();
        l.push("w", vec![2, 2]);
        l.push("b", vec![2]);
        let l = Arc::new(l);
        let mut p = ParamSet::from_flat(l.clone(), (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(p.get("b").unwrap(), &[4.0, 5.0]);
        let q = ParamSet::from_flat(l.clone(), vec![1.0; 6]).unwrap();
        p.axpy(2.0, &q);
        assert_eq!(p.tensor(0), &[2.0, 3.0, 4.0, 5.0]);
        assert!(ParamSet::from_flat(l, vec![0.0; 5]).is_err());
    }
}
