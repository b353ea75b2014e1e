//! Compensated reductions shared by the interference and landscape code.
//!
//! Interference metrics are ratios of heavily cancelling sums, so every
//! reduction here carries a Neumaier correction term. Accumulation order is
//! always the slice order, which keeps results bit-reproducible.

/// Running Neumaier (improved Kahan) sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(xs);
    acc.value()
}

pub fn abs_sum(xs: &[f64]) -> f64 {
    sum(xs.iter().map(|x| x.abs()))
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs.iter().copied()) / xs.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn norm2(a: &[f64]) -> f64 {
    // Scaled to avoid overflow on large-magnitude vectors.
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * sum(a.iter().map(|x| (x / scale) * (x / scale))).sqrt()
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn norm_handles_huge_entries() {
        let n = norm2(&[3e200, 4e200]);
        assert!((n / 5e200 - 1.0).abs() < 1e-15);
        assert_eq!(norm2(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn rel_err_zero_for_equal() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
