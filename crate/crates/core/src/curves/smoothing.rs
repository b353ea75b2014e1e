use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::LossCurve;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// LSMA window ratio; the window at step `t` starts after `floor(t / k)`.
    pub k: f64,
    pub subsample_per_decade: u32,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            k: 1.2,
            subsample_per_decade: 200,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 1.0) {
            return Err(Error::invalid(format!(
                "smoothing k must be > 1, got {}",
                self.k
            )));
        }
        if self.subsample_per_decade < 2 {
            return Err(Error::invalid("subsample_per_decade must be >= 2"));
        }
        Ok(())
    }
}

/// Logarithmic simple moving average.
///
/// The output loss at step `t` is the mean of the input losses at the steps
/// `s` present in the curve with `floor(t / k) < s <= t`.
pub fn lsma_smooth(curve: &LossCurve, cfg: &SmoothingConfig) -> Result<LossCurve> {
    cfg.validate()?;
    if curve.is_empty() {
        return Err(Error::invalid("cannot smooth an empty curve"));
    }
    let steps = curve.steps();
    let losses = curve.losses();
    let n = steps.len();

    // Compensated prefix sums as (hi, lo) pairs: prefix[i] covers losses[..i].
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::new();
    prefix.push((0.0, 0.0));
    for &l in losses {
        acc.add(l);
        let v = acc.value();
        prefix.push((v, acc.value() - v));
    }
    let window_sum = |lo: usize, hi: usize| -> f64 {
        let (a_hi, a_lo) = prefix[hi];
        let (b_hi, b_lo) = prefix[lo];
        (a_hi - b_hi) + (a_lo - b_lo)
    };

    // Monotone deques of indices for the sliding window min / max.
    let mut min_q: VecDeque<usize> = VecDeque::new();
    let mut max_q: VecDeque<usize> = VecDeque::new();
    let mut left = 0usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        while min_q.back().is_some_and(|&j| losses[j] >= losses[i]) {
            min_q.pop_back();
        }
        min_q.push_back(i);
        while max_q.back().is_some_and(|&j| losses[j] <= losses[i]) {
            max_q.pop_back();
        }
        max_q.push_back(i);

        let p = (steps[i] as f64 / cfg.k).floor() as u64;
        while steps[left] <= p {
            left += 1;
        }
        while min_q.front().is_some_and(|&j| j < left) {
            min_q.pop_front();
        }
        while max_q.front().is_some_and(|&j| j < left) {
            max_q.pop_front();
        }
        let count = (i + 1 - left) as f64;
        let mean = window_sum(left, i + 1) / count;
        let lo = losses[*min_q.front().unwrap()];
        let hi = losses[*max_q.front().unwrap()];
        out.push(mean.clamp(lo, hi));
    }
    Ok(curve.with_losses(out))
}

/// Subsequence whose steps are close to uniform in `log(step)`.
///
/// A grid with `subsample_per_decade` points per decade is laid out from the
/// first step; each grid point keeps the curve step nearest to it in log
/// space (ties go to the earlier step). The first and last points are always
/// retained, and applying this twice returns the first result unchanged.
pub fn log_subsample(curve: &LossCurve, cfg: &SmoothingConfig) -> Result<LossCurve> {
    cfg.validate()?;
    if curve.len() <= 2 {
        return Ok(curve.clone());
    }
    let logs: Vec<f64> = curve.steps().iter().map(|&s| (s as f64).log10()).collect();
    let n = logs.len();
    let first = logs[0];
    let last = logs[n - 1];
    let spacing = 1.0 / cfg.subsample_per_decade as f64;

    let mut keep: Vec<usize> = vec![0];
    let mut cursor = 0usize;
    let mut k = 1u64;
    loop {
        let g = first + k as f64 * spacing;
        if g > last {
            break;
        }
        while cursor + 1 < n && logs[cursor + 1] <= g {
            cursor += 1;
        }
        let pick = if cursor + 1 < n && (logs[cursor + 1] - g) < (g - logs[cursor]) {
            cursor + 1
        } else {
            cursor
        };
        if *keep.last().unwrap() != pick {
            keep.push(pick);
        }
        k += 1;
    }
    if *keep.last().unwrap() != n - 1 {
        keep.push(n - 1);
    }
    Ok(curve.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveSource;
    use proptest::prelude::*;

    fn curve(steps: Vec<u64>, losses: Vec<f64>) -> LossCurve {
        LossCurve::new(steps, losses, CurveSource::TrainBatch).unwrap()
    }

    /// Direct mean over the window, independent of the prefix-sum path.
    fn lsma_oracle(steps: &[u64], losses: &[f64], k: f64) -> Vec<f64> {
        steps
            .iter()
            .map(|&t| {
                let p = (t as f64 / k).floor() as u64;
                let w: Vec<f64> = steps
                    .iter()
                    .zip(losses)
                    .filter(|(&s, _)| s > p && s <= t)
                    .map(|(_, &l)| l)
                    .collect();
                w.iter().sum::<f64>() / w.len() as f64
            })
            .collect()
    }

    #[test]
    fn constant_series_is_fixed_point() {
        let c = curve((1..=500).collect(), vec![3.0; 500]);
        let s = lsma_smooth(&c, &SmoothingConfig::default()).unwrap();
        assert!(s.losses().iter().all(|&l| l == 3.0));
    }

    #[test]
    fn window_mean_k2() {
        let c = curve(vec![1, 2, 3, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let cfg = SmoothingConfig {
            k: 2.0,
            ..Default::default()
        };
        let s = lsma_smooth(&c, &cfg).unwrap();
        assert_eq!(s.losses()[3], 3.5);
        assert_eq!(s.steps(), c.steps());
    }

    #[test]
    fn first_step_is_identity() {
        let c = curve(vec![1, 2, 3], vec![7.0, 2.0, 1.0]);
        let s = lsma_smooth(&c, &SmoothingConfig::default()).unwrap();
        assert_eq!(s.losses()[0], 7.0);
    }

    #[test]
    fn empty_curve_rejected() {
        let c = curve(vec![], vec![]);
        assert!(lsma_smooth(&c, &SmoothingConfig::default()).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let c = curve(vec![1], vec![1.0]);
        let cfg = SmoothingConfig {
            k: 1.0,
            ..Default::default()
        };
        assert!(lsma_smooth(&c, &cfg).is_err());
        let cfg = SmoothingConfig {
            subsample_per_decade: 1,
            ..Default::default()
        };
        assert!(log_subsample(&c, &cfg).is_err());
    }

    #[test]
    fn sparse_steps_use_only_present_points() {
        let steps = vec![1, 2, 4, 8, 16, 100, 110, 120];
        let losses = vec![8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.5, 2.0];
        let c = curve(steps.clone(), losses.clone());
        let s = lsma_smooth(&c, &SmoothingConfig::default()).unwrap();
        for (a, b) in s.losses().iter().zip(lsma_oracle(&steps, &losses, 1.2)) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
    }

    #[test]
    fn subsample_two_points_kept() {
        let c = curve(vec![5, 900], vec![2.0, 1.0]);
        let s = log_subsample(&c, &SmoothingConfig::default()).unwrap();
        assert_eq!(s.steps(), &[5, 900]);
    }

    #[test]
    fn subsample_dense_range() {
        let n = 100_000u64;
        let c = curve(
            (1..=n).collect(),
            (1..=n).map(|s| 1.0 + 1.0 / s as f64).collect(),
        );
        let s = log_subsample(&c, &SmoothingConfig::default()).unwrap();
        assert!(s.len() <= 1001, "{} points", s.len());
        assert_eq!(s.steps()[0], 1);
        assert_eq!(*s.steps().last().unwrap(), n);
        let target = 10f64.powf(1.0 / 200.0);
        for w in s.steps().windows(2).filter(|w| w[0] >= 10_000) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!((ratio - target).abs() < 2e-4, "ratio {ratio} at {}", w[0]);
        }
    }

    #[test]
    fn subsample_idempotent_on_conforming_input() {
        let c = curve((1..=50_000).collect(), vec![1.0; 50_000]);
        let cfg = SmoothingConfig::default();
        let once = log_subsample(&c, &cfg).unwrap();
        let twice = log_subsample(&once, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn lsma_matches_direct_window_mean(
            losses in prop::collection::vec(0.01f64..100.0, 1..300),
            k in 1.05f64..4.0,
            gap in 1u64..5,
        ) {
            let steps: Vec<u64> = (0..losses.len() as u64).map(|i| 1 + i * gap).collect();
            let c = curve(steps.clone(), losses.clone());
            let cfg = SmoothingConfig { k, ..Default::default() };
            let s = lsma_smooth(&c, &cfg).unwrap();
            let oracle = lsma_oracle(&steps, &losses, k);
            for (i, (a, b)) in s.losses().iter().zip(&oracle).enumerate() {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
                // bounded by the window's min and max
                let p = (steps[i] as f64 / k).floor() as u64;
                let w: Vec<f64> = steps.iter().zip(&losses)
                    .filter(|(&st, _)| st > p && st <= steps[i]).map(|(_, &l)| l).collect();
                let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*a >= lo && *a <= hi);
            }
        }
    }
}
