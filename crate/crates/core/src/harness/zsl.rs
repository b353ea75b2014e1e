use serde::{Deserialize, Serialize};

use super::run::RunDir;
use crate::error::{Error, Result};
use crate::interference::{abs_mean_decompose, ValueSeries};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairRule {
    /// `(t, 2t)` for every checkpoint `t` whose double is also a checkpoint.
    Doubling,
    Explicit(Vec<(u64, u64)>),
}

impl std::str::FromStr for PairRule {
    type Err = Error;

    /// `doubling`, or a comma-separated list such as `1:2,4:64`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "doubling" {
            return Ok(PairRule::Doubling);
        }
        let pairs = s
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("bad pair `{p}`, expected t1:t2")))?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::invalid(format!("bad step `{x}` in pair `{p}`")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairRule::Explicit(pairs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZslReportRow {
    pub t1: u64,
    pub t2: u64,
    #[serde(rename = "D")]
    pub d: f64,
    /// Constructive interference `1 − D`, kept at full precision.
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "abs_dL")]
    pub abs_dl: f64,
    pub n_tokens: usize,
}

pub fn zsl_pairs(checkpoint_steps: &[u64], rule: &PairRule) -> Vec<(u64, u64)> {
    match rule {
        PairRule::Doubling => checkpoint_steps
            .iter()
            .filter(|&&t| checkpoint_steps.contains(&(2 * t)))
            .map(|&t| (t, 2 * t))
            .collect(),
        PairRule::Explicit(p) => p.clone(),
    }
}

/// Interference of per-token loss changes between snapshot pairs.
pub fn zsl_from_snapshots(t1: u64, l1: &[f64], t2: u64, l2: &[f64]) -> Result<ZslReportRow> {
    if l1.len() != l2.len() {
        return Err(Error::invalid(format!(
            "token-set mismatch: step {t1} has {} tokens, step {t2} has {}",
            l1.len(),
            l2.len()
        )));
    }
    let dl: Vec<f64> = l2.iter().zip(l1).map(|(b, a)| b - a).collect();
    let r = abs_mean_decompose(&ValueSeries::new(dl)?);
    Ok(ZslReportRow {
        t1,
        t2,
        d: r.d,
        c: r.c,
        m: r.m,
        abs_dl: r.abs_mean,
        n_tokens: l1.len(),
    })
}

pub fn zsl_report(run: &RunDir, rule: &PairRule) -> Result<Vec<ZslReportRow>> {
    let manifest = run.manifest()?;
    let n_tokens = run.token_set()?.n_tokens;
    let pairs = zsl_pairs(&manifest.checkpoint_steps, rule);
    if pairs.is_empty() {
        return Err(Error::invalid("no checkpoint pairs match the pair rule"));
    }
    pairs
        .into_iter()
        .map(|(t1, t2)| {
            let l1 = run.snapshot(t1)?;
            let l2 = run.snapshot(t2)?;
            for (t, l) in [(t1, &l1), (t2, &l2)] {
                if l.len() != n_tokens {
                    return Err(Error::invalid(format!(
                        "token-set mismatch: snapshot at step {t} has {} tokens, token set has {n_tokens}",
                        l.len()
                    )));
                }
            }
            zsl_from_snapshots(t1, &l1, t2, &l2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_enumeration() {
        let steps: Vec<u64> = (0..=14).map(|i| 1u64 << i).collect();
        let pairs = zsl_pairs(&steps, &PairRule::Doubling);
        assert_eq!(pairs.len(), 14);
        assert_eq!(pairs[0], (1, 2));
        assert_eq!(pairs[13], (8192, 16384));
        assert_eq!(
            zsl_pairs(&[1, 2, 4, 100], &PairRule::Doubling),
            vec![(1, 2), (2, 4)]
        );
    }

    #[test]
    fn parse_rules() {
        assert_eq!("doubling".parse::<PairRule>().unwrap(), PairRule::Doubling);
        assert_eq!(
            "1:2, 4:64".parse::<PairRule>().unwrap(),
            PairRule::Explicit(vec![(1, 2), (4, 64)])
        );
        assert!("1-2".parse::<PairRule>().is_err());
        assert!("1:x".parse::<PairRule>().is_err());
    }

    #[test]
    fn rows_from_snapshots() {
        let z = zsl_from_snapshots(1, &[1.0, 1.0], 2, &[1.0, 1.0]).unwrap();
        assert_eq!((z.d, z.m, z.abs_dl), (0.0, 0.0, 0.0));

        let z = zsl_from_snapshots(1, &[5.0, 5.0, 5.0], 2, &[7.0, 4.0, 6.0]).unwrap();
        assert!((z.d - 0.5).abs() < 1e-15);
        assert!((z.m - 4.0 / 3.0).abs() < 1e-15);
        assert!((z.abs_dl - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(z.n_tokens, 3);

        assert!(zsl_from_snapshots(1, &[1.0], 2, &[1.0, 2.0]).is_err());
    }
}
