use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    #[default]
    TrainBatch,
    Holdout,
}

/// Ordered `(step, loss)` series. Steps are strictly increasing and start at
/// 1 or later; losses are strictly positive (nats/token).
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    steps: Vec<u64>,
    losses: Vec<f64>,
    source: CurveSource,
}

#[derive(Deserialize)]
struct CurveRecord {
    step: u64,
    loss: f64,
    #[serde(default)]
    source: Option<CurveSource>,
}

impl LossCurve {
    pub fn new(steps: Vec<u64>, losses: Vec<f64>, source: CurveSource) -> Result<Self> {
        if steps.len() != losses.len() {
            return Err(Error::invalid(format!(
                "curve has {} steps but {} losses",
                steps.len(),
                losses.len()
            )));
        }
        if let Some(&first) = steps.first() {
            if first < 1 {
                return Err(Error::invalid("curve steps must be >= 1"));
            }
        }
        if let Some(w) = steps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "curve steps not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some((i, l)) = losses
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::invalid(format!(
                "loss at step {} is not a positive finite value ({l})",
                steps[i]
            )));
        }
        Ok(Self {
            steps,
            losses,
            source,
        })
    }

    /// Points with `step >= min_step`.
    pub fn from_step(&self, min_step: u64) -> LossCurve {
        let k = self.steps.partition_point(|&s| s < min_step);
        LossCurve {
            steps: self.steps[k..].to_vec(),
            losses: self.losses[k..].to_vec(),
            source: self.source,
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn source(&self) -> CurveSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub(crate) fn with_losses(&self, losses: Vec<f64>) -> Self {
        debug_assert_eq!(losses.len(), self.steps.len());
        Self {
            steps: self.steps.clone(),
            losses,
            source: self.source,
        }
    }

    pub(crate) fn select(&self, idx: &[usize]) -> Self {
        Self {
            steps: idx.iter().map(|&i| self.steps[i]).collect(),
            losses: idx.iter().map(|&i| self.losses[i]).collect(),
            source: self.source,
        }
    }

    /// Reads `{"step", "loss", "source"?}` JSONL records. Blank lines are
    /// skipped; an unparseable final line is treated as a truncated write and
    /// dropped with a warning.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = reader
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::invalid(format!("reading JSONL: {e}")))?;
        let last_nonblank = lines.iter().rposition(|l| !l.trim().is_empty());
        let mut steps = Vec::new();
        let mut losses = Vec::new();
        let mut source = None;
        for (lineno, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CurveRecord>(line) {
                Ok(rec) => {
                    steps.push(rec.step);
                    losses.push(rec.loss);
                    if source.is_none() {
                        source = rec.source;
                    }
                }
                Err(e) if Some(lineno) == last_nonblank => {
                    log::warn!("ignoring truncated final JSONL line {}: {e}", lineno + 1);
                }
                Err(e) => {
                    return Err(Error::invalid(format!("JSONL line {}: {e}", lineno + 1)));
                }
            }
        }
        Self::new(steps, losses, source.unwrap_or_default())
    }

    /// Reads a two-column `step,loss` CSV with an optional header row.
    pub fn from_csv(reader: impl BufRead) -> Result<Self> {
        let mut steps = Vec::new();
        let mut losses = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::invalid(format!("reading CSV: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::invalid(format!(
                    "CSV line {} needs two columns",
                    lineno + 1
                )));
            };
            match (a.parse::<u64>(), b.parse::<f64>()) {
                (Ok(s), Ok(l)) => {
                    steps.push(s);
                    losses.push(l);
                }
                _ if lineno == 0 => continue, // header
                _ => {
                    return Err(Error::invalid(format!(
                        "CSV line {}: cannot parse `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(steps, losses, CurveSource::TrainBatch)
    }

    /// Loads by extension: `.csv` is CSV, anything else is JSONL.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            Self::from_csv(reader)
        } else {
            Self::from_jsonl(reader)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_increasing_steps() {
        let err = LossCurve::new(vec![1, 3, 3], vec![1.0, 1.0, 1.0], CurveSource::Holdout);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_nonpositive_loss_and_zero_step() {
        assert!(LossCurve::new(vec![1, 2], vec![1.0, 0.0], CurveSource::Holdout).is_err());
        assert!(LossCurve::new(vec![0, 2], vec![1.0, 1.0], CurveSource::Holdout).is_err());
    }

    #[test]
    fn jsonl_tolerates_truncated_tail() {
        let text = "{\"step\": 1, \"loss\": 5.0, \"source\": \"holdout\"}\n\
                    {\"step\": 2, \"loss\": 4.0, \"lr\": 0.1}\n\
                    {\"step\": 3, \"lo";
        let curve = LossCurve::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(curve.steps(), &[1, 2]);
        assert_eq!(curve.source(), CurveSource::Holdout);
    }

    #[test]
    fn jsonl_rejects_corrupt_middle_line() {
        let text = "{\"step\": 1, \"loss\": 5.0}\nnot json\n{\"step\": 3, \"loss\": 4.0}\n";
        assert!(LossCurve::from_jsonl(text.as_bytes()).is_err());
    }

    #[test]
    fn csv_with_header() {
        let text = "step,loss\n1,3.5\n2,3.0\n";
        let curve = LossCurve::from_csv(text.as_bytes()).unwrap();
        assert_eq!(curve.losses(), &[3.5, 3.0]);
    }
}
