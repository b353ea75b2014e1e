use serde::{Deserialize, Serialize};

use super::DecelMeasurements;
use crate::error::{Error, Result};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "N")]
    pub n_params: u64,
    #[serde(rename = "L_d")]
    pub l_d: f64,
    pub t_d: f64,
    pub r_d: f64,
}

impl ScalingRow {
    pub fn from_measurements(n_params: u64, m: &DecelMeasurements) -> Self {
        Self {
            n_params,
            l_d: m.l_d,
            t_d: m.t_d,
            r_d: m.r_d,
        }
    }
}

/// `y = coef * N^exponent`, fitted as a line in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn eval(&self, n: f64) -> f64 {
        self.coef * n.powf(self.exponent)
    }
}

/// `y = intercept + slope * N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn eval(&self, n: f64) -> f64 {
        self.intercept + self.slope * n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub sizes: Vec<u64>,
    pub ld_fit: PowerLaw,
    pub rd_fit: PowerLaw,
    pub td_fit: Affine,
}

impl ScalingFit {
    /// `L(N, T) = L_d(N) * t_d(N)^{r_d(N)} * T^{-r_d(N)}`.
    pub fn predict(&self, n: f64, horizon: f64) -> f64 {
        let l_d = self.ld_fit.eval(n);
        let r_d = self.rd_fit.eval(n);
        let t_d = self.td_fit.eval(n);
        l_d * t_d.powf(r_d) * horizon.powf(-r_d)
    }
}

/// Ordinary least squares line through `(x, y)`, returned as
/// `(intercept, slope)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = numeric::mean(x);
    let my = numeric::mean(y);
    let sxy = numeric::sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = numeric::sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

pub fn scaling_fit(rows: &[ScalingRow]) -> Result<ScalingFit> {
    if rows.len() < 3 {
        return Err(Error::invalid(format!(
            "scaling fit needs at least 3 model sizes, got {}",
            rows.len()
        )));
    }
    if rows.windows(2).any(|w| w[1].n_params <= w[0].n_params) {
        return Err(Error::invalid("model sizes must be strictly increasing"));
    }
    for r in rows {
        if !(r.n_params > 0 && r.l_d > 0.0 && r.r_d > 0.0 && r.t_d.is_finite()) {
            return Err(Error::invalid(format!(
                "scaling rows need N > 0, L_d > 0 and r_d > 0 (power-law fits), got {r:?}"
            )));
        }
    }
    let n: Vec<f64> = rows.iter().map(|r| r.n_params as f64).collect();
    let log_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let power = |ys: Vec<f64>| {
        let (a, b) = line_fit(&log_n, &ys);
        PowerLaw {
            coef: a.exp(),
            exponent: b,
        }
    };
    let ld_fit = power(rows.iter().map(|r| r.l_d.ln()).collect());
    let rd_fit = power(rows.iter().map(|r| r.r_d.ln()).collect());
    let (intercept, slope) = line_fit(&n, &rows.iter().map(|r| r.t_d).collect::<Vec<_>>());
    Ok(ScalingFit {
        sizes: rows.iter().map(|r| r.n_params).collect(),
        ld_fit,
        rd_fit,
        td_fit: Affine { intercept, slope },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[allow(clippy::approx_constant)]
    fn published_rows() -> Vec<ScalingRow> {
        let rows = [
            (14e6, 4.05, 5900.0, 0.013),
            (37e6, 3.60, 5900.0, 0.016),
            (78e6, 3.38, 5900.0, 0.020),
            (144e6, 3.25, 6000.0, 0.023),
            (285e6, 3.14, 5300.0, 0.025),
            (472e6, 3.16, 4600.0, 0.035),
        ];
        rows.iter()
            .map(|&(n, l_d, t_d, r_d)| ScalingRow {
                n_params: n as u64,
                l_d,
                t_d,
                r_d,
            })
            .collect()
    }

    /// Least squares via the normal equations, solved by LU.
    fn lstsq_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
        let a = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let b = DVector::from_column_slice(y);
        let sol = (a.transpose() * &a)
            .lu()
            .solve(&(a.transpose() * b))
            .unwrap();
        (sol[0], sol[1])
    }

    #[test]
    fn exact_power_laws_recovered() {
        let rows: Vec<ScalingRow> = [1e6, 4e6, 2e7]
            .iter()
            .map(|&n: &f64| ScalingRow {
                n_params: n as u64,
                l_d: 30.0 * n.powf(-0.1),
                t_d: 7000.0 - 1e-5 * n,
                r_d: 1e-3 * n.powf(0.2),
            })
            .collect();
        let fit = scaling_fit(&rows).unwrap();
        assert!((fit.ld_fit.exponent + 0.1).abs() < 1e-12);
        assert!((fit.ld_fit.coef / 30.0 - 1.0).abs() < 1e-10);
        assert!((fit.rd_fit.exponent - 0.2).abs() < 1e-12);
        assert!((fit.td_fit.slope + 1e-5).abs() < 1e-15);
        assert!((fit.td_fit.intercept - 7000.0).abs() < 1e-8);
    }

    #[test]
    fn published_rows_rd_exponent() {
        let rows = published_rows();
        let fit = scaling_fit(&rows).unwrap();
        let endpoint = (0.035f64 / 0.013).ln() / (472f64 / 14.0).ln();
        assert!((endpoint - 0.28).abs() < 0.005);
        let x: Vec<f64> = rows.iter().map(|r| (r.n_params as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.r_d.ln()).collect();
        let (_, slope) = lstsq_oracle(&x, &y);
        assert!((fit.rd_fit.exponent - slope).abs() < 1e-10);
        assert!((fit.rd_fit.exponent - endpoint).abs() < 0.05);
    }

    #[test]
    fn predict_reproduces_row_estimate() {
        // Three copies of the 14M row's law: the fit is exact, so predict
        // equals the row's own L_hat_T at every size.
        let rows: Vec<ScalingRow> = [14e6, 37e6, 78e6]
            .iter()
            .map(|&n: &f64| ScalingRow {
                n_params: n as u64,
                l_d: 4.05,
                t_d: 5900.0,
                r_d: 0.013,
            })
            .collect();
        let fit = scaling_fit(&rows).unwrap();
        let l = fit.predict(14e6, (1u64 << 18) as f64);
        assert!((l - 3.855).abs() < 5e-4, "{l}");
    }

    #[test]
    fn too_few_or_unsorted_rows() {
        let rows = published_rows();
        assert!(scaling_fit(&rows[..2]).is_err());
        let mut swapped = rows.clone();
        swapped.swap(0, 1);
        assert!(scaling_fit(&swapped).is_err());
    }
}
