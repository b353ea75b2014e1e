use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, LeastSquaresProblem, LmConfig};
use super::{log_subsample, lsma_smooth, LossCurve, SmoothingConfig};
use crate::error::{Error, Result};

/// Default break-step guess used when the caller has none.
pub const DEFAULT_D1_EST: f64 = 6000.0;

/// One-break smoothly broken power law with the irreducible loss fixed at 0:
///
/// `L(t) = b t^{-c0} (1 + (t / d1)^{1/f1})^{-c1 f1}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnslParams {
    pub log_b: f64,
    pub c0: f64,
    pub c1: f64,
    pub log_d1: f64,
    pub f1: f64,
    /// Irreducible loss. Always 0; kept so reports carry the full form.
    pub a: f64,
}

impl BnslParams {
    pub fn new(log_b: f64, c0: f64, c1: f64, log_d1: f64, f1: f64) -> Self {
        Self {
            log_b,
            c0,
            c1,
            log_d1,
            f1,
            a: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.log_b, self.c0, self.c1, self.log_d1, self.f1]
            .iter()
            .all(|v| v.is_finite())
    }

    fn to_free(self) -> [f64; 5] {
        [self.log_b, self.c0, self.c1, self.log_d1, self.f1.ln()]
    }

    fn from_free(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4].exp())
    }
}

/// Standard deviations of the fitted parameters from the local covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStd {
    pub log_b: f64,
    pub c0: f64,
    pub c1: f64,
    pub log_d1: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnslFit {
    pub params: BnslParams,
    /// `None` when the covariance estimate is degenerate.
    pub param_std: Option<ParamStd>,
    /// Root mean squared natural-log residual over the fitted points.
    pub rsle: f64,
    pub n_points_used: usize,
    pub iterations: usize,
}

/// `log(1 + e^z)` without overflow for large `|z|`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log L(t)` as a function of `log t`.
pub fn bnsl_log_eval(p: &BnslParams, log_t: f64) -> f64 {
    let z = (log_t - p.log_d1) / p.f1;
    p.log_b - p.c0 * log_t - p.c1 * p.f1 * softplus(z)
}

pub fn bnsl_eval(p: &BnslParams, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "BNSL evaluated at t = {t}; needs t > 0"
        )));
    }
    Ok(bnsl_log_eval(p, t.ln()).exp())
}

/// Initial parameters from mean finite-difference log-log slopes on either
/// side of the sample nearest `d1_est` (the later sample on a tie).
pub fn bnsl_init(curve: &LossCurve, d1_est: Option<f64>) -> Result<BnslParams> {
    let d1_est = d1_est.unwrap_or(DEFAULT_D1_EST);
    let steps = curve.steps();
    if curve.len() < 5 {
        return Err(Error::invalid(format!(
            "BNSL init needs at least 5 points, got {}",
            curve.len()
        )));
    }
    let (lo, hi) = (steps[0] as f64, *steps.last().unwrap() as f64);
    if !(d1_est >= lo && d1_est <= hi) {
        return Err(Error::invalid(format!(
            "d1 estimate {d1_est} outside the curve's step range [{lo}, {hi}]"
        )));
    }
    let x: Vec<f64> = steps.iter().map(|&s| (s as f64).ln()).collect();
    let y: Vec<f64> = curve.losses().iter().map(|l| l.ln()).collect();
    let n = x.len();
    let log_d1 = d1_est.ln();

    let mut idx = 0;
    let mut best = f64::INFINITY;
    for (i, &xi) in x.iter().enumerate() {
        let d = (xi - log_d1).abs();
        if d <= best {
            if d == best && xi < log_d1 {
                continue;
            }
            best = d;
            idx = i;
        }
    }
    let before = idx;
    let after = n - 1 - idx;
    if before < 2 || after < 2 {
        return Err(Error::invalid(format!(
            "BNSL init needs at least 2 points on each side of the break estimate \
             (have {before} before, {after} after)"
        )));
    }
    let slope = |k: usize| (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
    let mean_slope =
        |range: std::ops::Range<usize>| range.clone().map(slope).sum::<f64>() / range.len() as f64;
    let c0 = -mean_slope(0..idx);
    // The final interval is excluded from the post-break mean.
    let c1 = -mean_slope(idx..n - 2) - c0;
    let log_b = y[0] + c0 * x[0];
    Ok(BnslParams::new(log_b, c0, c1, log_d1, 0.3))
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub lm: LmConfig,
    /// Points before this step are left out of the fit (smoothing still
    /// sees them).
    pub min_step: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            min_step: 1,
        }
    }
}

struct LogLogProblem {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl LeastSquaresProblem for LogLogProblem {
    fn n_params(&self) -> usize {
        5
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, free: &[f64], out: &mut [f64]) {
        let p = BnslParams::from_free(free);
        for (o, (&x, &y)) in out.iter_mut().zip(self.x.iter().zip(&self.y)) {
            *o = bnsl_log_eval(&p, x) - y;
        }
    }

    fn jacobian(&self, free: &[f64], out: &mut DMatrix<f64>) {
        let p = BnslParams::from_free(free);
        for (i, &x) in self.x.iter().enumerate() {
            let z = (x - p.log_d1) / p.f1;
            let sp = softplus(z);
            let sg = sigmoid(z);
            out[(i, 0)] = 1.0;
            out[(i, 1)] = -x;
            out[(i, 2)] = -p.f1 * sp;
            out[(i, 3)] = p.c1 * sg;
            // d/d(log f1) = f1 * d/df1 = -c1 f1 (softplus(z) - z sigmoid(z))
            out[(i, 4)] = -p.c1 * p.f1 * (sp - z * sg);
        }
    }
}

/// Fits the log-form BNSL to `log(loss)` over `log(step)` by damped
/// least squares, with `f1` kept positive by optimizing `log f1`.
///
/// The curve is used as given; [`fit_curve`] smooths and subsamples first.
pub fn bnsl_fit(curve: &LossCurve, init: &BnslParams, opts: &FitOptions) -> Result<BnslFit> {
    let curve = &curve.from_step(opts.min_step);
    if curve.len() < 8 {
        return Err(Error::invalid(format!(
            "BNSL fit needs at least 8 points from step {}, got {}",
            opts.min_step,
            curve.len()
        )));
    }
    if !init.is_finite() || !(init.f1 > 0.0) {
        return Err(Error::invalid(format!(
            "non-finite initial parameters {init:?}"
        )));
    }
    let problem = LogLogProblem {
        x: curve.steps().iter().map(|&s| (s as f64).ln()).collect(),
        y: curve.losses().iter().map(|l| l.ln()).collect(),
    };
    let outcome = lm::minimize(&problem, &init.to_free(), &opts.lm);
    let params = BnslParams::from_free(&outcome.x);
    let m = problem.x.len();
    let rsle = (2.0 * outcome.cost / m as f64).sqrt();
    if !outcome.converged() || !params.is_finite() {
        return Err(Error::FitFailure {
            message: format!("termination {:?}", outcome.termination),
            iterations: outcome.iterations,
            rsle,
            best: params,
        });
    }
    let param_std = lm::covariance(&outcome).and_then(|cov| {
        let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();
        let std = ParamStd {
            log_b: sd(0),
            c0: sd(1),
            c1: sd(2),
            log_d1: sd(3),
            f1: params.f1 * sd(4),
        };
        [std.log_b, std.c0, std.c1, std.log_d1, std.f1]
            .iter()
            .all(|v| v.is_finite())
            .then_some(std)
    });
    // Break sides are checked against the fitted break.
    let log_d1 = params.log_d1;
    let before = problem.x.iter().filter(|&&x| x < log_d1).count();
    if before < 2 || m - before < 2 {
        log::warn!(
            "fitted break at step {:.1} leaves {before} points before and {} after",
            log_d1.exp(),
            m - before
        );
    }
    Ok(BnslFit {
        params,
        param_std,
        rsle,
        n_points_used: m,
        iterations: outcome.iterations,
    })
}

/// Full fitting pipeline on a raw curve: LSMA smoothing, log-uniform
/// subsampling, slope-based initialization, then [`bnsl_fit`].
pub fn fit_curve(
    raw: &LossCurve,
    cfg: &SmoothingConfig,
    d1_est: Option<f64>,
    opts: &FitOptions,
) -> Result<BnslFit> {
    let smoothed = lsma_smooth(raw, cfg)?.from_step(opts.min_step);
    let sampled = log_subsample(&smoothed, cfg)?;
    let init = bnsl_init(&sampled, d1_est)?;
    bnsl_fit(&sampled, &init, opts)
}
