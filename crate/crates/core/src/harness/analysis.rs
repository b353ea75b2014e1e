//! Per-checkpoint analyses over a run directory, shaped for JSON/CSV output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blob;
use super::run::RunDir;
use crate::curves::{
    decel_measurements, fit_curve, BnslParams, DecelMeasurements, FitOptions, LossCurve, ParamStd,
    SmoothingConfig,
};
use crate::error::{Error, Result};
use crate::interference::{
    c_g_weighted, coordinate_di, cucg_decompose, dl_norm_decomposition, fote_dl, NormDecomposition,
};
use crate::landscape::{
    alpha_grid, cross_section, default_h, linearized_dl, pearson, sharpness, CrossSection,
    ModelTokens, SharpnessFit,
};
use crate::trainer::PER_TOKEN_CAP;

/// `fit-bnsl` output: the fit plus its deceleration measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: BnslParams,
    pub param_std: Option<ParamStd>,
    pub rsle: f64,
    pub n_points_used: usize,
    pub iterations: usize,
    #[serde(flatten)]
    pub measurements: DecelMeasurements,
    pub smoothing: SmoothingConfig,
    /// First step included in the fit.
    pub min_step: u64,
}

pub fn fit_report(
    raw: &LossCurve,
    smoothing: &SmoothingConfig,
    d1_est: Option<f64>,
    horizon: u64,
    min_step: u64,
) -> Result<FitReport> {
    let opts = FitOptions {
        min_step,
        ..FitOptions::default()
    };
    let fit = fit_curve(raw, smoothing, d1_est, &opts)?;
    Ok(FitReport {
        measurements: decel_measurements(&fit, horizon),
        params: fit.params,
        param_std: fit.param_std,
        rsle: fit.rsle,
        n_points_used: fit.n_points_used,
        iterations: fit.iterations,
        smoothing: *smoothing,
        min_step,
    })
}

fn requested_tokens(run: &RunDir, n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 || n > PER_TOKEN_CAP {
        return Err(Error::invalid(format!(
            "--tokens must be in 1..={PER_TOKEN_CAP}, got {n}"
        )));
    }
    Ok(run.token_set()?.positions(n))
}

/// First-order decomposition at checkpoint `t` along the update that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeRow {
    pub step: u64,
    pub n_tokens: usize,
    #[serde(rename = "C_g")]
    pub c_g: f64,
    #[serde(rename = "C_g_weighted")]
    pub c_g_weighted: f64,
    #[serde(rename = "C_ug")]
    pub c_ug: f64,
    #[serde(rename = "C_uG")]
    pub c_u_big_g: f64,
    #[serde(rename = "D_fote")]
    pub d_fote: f64,
    #[serde(rename = "D_fote_decomposed")]
    pub d_fote_decomposed: f64,
    /// Mean first-order change `<Δθ, G>`.
    pub dl_first_order: f64,
    pub norms: NormDecomposition,
}

pub fn decompose_step(run: &RunDir, step: u64, n_tokens: usize) -> Result<DecomposeRow> {
    let positions = requested_tokens(run, n_tokens)?;
    let batch = run.token_set()?.batch()?;
    let st = run.checkpoint(step)?;
    let u = run.update(step)?;
    let g = st.model.per_token_grads(&st.params, &batch, &positions)?;
    let r = cucg_decompose(&u, &g)?;
    let fo = fote_dl(&u, &g)?;
    let norms = dl_norm_decomposition(&u, g.mean_grad())?;
    Ok(DecomposeRow {
        step,
        n_tokens: positions.len(),
        c_g: r.c_g,
        c_g_weighted: c_g_weighted(&r, &g),
        c_ug: r.c_ug,
        c_u_big_g: r.c_u_big_g,
        d_fote: r.d_fote,
        d_fote_decomposed: r.d_fote_decomposed(),
        dl_first_order: fo.direct_change,
        norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            n: 41,
        }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// `lo:hi:n`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::invalid(format!("bad alpha grid `{s}`, expected lo:hi:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let g = GridSpec {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            n: parts[2].trim().parse().map_err(|_| bad())?,
        };
        alpha_grid(g.lo, g.hi, g.n, None)?;
        Ok(g)
    }
}

/// JSON sidecar of one cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub base_step: u64,
    pub n_tokens: usize,
    pub alphas: Vec<f64>,
    pub direction_norm: f64,
    /// Index in `alphas` of the actual update.
    pub marker_index: Option<usize>,
    pub sharpness: SharpnessFit,
    /// Linearization step.
    pub h: f64,
    pub underflow_tokens: usize,
    /// Correlation of actual and linearized per-token change at the update.
    pub pearson_dl: f64,
    pub pearson_degenerate: bool,
    /// Token-major `n_tokens x alphas` matrix file, relative to the sidecar.
    pub matrix_file: String,
}

pub fn landscape_step(
    run: &RunDir,
    step: u64,
    n_tokens: usize,
    grid: GridSpec,
    window: Option<(f64, f64)>,
) -> Result<(CrossSection, LandscapeReport)> {
    let positions = requested_tokens(run, n_tokens)?;
    let batch = run.token_set()?.batch()?;
    let st = run.checkpoint(step)?;
    let u = run.update(step)?;
    let f = ModelTokens::new(&st.model, &batch, &positions)?;
    let theta = st.params.flat();
    let (alphas, marker) = alpha_grid(grid.lo, grid.hi, grid.n, Some(u.norm()))?;
    let xs = cross_section(&f, theta, &u, &alphas, step)?;
    let sharp = sharpness(&xs, window)?;
    let h = default_h(theta);
    let lin = linearized_dl(&f, theta, &u, h)?;
    let z = xs.zero_index();
    let m = marker.expect("marker inserted");
    let actual: Vec<f64> = (0..xs.n_tokens)
        .map(|i| xs.token_row(i)[m] - xs.token_row(i)[z])
        .collect();
    let corr = if actual.len() >= 2 {
        pearson(&actual, &lin.predict(xs.alphas[m]))?
    } else {
        crate::landscape::Pearson {
            r: 0.0,
            degenerate: true,
        }
    };
    let report = LandscapeReport {
        base_step: step,
        n_tokens: xs.n_tokens,
        alphas: xs.alphas.clone(),
        direction_norm: xs.direction_norm,
        marker_index: marker,
        sharpness: sharp,
        h,
        underflow_tokens: lin.underflow.iter().filter(|&&u| u).count(),
        pearson_dl: corr.r,
        pearson_degenerate: corr.degenerate,
        matrix_file: format!("step_{step}_cross_section.bin"),
    };
    Ok((xs, report))
}

/// Writes the matrix and its sidecar into `dir`.
pub fn write_landscape(dir: &Path, xs: &CrossSection, report: &LandscapeReport) -> Result<()> {
    blob::write_f64_array(&dir.join(&report.matrix_file), &xs.token_losses)?;
    blob::write_json_atomic(
        &dir.join(format!("step_{}_cross_section.json", report.base_step)),
        report,
    )
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGdi {
    pub name: String,
    /// Proxy interference, mean over the tensor's elements.
    pub proxy_mean: f64,
    /// Exact per-coordinate interference over the sampled tokens, mean.
    pub exact_mean: f64,
    pub proxy_min: f64,
    pub proxy_max: f64,
    pub exact_min: f64,
    pub exact_max: f64,
    pub bound_violations: usize,
    pub proxy_hist: Vec<usize>,
    pub exact_hist: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyGdiReport {
    pub step: u64,
    /// Positions folded into the proxy accumulators (one evaluation pass).
    pub proxy_positions: usize,
    pub exact_tokens: usize,
    pub excluded: Vec<String>,
    pub tensors: Vec<TensorGdi>,
}

fn histogram(v: &[f64]) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for &x in v {
        let k = ((x * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[k] += 1;
    }
    h
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        })
}

/// Proxy accumulators over the full held-out batch (reset for this pass)
/// against exact coordinate interference over the first `n_tokens` tokens,
/// per instrumented tensor.
pub fn proxy_gdi_step(run: &RunDir, step: u64, n_tokens: usize) -> Result<ProxyGdiReport> {
    let positions = requested_tokens(run, n_tokens)?;
    let batch = run.token_set()?.batch()?;
    let st = run.checkpoint(step)?;
    let proxy = st
        .model
        .backward(&st.params, &batch, true)?
        .proxy
        .expect("proxy requested");
    let g = st.model.per_token_grads(&st.params, &batch, &positions)?;
    let layout = st.model.layout().clone();
    let tensors = proxy
        .tensors
        .iter()
        .map(|t| {
            let spec = layout.spec(layout.index_of(&t.name).expect("instrumented tensor"));
            let r = spec.range();
            let exact = coordinate_di(&g.columns(r.start, r.end)?).per_coord;
            let gdi = t.gdi();
            let (pmin, pmax) = min_max(&gdi);
            let (emin, emax) = min_max(&exact);
            Ok(TensorGdi {
                name: t.name.clone(),
                proxy_mean: crate::numeric::mean(&gdi),
                exact_mean: crate::numeric::mean(&exact),
                proxy_min: pmin,
                proxy_max: pmax,
                exact_min: emin,
                exact_max: emax,
                bound_violations: t.bound_violations(),
                proxy_hist: histogram(&gdi),
                exact_hist: histogram(&exact),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProxyGdiReport {
        step,
        proxy_positions: proxy.positions,
        exact_tokens: positions.len(),
        excluded: run.manifest()?.proxy_excluded,
        tensors,
    })
}

/// `tensor,bin_lo,bin_hi,proxy_count,exact_count` rows.
pub fn proxy_histogram_csv(report: &ProxyGdiReport) -> String {
    let mut s = String::from("step,tensor,bin_lo,bin_hi,proxy_count,exact_count\n");
    for t in &report.tensors {
        for k in 0..HISTOGRAM_BINS {
            let lo = k as f64 / HISTOGRAM_BINS as f64;
            let hi = (k + 1) as f64 / HISTOGRAM_BINS as f64;
            s.push_str(&format!(
                "{},{},{lo},{hi},{},{}\n",
                report.step, t.name, t.proxy_hist[k], t.exact_hist[k]
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "-10:10:41".parse().unwrap();
        assert_eq!(g, GridSpec::default());
        assert!("1:2".parse::<GridSpec>().is_err());
        assert!("2:1:5".parse::<GridSpec>().is_err());
        assert!("a:1:5".parse::<GridSpec>().is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.049, 0.05, 0.999, 1.0]);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[19], 2);
        assert_eq!(h.iter().sum::<usize>(), 5);
    }
}
