//! Destructive interference, average magnitude and the first-order
//! decompositions of loss change.
//!
//! For a sum of contributions `x_i`, destructive interference is
//! `D = 1 - |sum x| / sum |x|` and constructive interference is `C = 1 - D`.
//! Every ratio here is formed from compensated sums, and `C` is the stored
//! primary quantity so that `|mean| = M * C` holds to rounding even when the
//! contributions almost cancel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, CompensatedSum};

/// Non-empty sequence of finite values (per-example loss changes, etc).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSeries(Vec<f64>);

impl ValueSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("value series must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "value series entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ValueSeries {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `(|sum x|, sum |x|)` accumulated in one pass.
fn signed_and_abs(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let mut signed = CompensatedSum::new();
    let mut abs = CompensatedSum::new();
    for x in xs {
        signed.add(x);
        abs.add(x.abs());
    }
    (signed.value().abs(), abs.value())
}

/// `|a| / b` with `0 / 0` read as full constructive interference absent,
/// i.e. `C = 1` is never reported for an all-zero sum.
fn ratio_or_vacuous(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        (num / den).min(1.0)
    }
}

pub fn constructive_interference(xs: &ValueSeries) -> f64 {
    let (num, den) = signed_and_abs(xs.iter().copied());
    ratio_or_vacuous(num, den)
}

/// `1 - |sum x| / sum |x|`, and 0 when every entry is zero.
pub fn destructive_interference(xs: &ValueSeries) -> f64 {
    1.0 - constructive_interference(xs)
}

pub fn average_magnitude(xs: &ValueSeries) -> f64 {
    numeric::abs_sum(xs) / xs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub abs_mean: f64,
}

/// `|mean(x)| = M * C` with `C = 1 - D`.
pub fn abs_mean_decompose(xs: &ValueSeries) -> InterferenceReport {
    let n = xs.len() as f64;
    let (signed, abs) = signed_and_abs(xs.iter().copied());
    let c = ratio_or_vacuous(signed, abs);
    let m = abs / n;
    InterferenceReport {
        d: 1.0 - c,
        c,
        m,
        abs_mean: signed / n,
    }
}

/// Row-major `N x M` matrix of per-example gradients with its cached column
/// mean `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    n: usize,
    m: usize,
    grads: Vec<f64>,
    mean_grad: Vec<f64>,
}

impl GradientMatrix {
    pub fn new(n_examples: usize, n_params: usize, grads: Vec<f64>) -> Result<Self> {
        if n_examples == 0 || n_params == 0 {
            return Err(Error::invalid("gradient matrix needs N >= 1 and M >= 1"));
        }
        if grads.len() != n_examples * n_params {
            return Err(Error::invalid(format!(
                "gradient matrix data has {} entries, expected {n_examples} x {n_params}",
                grads.len()
            )));
        }
        if let Some(k) = grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "gradient entry ({}, {}) is not finite",
                k / n_params,
                k % n_params
            )));
        }
        let mut mean_grad = vec![0.0; n_params];
        for (j, g) in mean_grad.iter_mut().enumerate() {
            let s = numeric::sum((0..n_examples).map(|i| grads[i * n_params + j]));
            *g = s / n_examples as f64;
        }
        Ok(Self {
            n: n_examples,
            m: n_params,
            grads,
            mean_grad,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("gradient rows have unequal lengths"));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    pub fn n_examples(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.grads[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.chunks_exact(self.m)
    }

    pub fn data(&self) -> &[f64] {
        &self.grads
    }

    pub fn mean_grad(&self) -> &[f64] {
        &self.mean_grad
    }

    /// Columns `[start, end)` as their own matrix.
    pub fn columns(&self, start: usize, end: usize) -> Result<Self> {
        if !(start < end && end <= self.m) {
            return Err(Error::invalid(format!(
                "column range {start}..{end} out of bounds for M = {}",
                self.m
            )));
        }
        let data = self
            .rows()
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        Self::new(self.n, end - start, data)
    }
}

/// Weight update `Δθ`, flattened in the same coordinate order as the
/// gradients it is paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector(Vec<f64>);

impl UpdateVector {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if let Some(i) = delta.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("update entry {i} is not finite")));
        }
        Ok(Self(delta))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        numeric::norm2(&self.0)
    }
}

fn check_dims(u: &UpdateVector, g: &GradientMatrix) -> Result<()> {
    if u.len() != g.n_params() {
        return Err(Error::invalid(format!(
            "update has {} coordinates but gradients have {}",
            u.len(),
            g.n_params()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateDi {
    pub per_coord: Vec<f64>,
    pub mean: f64,
}

/// Per-coordinate destructive interference across examples.
pub fn coordinate_di(g: &GradientMatrix) -> CoordinateDi {
    let (n, m) = (g.n_examples(), g.n_params());
    let data = g.data();
    let per_coord: Vec<f64> = (0..m)
        .map(|j| {
            let (num, den) = signed_and_abs((0..n).map(|i| data[i * m + j]));
            1.0 - ratio_or_vacuous(num, den)
        })
        .collect();
    let mean = numeric::mean(&per_coord);
    CoordinateDi { per_coord, mean }
}

/// First-order per-example loss changes `<u, g_i>` and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderChange {
    pub per_example: Vec<f64>,
    /// Mean of `per_example`.
    pub mean_change: f64,
    /// `<u, G>` computed from the cached mean gradient.
    pub direct_change: f64,
}

pub fn fote_dl(u: &UpdateVector, g: &GradientMatrix) -> Result<FirstOrderChange> {
    check_dims(u, g)?;
    let per_example: Vec<f64> = g.rows().map(|row| numeric::dot(u.values(), row)).collect();
    let mean_change = numeric::mean(&per_example);
    let direct_change = numeric::dot(u.values(), g.mean_grad());
    let scale = mean_change.abs().max(direct_change.abs());
    if (mean_change - direct_change).abs() > 1e-10 * scale {
        log::warn!(
            "first-order mean {mean_change:e} and <u, G> {direct_change:e} disagree beyond 1e-10"
        );
    }
    Ok(FirstOrderChange {
        per_example,
        mean_change,
        direct_change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CucgReport {
    #[serde(rename = "C_g")]
    pub c_g: f64,
    #[serde(rename = "C_ug")]
    pub c_ug: f64,
    #[serde(rename = "C_uG")]
    pub c_u_big_g: f64,
    /// Destructive interference of the first-order per-example changes.
    #[serde(rename = "D_fote")]
    pub d_fote: f64,
    /// `1 - D_fote`, formed directly from its sums.
    #[serde(rename = "C_fote")]
    pub c_fote: f64,
    /// Per-coordinate weights `sum_i |p_i[j]| / S`.
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl CucgReport {
    /// `1 - C_g C_uG / C_ug`, the decomposed route to `D_fote`.
    pub fn d_fote_decomposed(&self) -> f64 {
        1.0 - self.c_fote_decomposed()
    }

    pub fn c_fote_decomposed(&self) -> f64 {
        if self.c_ug == 0.0 {
            0.0
        } else {
            self.c_g * self.c_u_big_g / self.c_ug
        }
    }
}

/// Splits first-order interference into gradient opposition (`C_g`) and
/// update-gradient alignment (`C_ug` per example, `C_uG` for the mean).
///
/// With `p_i[j] = u[j] g_i[j]` and `S = sum_ij |p_i[j]|`:
/// `C_g = sum_j |sum_i p| / S`, `C_ug = sum_i |sum_j p| / S` and
/// `C_uG = |sum_ij p| / sum_j |sum_i p|`.
pub fn cucg_decompose(u: &UpdateVector, g: &GradientMatrix) -> Result<CucgReport> {
    check_dims(u, g)?;
    let (n, m) = (g.n_examples(), g.n_params());
    let data = g.data();
    let uv = u.values();

    let mut total_abs = CompensatedSum::new();
    let mut col_abs_sum = CompensatedSum::new(); // sum_j |sum_i p|
    let mut grand = CompensatedSum::new(); // sum_j sum_i p
    let mut weights = vec![0.0; m];
    for j in 0..m {
        let (signed, abs) = {
            let mut s = CompensatedSum::new();
            let mut a = CompensatedSum::new();
            for i in 0..n {
                let p = uv[j] * data[i * m + j];
                s.add(p);
                a.add(p.abs());
            }
            (s.value(), a.value())
        };
        weights[j] = abs;
        total_abs.add(abs);
        col_abs_sum.add(signed.abs());
        grand.add(signed);
    }
    let s_total = total_abs.value();
    if s_total == 0.0 {
        return Err(Error::Degenerate(
            "every update-gradient product u[j] g_i[j] is zero".into(),
        ));
    }
    let mut row_abs_sum = CompensatedSum::new(); // sum_i |sum_j p|
    let mut row_signed = Vec::with_capacity(n);
    for i in 0..n {
        let row = &data[i * m..(i + 1) * m];
        let s = numeric::sum(uv.iter().zip(row).map(|(a, b)| a * b));
        row_abs_sum.add(s.abs());
        row_signed.push(s);
    }
    for w in &mut weights {
        *w /= s_total;
    }
    let cols = col_abs_sum.value();
    let c_g = (cols / s_total).min(1.0);
    let c_ug = (row_abs_sum.value() / s_total).min(1.0);
    let c_u_big_g = if cols == 0.0 {
        0.0
    } else {
        (grand.value().abs() / cols).min(1.0)
    };
    let fote = ValueSeries::new(row_signed)?;
    let c_fote = constructive_interference(&fote);
    Ok(CucgReport {
        c_g,
        c_ug,
        c_u_big_g,
        d_fote: 1.0 - c_fote,
        c_fote,
        weights,
    })
}

/// `C_g` in its weighted-average form `sum_j W_j (1 - D_coord[j])`.
pub fn c_g_weighted(report: &CucgReport, g: &GradientMatrix) -> f64 {
    let dc = coordinate_di(g);
    numeric::sum(
        report
            .weights
            .iter()
            .zip(&dc.per_coord)
            .map(|(w, d)| w * (1.0 - d)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormDecomposition {
    pub update_norm: f64,
    pub grad_norm: f64,
    pub cosine: f64,
    /// `|u| |G| cos(u, G)`.
    pub dl: f64,
    /// `<u, G>` computed directly.
    pub dot: f64,
    /// Set when either vector is zero and the cosine is reported as 0.
    pub degenerate: bool,
}

pub fn dl_norm_decomposition(u: &UpdateVector, grad: &[f64]) -> Result<NormDecomposition> {
    if u.len() != grad.len() {
        return Err(Error::invalid(format!(
            "update has {} coordinates but gradient has {}",
            u.len(),
            grad.len()
        )));
    }
    let update_norm = u.norm();
    let grad_norm = numeric::norm2(grad);
    let dot = numeric::dot(u.values(), grad);
    let degenerate = update_norm == 0.0 || grad_norm == 0.0;
    let cosine = if degenerate {
        0.0
    } else {
        (dot / (update_norm * grad_norm)).clamp(-1.0, 1.0)
    };
    Ok(NormDecomposition {
        update_norm,
        grad_norm,
        cosine,
        dl: update_norm * grad_norm * cosine,
        dot,
        degenerate,
    })
}
