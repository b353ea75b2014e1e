//! Loss-curve smoothing, one-break BNSL fitting, deceleration measurements
//! and the deceleration-grounded scaling law.

mod bnsl;
mod curve;
mod decel;
pub mod lm;
mod scaling;
mod smoothing;

pub use bnsl::{
    bnsl_eval, bnsl_fit, bnsl_init, bnsl_log_eval, fit_curve, softplus, BnslFit, BnslParams,
    FitOptions, ParamStd, DEFAULT_D1_EST,
};
pub use curve::{CurveSource, LossCurve};
pub use decel::{decel_measurements, DecelMeasurements};
pub use scaling::{scaling_fit, Affine, PowerLaw, ScalingFit, ScalingRow};
pub use smoothing::{log_subsample, lsma_smooth, SmoothingConfig};
