//! Run-directory persistence and the report builders behind the CLI.

pub mod analysis;
pub mod blob;
pub mod checkpoint;
pub mod run;
pub mod zsl;

pub use analysis::{
    decompose_step, fit_report, landscape_step, proxy_gdi_step, proxy_histogram_csv,
    write_landscape, DecomposeRow, FitReport, GridSpec, LandscapeReport, ProxyGdiReport, TensorGdi,
};
pub use blob::{fnv1a64, TensorEntry};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_from, load_update, save_checkpoint, save_checkpoint_to,
    save_update, CheckpointManifest,
};
pub use run::{config_hash, RunDir, RunManifest, RunStatus, TOOL_VERSION};
pub use zsl::{zsl_from_snapshots, zsl_pairs, zsl_report, PairRule, ZslReportRow};
