//! Batch orchestration for dental 3D-2D registration runs: synthetic cohort
//! generation, checkpointed comparison matrices, ranking and LR reports and
//! overlay rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use config::{IntrinsicsConfig, RunConfig};
pub use error::CliError;

/// JSON schemas of every file the CLI reads or writes.
pub mod schemas {
    pub const RUN_CONFIG: &str = include_str!("../schemas/run_config.schema.json");
    pub const MANIFEST: &str = include_str!("../schemas/manifest.schema.json");
    pub const COHORT_SPEC: &str = include_str!("../schemas/cohort_spec.schema.json");
    pub const CELL: &str = include_str!("../schemas/cell.schema.json");
    pub const RUN: &str = include_str!("../schemas/run.schema.json");
    pub const REPORT: &str = include_str!("../schemas/report.schema.json");
    pub const LR_SUMMARY: &str = include_str!("../schemas/lr_summary.schema.json");
    pub const LANDMARKS: &str = include_str!("../schemas/landmarks.schema.json");
    pub const CASE_TRUTH: &str = include_str!("../schemas/case_truth.schema.json");
}
