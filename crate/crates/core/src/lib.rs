//! Dental 3D-2D registration for forensic identification.
//!
//! The crate registers a dental mesh (the post-mortem record) onto a
//! photograph (the ante-mortem record) by recovering a seven-parameter
//! perspective camera, and turns the registration errors into candidate
//! rankings and likelihood ratios.
//!
//! * [`camera`]: seven-parameter camera and projection.
//! * [`mesh`], [`landmarks`], [`raster`]: mesh and landmark ingestion,
//!   silhouette rasterization.
//! * [`pnpf`]: landmark registration (pose plus focal length from paired points).
//! * [`mvmo`]: MVMO-SH bounded black-box minimizer.
//! * [`regfit`]: region registration with the masked DICE error.
//! * [`manifest`], [`ident`]: case ingestion, cohort comparisons, rankings,
//!   statistics and CMC curves.
//! * [`lr`]: kernel density likelihood ratios and `C_llr`.
//! * [`synth`]: synthetic cohorts with known ground truth.
//! * [`overlay`]: registration composites.

pub mod camera;
pub mod ident;
pub mod landmarks;
pub mod lr;
pub mod manifest;
pub mod mesh;
pub mod mvmo;
pub mod overlay;
pub mod pnpf;
pub mod raster;
pub mod regfit;
pub mod score;
pub mod synth;

pub use camera::{CameraParams, IntrinsicConventions, Point2, Point3};
pub use ident::{CellConfig, RankingReport, RankingStatistics, ScoreMatrix};
pub use landmarks::{LandmarkSet2D, LandmarkSet3D, LandmarkSubset};
pub use lr::{LrModel, LrOptions, LrReport};
pub use manifest::{AmCase, Manifest, PmCase};
pub use mesh::DentalMesh;
pub use mvmo::{OptimizationResult, OptimizerConfig, SearchSpace};
pub use pnpf::{PnPSolution, SolverOptions};
pub use raster::{Bitmask, SilhouetteImage};
pub use regfit::SegmentationImage;
pub use score::{ComparisonOutcome, ComparisonScore, Method};
