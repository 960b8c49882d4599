//! Run configuration file.

use std::path::{Path, PathBuf};

use odontoreg::camera::{
    IntrinsicConventions, DEFAULT_BASE_STANDOFF_MM, DEFAULT_SENSOR_WIDTH_MM, DEFAULT_Z_NEAR_MM,
};
use odontoreg::ident::CellConfig;
use odontoreg::lr::{BandwidthRule, LrOptions};
use odontoreg::regfit::DEFAULT_RESTARTS;
use odontoreg::{Method, OptimizerConfig, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Camera conventions shared by every photograph; the image size and
/// principal point come from each case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub sensor_width_mm: f64,
    pub base_standoff_mm: f64,
    pub z_near_mm: f64,
}

impl Default for IntrinsicsConfig {
    fn default() -> Self {
        Self {
            sensor_width_mm: DEFAULT_SENSOR_WIDTH_MM,
            base_standoff_mm: DEFAULT_BASE_STANDOFF_MM,
            z_near_mm: DEFAULT_Z_NEAR_MM,
        }
    }
}

impl IntrinsicsConfig {
    /// Conventions for an image of the given size.
    pub fn for_image(&self, width: u32, height: u32) -> IntrinsicConventions {
        IntrinsicConventions {
            sensor_width_mm: self.sensor_width_mm,
            base_standoff_mm: self.base_standoff_mm,
            z_near_mm: self.z_near_mm,
            ..IntrinsicConventions::for_image(width, height)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub intrinsics: IntrinsicsConfig,
    /// Optimizer settings for the region method. Its `seed` is replaced by
    /// a per-cell seed derived from `seed`.
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    pub solver: SolverOptions,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Base seed of the run.
    pub seed: u64,
    pub lr: LrOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Regions,
            intrinsics: IntrinsicsConfig::default(),
            optimizer: OptimizerConfig::default(),
            restarts: DEFAULT_RESTARTS,
            solver: SolverOptions::default(),
            workers: None,
            out_dir: None,
            seed: 0,
            lr: LrOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Checks every value before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Data(format!("invalid config: {m}")));
        self.intrinsics
            .for_image(2, 2)
            .validate()
            .or_else(|e| bad(e.to_string()))?;
        if !(self.intrinsics.base_standoff_mm.is_finite() && self.intrinsics.z_near_mm > 0.0) {
            return bad("base_standoff_mm must be finite and z_near_mm positive".into());
        }
        self.optimizer
            .validate(odontoreg::camera::CAMERA_DIM)
            .or_else(|e| bad(e.to_string()))?;
        if self.restarts < 1 {
            return bad("restarts must be >= 1".into());
        }
        self.solver.validate().or_else(|e| bad(e.to_string()))?;
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if !(self.lr.floor > 0.0) {
            return bad("lr.floor must be positive".into());
        }
        if let BandwidthRule::Fixed(h) = self.lr.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return bad("lr.bandwidth must be positive".into());
            }
        }
        Ok(())
    }

    pub fn cell_config(&self) -> CellConfig {
        CellConfig {
            method: self.method,
            optimizer: self.optimizer.clone(),
            restarts: self.restarts,
            solver: self.solver.clone(),
            base_seed: self.seed,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
