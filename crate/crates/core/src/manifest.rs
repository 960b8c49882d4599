//! Case manifests: which photographs and meshes take part in a run.
//!
//! ```json
//! {
//!   "am": [{"id": "S001", "image_size": [320, 240],
//!           "segmentation": "am/S001_seg.png", "landmarks": "am/S001_lm2d.json",
//!           "photo": null, "truth": "S001"}],
//!   "pm": [{"id": "S001", "mesh": "pm/S001.obj", "landmarks": "pm/S001_lm3d.json"}]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `truth` names the
//! matching PM case and is only present in evaluation mode.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::IntrinsicConventions;
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::mesh::{load_mesh, DentalMesh};
use crate::regfit::SegmentationImage;
use crate::score::Method;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("case {id}: {reason}")]
    Case { id: String, reason: String },
    #[error("manifest lists no {0} cases")]
    Empty(&'static str),
}

impl ManifestError {
    fn case(id: &str, reason: impl Into<String>) -> Self {
        ManifestError::Case {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmEntry {
    pub id: String,
    /// Photograph size in pixels, `[width, height]`.
    pub image_size: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
    /// Optional photograph used as the overlay background.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmEntry {
    pub id: String,
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub am: Vec<AmEntry>,
    pub pm: Vec<PmEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let read_err = |reason: String| ManifestError::Read {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Structural checks: unique ids, known truth references, PM meshes on
    /// disk. Missing AM inputs are not errors; those cells become unscorable.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.am.is_empty() {
            return Err(ManifestError::Empty("AM"));
        }
        if self.pm.is_empty() {
            return Err(ManifestError::Empty("PM"));
        }
        let mut seen = HashSet::new();
        for a in &self.am {
            if !seen.insert(("am", a.id.as_str())) {
                return Err(ManifestError::case(&a.id, "duplicate AM id"));
            }
            if a.image_size[0] == 0 || a.image_size[1] == 0 {
                return Err(ManifestError::case(&a.id, "image_size must be positive"));
            }
        }
        for p in &self.pm {
            if !seen.insert(("pm", p.id.as_str())) {
                return Err(ManifestError::case(&p.id, "duplicate PM id"));
            }
            let mesh = self.resolve(&p.mesh);
            if !mesh.is_file() {
                return Err(ManifestError::case(
                    &p.id,
                    format!("mesh file {} not found", mesh.display()),
                ));
            }
        }
        for a in &self.am {
            if let Some(t) = &a.truth {
                if !seen.contains(&("pm", t.as_str())) {
                    return Err(ManifestError::case(&a.id, format!("truth '{t}' is not a PM case")));
                }
            }
        }
        Ok(())
    }

    pub fn am_ids(&self) -> Vec<String> {
        self.am.iter().map(|a| a.id.clone()).collect()
    }

    pub fn pm_ids(&self) -> Vec<String> {
        self.pm.iter().map(|p| p.id.clone()).collect()
    }

    pub fn truth(&self) -> Vec<(String, Option<String>)> {
        self.am.iter().map(|a| (a.id.clone(), a.truth.clone())).collect()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

/// An AM case with the inputs its method needs. Inputs that could not be
/// loaded carry the reason, which ends up on the row's unscorable cells.
#[derive(Debug, Clone)]
pub struct AmCase {
    pub id: String,
    pub intrinsics: IntrinsicConventions,
    pub segmentation: Result<SegmentationImage, String>,
    pub landmarks: Result<LandmarkSet2D, String>,
    pub truth: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PmCase {
    pub id: String,
    pub mesh: Result<DentalMesh, String>,
    pub landmarks: Result<LandmarkSet3D, String>,
}

fn not_needed<T>() -> Result<T, String> {
    Err("not loaded for this method".into())
}

/// Loads the inputs `method` needs. PM meshes must parse for the region
/// method; any other missing or unreadable input makes the affected cells
/// unscorable instead of aborting the run.
pub fn load_cases(
    manifest: &Manifest,
    method: Method,
    template: &IntrinsicConventions,
) -> Result<(Vec<AmCase>, Vec<PmCase>), ManifestError> {
    let regions = method == Method::Regions;
    let mut am = Vec::with_capacity(manifest.am.len());
    for e in &manifest.am {
        let intrinsics = template.with_image_size(e.image_size[0], e.image_size[1]);
        intrinsics
            .validate()
            .map_err(|err| ManifestError::case(&e.id, err.to_string()))?;
        let segmentation = if regions {
            match &e.segmentation {
                None => Err("no segmentation listed".to_string()),
                Some(p) => SegmentationImage::load_png(&manifest.resolve(p)).map_err(|err| err.to_string()),
            }
        } else {
            not_needed()
        };
        let landmarks = if regions {
            not_needed()
        } else {
            match &e.landmarks {
                None => Err("no landmark file listed".to_string()),
                Some(p) => LandmarkSet2D::load(&manifest.resolve(p)).map_err(|err| err.to_string()),
            }
        };
        am.push(AmCase {
            id: e.id.clone(),
            intrinsics,
            segmentation,
            landmarks,
            truth: e.truth.clone(),
        });
    }
    let mut pm = Vec::with_capacity(manifest.pm.len());
    for e in &manifest.pm {
        let mesh = if regions {
            Ok(load_mesh(&manifest.resolve(&e.mesh))
                .map_err(|err| ManifestError::case(&e.id, err.to_string()))?)
        } else {
            not_needed()
        };
        let landmarks = if regions {
            not_needed()
        } else {
            match &e.landmarks {
                None => Err("no landmark file listed".to_string()),
                Some(p) => LandmarkSet3D::load(&manifest.resolve(p)).map_err(|err| err.to_string()),
            }
        };
        pm.push(PmCase {
            id: e.id.clone(),
            mesh,
            landmarks,
        });
    }
    Ok((am, pm))
}
