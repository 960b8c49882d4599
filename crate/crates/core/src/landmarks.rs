//! Canonical anterior-tooth landmark vocabulary, landmark files and 3D-2D pairing.
//!
//! The vocabulary covers the six upper anterior teeth (FDI 13 to 23, listed
//! from the viewer's left to right). It has three groups:
//!
//! * smile line (14): distal corner, mid-incisal point and mesial corner of
//!   each incisor, plus the cusp tip of each canine;
//! * medial line (5): interdental contact points at mid crown height;
//! * gingival line (11): the gingival zenith of each tooth and the five
//!   interdental papillae between them.
//!
//! Landmark subsets: `Set1` uses all 30 names, `Set2` the smile and medial
//! lines (19), `Set3` the smile line only (14).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Point2, Point3};

/// Version tag written into every landmark file.
pub const VOCABULARY_VERSION: &str = "anterior-upper-30/v1";

/// Teeth in viewer left-to-right order.
pub const TEETH: [u8; 6] = [13, 12, 11, 21, 22, 23];

/// Canonical landmark names, smile line first, then medial, then gingival.
pub const VOCABULARY: [&str; 30] = [
    // smile line
    "smile_13_cusp",
    "smile_12_distal",
    "smile_12_mid",
    "smile_12_mesial",
    "smile_11_distal",
    "smile_11_mid",
    "smile_11_mesial",
    "smile_21_mesial",
    "smile_21_mid",
    "smile_21_distal",
    "smile_22_mesial",
    "smile_22_mid",
    "smile_22_distal",
    "smile_23_cusp",
    // medial line
    "medial_13_12",
    "medial_12_11",
    "medial_11_21",
    "medial_21_22",
    "medial_22_23",
    // gingival line
    "gingival_13",
    "papilla_13_12",
    "gingival_12",
    "papilla_12_11",
    "gingival_11",
    "papilla_11_21",
    "gingival_21",
    "papilla_21_22",
    "gingival_22",
    "papilla_22_23",
    "gingival_23",
];

pub const SMILE_COUNT: usize = 14;
pub const MEDIAL_COUNT: usize = 5;
pub const GINGIVAL_COUNT: usize = 11;

/// Minimum number of pairs the focal-length solver accepts by default.
pub const DEFAULT_MIN_PAIRS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineGroup {
    Smile,
    Medial,
    Gingival,
}

/// Line group of a vocabulary name, `None` for unknown names.
pub fn line_group(name: &str) -> Option<LineGroup> {
    let i = vocabulary_index(name)?;
    Some(if i < SMILE_COUNT {
        LineGroup::Smile
    } else if i < SMILE_COUNT + MEDIAL_COUNT {
        LineGroup::Medial
    } else {
        LineGroup::Gingival
    })
}

pub fn vocabulary_index(name: &str) -> Option<usize> {
    VOCABULARY.iter().position(|&n| n == name)
}

/// Which landmark lines take part in a landmark comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkSubset {
    /// Gingival, medial and smile lines (30).
    Set1,
    /// Medial and smile lines (19).
    Set2,
    /// Smile line (14).
    Set3,
}

impl LandmarkSubset {
    pub fn size(self) -> usize {
        match self {
            LandmarkSubset::Set1 => SMILE_COUNT + MEDIAL_COUNT + GINGIVAL_COUNT,
            LandmarkSubset::Set2 => SMILE_COUNT + MEDIAL_COUNT,
            LandmarkSubset::Set3 => SMILE_COUNT,
        }
    }

    /// Names of the subset in canonical order.
    pub fn names(self) -> &'static [&'static str] {
        &VOCABULARY[..self.size()]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkSubset::Set1 => "set1",
            LandmarkSubset::Set2 => "set2",
            LandmarkSubset::Set3 => "set3",
        }
    }
}

impl std::str::FromStr for LandmarkSubset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set1" => Ok(Self::Set1),
            "set2" => Ok(Self::Set2),
            "set3" => Ok(Self::Set3),
            other => Err(format!("unknown landmark set '{other}'")),
        }
    }
}

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("unknown landmark name '{0}'")]
    UnknownName(String),
    #[error("duplicate landmark name '{0}'")]
    Duplicate(String),
    #[error("landmark '{0}' has no z coordinate")]
    MissingZ(String),
    #[error("landmark '{0}' has non-finite coordinates")]
    NonFinite(String),
    #[error("only {found} landmark pairs available, at least {required} required")]
    TooFewPairs { found: usize, required: usize },
    #[error("failed to read landmark file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed landmark file {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark<P> {
    pub name: String,
    pub position: P,
    pub present: bool,
}

/// Named landmarks; names come from [`VOCABULARY`] and are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet<P> {
    entries: Vec<Landmark<P>>,
}

pub type LandmarkSet3D = LandmarkSet<Point3>;
pub type LandmarkSet2D = LandmarkSet<Point2>;

impl<P> LandmarkSet<P> {
    pub fn new(entries: Vec<Landmark<P>>) -> Result<Self, LandmarkError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if vocabulary_index(&e.name).is_none() {
                return Err(LandmarkError::UnknownName(e.name.clone()));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(LandmarkError::Duplicate(e.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Landmark<P>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Landmark<P>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.present).count()
    }

    /// Marks a landmark absent. Returns false for names not in the set.
    pub fn mark_absent(&mut self, name: &str) -> bool {
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => {
                e.present = false;
                true
            }
            None => false,
        }
    }

    fn present_map(&self) -> HashMap<&str, &P> {
        self.entries
            .iter()
            .filter(|e| e.present)
            .map(|e| (e.name.as_str(), &e.position))
            .collect()
    }
}

impl LandmarkSet3D {
    /// Shifts every position by `-offset`, e.g. to follow a normalized mesh.
    pub fn translated(&self, offset: &nalgebra::Vector3<f64>) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Landmark {
                    name: e.name.clone(),
                    position: e.position - offset,
                    present: e.present,
                })
                .collect(),
        }
    }
}

/// Pairs the 3D and 2D landmarks of `subset` that are present on both sides,
/// in canonical vocabulary order.
pub fn pair_landmarks(
    l3: &LandmarkSet3D,
    l2: &LandmarkSet2D,
    subset: LandmarkSubset,
    min_pairs: usize,
) -> Result<Vec<(Point3, Point2)>, LandmarkError> {
    let m3 = l3.present_map();
    let m2 = l2.present_map();
    let pairs: Vec<_> = subset
        .names()
        .iter()
        .filter_map(|name| Some((**m3.get(name)?, **m2.get(name)?)))
        .collect();
    if pairs.len() < min_pairs {
        return Err(LandmarkError::TooFewPairs {
            found: pairs.len(),
            required: min_pairs,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LandmarkRecord {
    name: String,
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<f64>,
    #[serde(default = "default_present")]
    present: bool,
}

fn default_present() -> bool {
    true
}

/// On-disk landmark file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LandmarkFile {
    vocabulary_version: String,
    landmarks: Vec<LandmarkRecord>,
}

fn read_file(path: &Path) -> Result<LandmarkFile, LandmarkError> {
    let text = fs::read_to_string(path).map_err(|source| LandmarkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LandmarkError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, file: &LandmarkFile) -> Result<(), LandmarkError> {
    let mut text = serde_json::to_string_pretty(file).expect("landmark file serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| LandmarkError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn check_finite(name: &str, coords: &[f64]) -> Result<(), LandmarkError> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(LandmarkError::NonFinite(name.to_string()))
    }
}

impl LandmarkSet3D {
    pub fn load(path: &Path) -> Result<Self, LandmarkError> {
        let file = read_file(path)?;
        let entries = file
            .landmarks
            .into_iter()
            .map(|r| {
                let z = r.z.ok_or_else(|| LandmarkError::MissingZ(r.name.clone()))?;
                check_finite(&r.name, &[r.x, r.y, z])?;
                Ok(Landmark {
                    position: Point3::new(r.x, r.y, z),
                    name: r.name,
                    present: r.present,
                })
            })
            .collect::<Result<Vec<_>, LandmarkError>>()?;
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), LandmarkError> {
        let landmarks = self
            .entries
            .iter()
            .map(|e| LandmarkRecord {
                name: e.name.clone(),
                x: e.position.x,
                y: e.position.y,
                z: Some(e.position.z),
                present: e.present,
            })
            .collect();
        write_file(
            path,
            &LandmarkFile {
                vocabulary_version: VOCABULARY_VERSION.to_string(),
                landmarks,
            },
        )
    }
}

impl LandmarkSet2D {
    pub fn load(path: &Path) -> Result<Self, LandmarkError> {
        let file = read_file(path)?;
        let entries = file
            .landmarks
            .into_iter()
            .map(|r| {
                check_finite(&r.name, &[r.x, r.y])?;
                Ok(Landmark {
                    position: Point2::new(r.x, r.y),
                    name: r.name,
                    present: r.present,
                })
            })
            .collect::<Result<Vec<_>, LandmarkError>>()?;
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), LandmarkError> {
        let landmarks = self
            .entries
            .iter()
            .map(|e| LandmarkRecord {
                name: e.name.clone(),
                x: e.position.x,
                y: e.position.y,
                z: None,
                present: e.present,
            })
            .collect();
        write_file(
            path,
            &LandmarkFile {
                vocabulary_version: VOCABULARY_VERSION.to_string(),
                landmarks,
            },
        )
    }
}
