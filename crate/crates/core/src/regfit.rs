//! Region registration: masked DICE between the photograph's teeth
//! segmentation and the rasterized mesh silhouette, minimized with MVMO-SH.

use std::cell::RefCell;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, IntrinsicConventions, Point2, CAMERA_DIM};
use crate::mesh::DentalMesh;
use crate::mvmo::{best_of_restarts, OptimizerConfig, RunSummary, SearchSpace};
use crate::raster::{rasterize_into, Bitmask};
use crate::score::ComparisonOutcome;

/// Restarts per region comparison; the best run is kept.
pub const DEFAULT_RESTARTS: usize = 3;

/// Per-channel tolerance when classifying segmentation colors.
pub const COLOR_TOLERANCE: u8 = 10;

#[derive(Debug, Error)]
pub enum RegfitError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("segmentation has no region of interest outside the occlusion mask")]
    UnusableCase,
    #[error("failed to read segmentation {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

/// Teeth region of interest plus occlusion mask, pixel-aligned to a photograph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationImage {
    pub roi: Bitmask,
    pub occlusion: Bitmask,
}

impl SegmentationImage {
    pub fn new(roi: Bitmask, occlusion: Bitmask) -> Result<Self, RegfitError> {
        if roi.dims() != occlusion.dims() {
            return Err(RegfitError::DimensionMismatch(roi.dims(), occlusion.dims()));
        }
        Ok(Self { roi, occlusion })
    }

    pub fn width(&self) -> u32 {
        self.roi.width()
    }

    pub fn height(&self) -> u32 {
        self.roi.height()
    }

    /// ROI pixels left once the occlusion mask is removed.
    pub fn visible_roi(&self) -> Bitmask {
        self.roi.minus(&self.occlusion)
    }

    pub fn is_usable(&self) -> bool {
        self.roi
            .bits()
            .iter()
            .zip(self.occlusion.bits())
            .any(|(&r, &o)| r && !o)
    }

    /// Decodes a segmentation PNG: white is ROI, red is occlusion, anything
    /// else is background (each channel within [`COLOR_TOLERANCE`]).
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let near = |v: u8, target: u8| v.abs_diff(target) <= COLOR_TOLERANCE;
        let mut roi = Bitmask::new(w, h);
        let mut occ = Bitmask::new(w, h);
        for (x, y, Rgb([r, g, b])) in img.enumerate_pixels() {
            if near(*r, 255) && near(*g, 255) && near(*b, 255) {
                roi.set(x, y, true);
            } else if near(*r, 255) && near(*g, 0) && near(*b, 0) {
                occ.set(x, y, true);
            }
        }
        Self {
            roi,
            occlusion: occ,
        }
    }

    /// Encodes as white ROI and red occlusion on black. Occlusion wins where
    /// both are set.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width(), self.height(), |x, y| {
            if self.occlusion.get(x, y) {
                Rgb([255, 0, 0])
            } else if self.roi.get(x, y) {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, RegfitError> {
        let img = image::open(path).map_err(|e| RegfitError::Image {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_rgb(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RegfitError> {
        self.to_rgb()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| RegfitError::Image {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
    }
}

/// Masked DICE error with its empty-after-mask flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedDice {
    /// `1 - 2|A∩B| / (|A| + |B|)` with `A = a∖m`, `B = b∖m`.
    pub error: f64,
    /// Both operands vanished under the mask; `error` is then 1.
    pub empty_after_mask: bool,
}

/// Inverted masked DICE: 0 is a perfect overlap, 1 no overlap.
pub fn masked_dice_error(a: &Bitmask, b: &Bitmask, m: &Bitmask) -> Result<MaskedDice, RegfitError> {
    if a.dims() != b.dims() {
        return Err(RegfitError::DimensionMismatch(a.dims(), b.dims()));
    }
    if a.dims() != m.dims() {
        return Err(RegfitError::DimensionMismatch(a.dims(), m.dims()));
    }
    let (mut na, mut nb, mut nab) = (0u64, 0u64, 0u64);
    for ((&pa, &pb), &pm) in a.bits().iter().zip(b.bits()).zip(m.bits()) {
        if pm {
            continue;
        }
        na += pa as u64;
        nb += pb as u64;
        nab += (pa && pb) as u64;
    }
    Ok(dice_from_counts(na, nb, nab))
}

fn dice_from_counts(na: u64, nb: u64, nab: u64) -> MaskedDice {
    if na + nb == 0 {
        return MaskedDice {
            error: 1.0,
            empty_after_mask: true,
        };
    }
    let sim = 2.0 * nab as f64 / (na + nb) as f64;
    MaskedDice {
        error: (1.0 - sim).clamp(0.0, 1.0),
        empty_after_mask: false,
    }
}

const PX_MASKED: u8 = 0;
const PX_ROI: u8 = 1;
const PX_BACKGROUND: u8 = 2;

/// Fitness of camera poses for one (segmentation, mesh) comparison.
///
/// Returns the masked DICE error of the rasterized silhouette, or `+inf` when
/// the silhouette is empty (mesh off-screen or behind the camera) so that
/// any visible pose beats an invisible one.
pub struct RegionFitness<'a> {
    mesh: &'a DentalMesh,
    ic: IntrinsicConventions,
    classes: Vec<u8>,
    roi_count: u64,
    scratch: RefCell<(Bitmask, Vec<Option<Point2>>)>,
}

impl<'a> RegionFitness<'a> {
    pub fn evaluate(&self, c: &CameraParams) -> f64 {
        let mut guard = self.scratch.borrow_mut();
        let (mask, projected) = &mut *guard;
        let Some(bb) = rasterize_into(mask, self.mesh, c, &self.ic, projected) else {
            return f64::INFINITY;
        };
        let w = self.ic.image_width_px as usize;
        let (mut nb, mut nab) = (0u64, 0u64);
        let bits = mask.bits_mut();
        // count and clear in one pass so the scratch mask is empty again
        for y in bb.y0 as usize..=bb.y1 as usize {
            let row = y * w;
            for x in bb.x0 as usize..=bb.x1 as usize {
                let i = row + x;
                if std::mem::take(&mut bits[i]) {
                    match self.classes[i] {
                        PX_ROI => {
                            nb += 1;
                            nab += 1;
                        }
                        PX_BACKGROUND => nb += 1,
                        _ => {}
                    }
                }
            }
        }
        dice_from_counts(self.roi_count, nb, nab).error
    }

    /// Same as [`RegionFitness::evaluate`] on a parameter slice in canonical order.
    pub fn evaluate_slice(&self, x: &[f64]) -> f64 {
        self.evaluate(&CameraParams::from_slice(x))
    }

    pub fn intrinsics(&self) -> &IntrinsicConventions {
        &self.ic
    }
}

/// Builds the fitness for one comparison. The intrinsics must describe an
/// image of the segmentation's size.
pub fn region_fitness<'a>(
    seg: &SegmentationImage,
    mesh: &'a DentalMesh,
    ic: &IntrinsicConventions,
) -> Result<RegionFitness<'a>, RegfitError> {
    if !seg.is_usable() {
        return Err(RegfitError::UnusableCase);
    }
    let (w, h) = (seg.width(), seg.height());
    if (ic.image_width_px, ic.image_height_px) != (w, h) {
        return Err(RegfitError::DimensionMismatch(
            (ic.image_width_px, ic.image_height_px),
            (w, h),
        ));
    }
    let classes: Vec<u8> = seg
        .roi
        .bits()
        .iter()
        .zip(seg.occlusion.bits())
        .map(|(&r, &o)| match (r, o) {
            (_, true) => PX_MASKED,
            (true, false) => PX_ROI,
            (false, false) => PX_BACKGROUND,
        })
        .collect();
    let roi_count = classes.iter().filter(|&&c| c == PX_ROI).count() as u64;
    Ok(RegionFitness {
        mesh,
        ic: *ic,
        classes,
        roi_count,
        scratch: RefCell::new((Bitmask::new(w, h), Vec::with_capacity(mesh.vertices.len()))),
    })
}

/// Outcome of one region comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub masked_dice_error: f64,
    pub params: CameraParams,
    pub restarts_used: usize,
    pub evaluations_used: u64,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
}

/// The optimizer search box over camera parameters.
pub fn camera_search_space() -> SearchSpace {
    SearchSpace::new(CameraParams::search_bounds().to_vec()).expect("static bounds are valid")
}

/// Registers the mesh onto the segmentation with `restarts` seeded MVMO-SH
/// runs (seeds `config.seed ..`) and keeps the lowest masked DICE error.
pub fn score_region_comparison(
    seg: &SegmentationImage,
    mesh: &DentalMesh,
    ic: &IntrinsicConventions,
    config: &OptimizerConfig,
    restarts: usize,
) -> Result<RegionScore, RegfitError> {
    let fitness = region_fitness(seg, mesh, ic)?;
    let space = camera_search_space();
    debug_assert_eq!(space.dim(), CAMERA_DIM);
    let res = best_of_restarts(|x| fitness.evaluate_slice(x), &space, config, restarts)
        .map_err(|e| RegfitError::Optimizer(e.to_string()))?;
    Ok(RegionScore {
        masked_dice_error: res.best.best_value,
        params: CameraParams::from_slice(&res.best.best_point),
        restarts_used: res.runs.len(),
        evaluations_used: res.total_evaluations(),
        seed: config.seed,
        runs: res.runs,
    })
}

/// [`score_region_comparison`] folded into a comparison outcome.
pub fn region_outcome(
    seg: &SegmentationImage,
    mesh: &DentalMesh,
    ic: &IntrinsicConventions,
    config: &OptimizerConfig,
    restarts: usize,
) -> ComparisonOutcome {
    match score_region_comparison(seg, mesh, ic, config, restarts) {
        Ok(s) => ComparisonOutcome::Scored {
            score: s.masked_dice_error,
            params: s.params,
            restarts: s.restarts_used as u32,
            evaluations: s.evaluations_used,
            seed: Some(s.seed),
            note: None,
        },
        Err(e) => ComparisonOutcome::Unscorable {
            reason: e.to_string(),
        },
    }
}
