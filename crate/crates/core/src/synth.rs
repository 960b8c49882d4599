//! Synthetic subjects and cases with known ground truth.
//!
//! A subject is six upper anterior teeth modeled as extruded rounded
//! rectangles placed along a circular arch. The arch bulges towards the
//! camera: with a zero pose the camera looks at the labial faces along `+Z`,
//! `+Y` points down (towards the incisal edges) and the canines sit further
//! back than the central incisors.
//!
//! Individual variation comes from a seeded perturbation of every tooth's
//! size, tilt, vertical step and gap, and of the arch curvature. A
//! perturbation of zero yields the same average dentition for every seed.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraParams, IntrinsicConventions, Point2, Point3, Projector};
use crate::landmarks::{Landmark, LandmarkSet, LandmarkSet2D, LandmarkSet3D, TEETH};
use crate::mesh::DentalMesh;
use crate::raster::{rasterize_silhouette, Bitmask};
use crate::manifest::{AmEntry, Manifest, PmEntry};
use crate::regfit::SegmentationImage;
use std::path::{Path, PathBuf};

/// Perturbation scale used for cohorts unless configured otherwise.
pub const DEFAULT_PERTURBATION: f64 = 1.5;

/// Segments per rounded corner of a tooth outline.
const CORNER_SEGMENTS: usize = 4;

/// Draws before giving up on an in-frame camera.
pub const MAX_CAMERA_DRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("no in-frame camera found after {0} draws")]
    InFrameExhausted(usize),
    #[error("perturbation must be finite and non-negative, got {0}")]
    InvalidPerturbation(f64),
}

/// One tooth block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToothSpec {
    pub fdi: u8,
    /// Mesio-distal width in mm.
    pub width: f64,
    /// Crown height in mm.
    pub height: f64,
    /// Labio-lingual depth in mm.
    pub depth: f64,
    /// In-plane tilt about the labial face normal, degrees.
    pub tilt: f64,
    /// Vertical step of the incisal edge (positive is further down), mm.
    pub incisal_offset: f64,
    /// Gap to the next tooth along the arch (unused for the last tooth), mm.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub seed: u64,
    pub perturbation: f64,
    pub teeth: [ToothSpec; 6],
    /// Arch curvature in 1/mm.
    pub arch_curvature: f64,
}

/// A subject's mesh and landmarks in the normalized (centroid) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub spec: SubjectSpec,
    pub mesh: DentalMesh,
    pub landmarks: LandmarkSet3D,
}

const AVG_WIDTH: [f64; 6] = [7.8, 6.6, 8.6, 8.6, 6.6, 7.8];
const AVG_HEIGHT: [f64; 6] = [10.0, 8.8, 10.6, 10.6, 8.8, 10.0];
const AVG_DEPTH: [f64; 6] = [7.5, 6.0, 7.0, 7.0, 6.0, 7.5];
const AVG_TILT: [f64; 6] = [4.0, 3.0, 1.0, -1.0, -3.0, -4.0];
const AVG_INCISAL: [f64; 6] = [-0.3, -0.9, 0.0, 0.0, -0.9, -0.3];
const AVG_GAP: f64 = 0.2;
const AVG_CURVATURE: f64 = 1.0 / 24.0;

/// Relative and absolute perturbation amplitudes at scale 1.
const WIDTH_JITTER: f64 = 0.12;
const HEIGHT_JITTER: f64 = 0.12;
const DEPTH_JITTER: f64 = 0.10;
const TILT_JITTER_DEG: f64 = 6.0;
const INCISAL_JITTER_MM: f64 = 1.0;
const GAP_JITTER_MM: f64 = 0.6;
const CURVATURE_JITTER: f64 = 0.25;

/// Deterministic subject for a seed.
pub fn subject_spec(seed: u64, perturbation: f64) -> Result<SubjectSpec, SynthError> {
    if !(perturbation >= 0.0) || !perturbation.is_finite() {
        return Err(SynthError::InvalidPerturbation(perturbation));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = perturbation;
    let mut jitter = |amp: f64| amp * p * (2.0 * rng.random::<f64>() - 1.0);
    let mut teeth = [ToothSpec {
        fdi: 0,
        width: 0.0,
        height: 0.0,
        depth: 0.0,
        tilt: 0.0,
        incisal_offset: 0.0,
        gap: 0.0,
    }; 6];
    for (i, t) in teeth.iter_mut().enumerate() {
        *t = ToothSpec {
            fdi: TEETH[i],
            width: AVG_WIDTH[i] * (1.0 + jitter(WIDTH_JITTER)),
            height: AVG_HEIGHT[i] * (1.0 + jitter(HEIGHT_JITTER)),
            depth: AVG_DEPTH[i] * (1.0 + jitter(DEPTH_JITTER)),
            tilt: AVG_TILT[i] + jitter(TILT_JITTER_DEG),
            incisal_offset: AVG_INCISAL[i] + jitter(INCISAL_JITTER_MM),
            gap: (AVG_GAP + jitter(GAP_JITTER_MM)).max(0.0),
        };
    }
    let arch_curvature = AVG_CURVATURE * (1.0 + jitter(CURVATURE_JITTER));
    Ok(SubjectSpec {
        seed,
        perturbation,
        teeth,
        arch_curvature,
    })
}

/// Local frame of one tooth's labial face.
struct ToothFrame {
    origin: Vector3<f64>,
    /// Width direction, towards the viewer's right.
    ex: Vector3<f64>,
    /// Height direction, towards the incisal edge.
    ey: Vector3<f64>,
    /// Into the tooth, away from the camera.
    ez: Vector3<f64>,
    spec: ToothSpec,
}

impl ToothFrame {
    fn point(&self, a: f64, b: f64, d: f64) -> Vector3<f64> {
        self.origin + self.ex * a + self.ey * b + self.ez * d
    }

    fn radius(&self) -> f64 {
        0.22 * self.spec.width.min(self.spec.height)
    }

    /// Rounded-rectangle outline in face coordinates, counter-clockwise as
    /// seen from the camera.
    fn outline(&self) -> Vec<(f64, f64)> {
        let hw = self.spec.width / 2.0;
        let hh = self.spec.height / 2.0;
        let r = self.radius();
        let corners = [
            (hw - r, hh - r, 0.0),
            (-hw + r, hh - r, 90.0),
            (-hw + r, -hh + r, 180.0),
            (hw - r, -hh + r, 270.0),
        ];
        let mut pts = Vec::with_capacity(4 * (CORNER_SEGMENTS + 1));
        for (cx, cy, start) in corners {
            for k in 0..=CORNER_SEGMENTS {
                let ang = (start + 90.0 * k as f64 / CORNER_SEGMENTS as f64).to_radians();
                pts.push((cx + r * ang.cos(), cy + r * ang.sin()));
            }
        }
        pts
    }

    /// Point on a rounded corner at 45 degrees; `sx`, `sy` pick the corner.
    fn corner_point(&self, sx: f64, sy: f64) -> Vector3<f64> {
        let hw = self.spec.width / 2.0;
        let hh = self.spec.height / 2.0;
        let c45 = self.radius() * (1.0 - std::f64::consts::FRAC_1_SQRT_2);
        self.point(sx * (hw - c45), sy * (hh - c45), 0.0)
    }
}

fn tooth_frames(spec: &SubjectSpec) -> Vec<ToothFrame> {
    let radius = 1.0 / spec.arch_curvature;
    let total: f64 = spec.teeth.iter().map(|t| t.width).sum::<f64>()
        + spec.teeth[..5].iter().map(|t| t.gap).sum::<f64>();
    let mut s = -total / 2.0;
    let mut frames = Vec::with_capacity(6);
    for t in &spec.teeth {
        let center_arc = s + t.width / 2.0;
        s += t.width + t.gap;
        let theta = center_arc / radius;
        let (sin, cos) = theta.sin_cos();
        let face_center_y = t.incisal_offset - t.height / 2.0;
        let origin = Vector3::new(radius * sin, face_center_y, radius * (1.0 - cos));
        let tangent = Vector3::new(cos, 0.0, sin);
        let down = Vector3::y();
        let ez = Vector3::new(-sin, 0.0, cos);
        let (ts, tc) = t.tilt.to_radians().sin_cos();
        frames.push(ToothFrame {
            origin,
            ex: tangent * tc + down * ts,
            ey: -tangent * ts + down * tc,
            ez,
            spec: *t,
        });
    }
    frames
}

/// Triangulates a convex polygon by zigzagging between its two chains from
/// the lowest `b` vertex to the highest, so that every triangle spans only a
/// short stretch of the tooth's height. Triangles keep the polygon's winding.
fn zigzag(outline: &[(f64, f64)]) -> Vec<[u32; 3]> {
    let n = outline.len();
    let top = (0..n)
        .min_by(|&i, &j| outline[i].1.total_cmp(&outline[j].1))
        .expect("non-empty outline");
    let at = |k: usize| (top + k) % n;
    // `f` walks with the winding, `b` against it; both start next to `top`
    let (mut f, mut b) = (1usize, n - 1);
    let mut tris = vec![[at(0), at(f), at(b)]];
    while f + 1 < b {
        let (nf, nb) = (f + 1, b - 1);
        if outline[at(nf)].1 <= outline[at(nb)].1 {
            tris.push([at(f), at(nf), at(b)]);
            f = nf;
        } else {
            tris.push([at(f), at(nb), at(b)]);
            b = nb;
        }
    }
    tris.into_iter()
        .map(|t| t.map(|i| i as u32))
        .collect()
}

fn build_mesh(frames: &[ToothFrame]) -> DentalMesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for fr in frames {
        let outline = fr.outline();
        let n = outline.len() as u32;
        let base = vertices.len() as u32;
        let depth = fr.spec.depth;
        for &(a, b) in &outline {
            vertices.push(Point3::from(fr.point(a, b, 0.0)));
        }
        for &(a, b) in &outline {
            vertices.push(Point3::from(fr.point(a, b, depth)));
        }
        let back = base + n;
        for [i, j, k] in zigzag(&outline) {
            triangles.push([base + i, base + j, base + k]);
            triangles.push([back + k, back + j, back + i]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([base + i, back + i, back + j]);
            triangles.push([base + i, back + j, base + j]);
        }
    }
    DentalMesh::new(vertices, triangles).expect("generated mesh is valid")
}

fn build_landmarks(frames: &[ToothFrame]) -> Vec<(String, Vector3<f64>)> {
    let mut out: Vec<(String, Vector3<f64>)> = Vec::with_capacity(30);
    // mesial is towards the midline: +x for the viewer-left teeth
    let mesial_sign = |i: usize| if i < 3 { 1.0 } else { -1.0 };
    for (i, fr) in frames.iter().enumerate() {
        let fdi = fr.spec.fdi;
        let hh = fr.spec.height / 2.0;
        if fdi % 10 == 3 {
            out.push((format!("smile_{fdi}_cusp"), fr.point(0.0, hh, 0.0)));
            continue;
        }
        let m = mesial_sign(i);
        let distal = (format!("smile_{fdi}_distal"), fr.corner_point(-m, 1.0));
        let mid = (format!("smile_{fdi}_mid"), fr.point(0.0, hh, 0.0));
        let mesial = (format!("smile_{fdi}_mesial"), fr.corner_point(m, 1.0));
        // viewer left-to-right
        if i < 3 {
            out.extend([distal, mid, mesial]);
        } else {
            out.extend([mesial, mid, distal]);
        }
    }
    for i in 0..5 {
        let (l, r) = (&frames[i], &frames[i + 1]);
        let p = (l.point(l.spec.width / 2.0, 0.0, 0.0) + r.point(-r.spec.width / 2.0, 0.0, 0.0)) / 2.0;
        out.push((format!("medial_{}_{}", l.spec.fdi, r.spec.fdi), p));
    }
    for (i, fr) in frames.iter().enumerate() {
        out.push((
            format!("gingival_{}", fr.spec.fdi),
            fr.point(0.0, -fr.spec.height / 2.0, 0.0),
        ));
        if i < 5 {
            let r = &frames[i + 1];
            let p = (fr.corner_point(1.0, -1.0) + r.corner_point(-1.0, -1.0)) / 2.0
                - Vector3::y();
            out.push((format!("papilla_{}_{}", fr.spec.fdi, r.spec.fdi), p));
        }
    }
    out
}

/// Builds a subject's mesh and its 30 landmarks, both centered on the mesh's
/// vertex centroid.
pub fn build_subject(spec: SubjectSpec) -> Subject {
    let frames = tooth_frames(&spec);
    let mesh = build_mesh(&frames).normalized();
    let offset = mesh.centroid_offset;
    let mut entries: Vec<Landmark<Point3>> = build_landmarks(&frames)
        .into_iter()
        .map(|(name, p)| Landmark {
            name,
            position: Point3::from(p - offset),
            present: true,
        })
        .collect();
    entries.sort_by_key(|e| crate::landmarks::vocabulary_index(&e.name));
    let landmarks = LandmarkSet::new(entries).expect("generated names are canonical");
    Subject {
        spec,
        mesh,
        landmarks,
    }
}

/// Generates the subject for `seed` with the given perturbation scale.
pub fn generate_subject(seed: u64, perturbation: f64) -> Result<Subject, SynthError> {
    Ok(build_subject(subject_spec(seed, perturbation)?))
}

/// Lip occlusion severity of a rendered case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OcclusionLevel {
    /// Teeth fully visible.
    A,
    /// 10-25% of the silhouette height covered from the bottom.
    B,
    /// 25-50% covered.
    C,
}

impl OcclusionLevel {
    /// Covered fraction range of the silhouette's bounding-box height.
    pub fn fraction_range(self) -> (f64, f64) {
        match self {
            OcclusionLevel::A => (0.0, 0.0),
            OcclusionLevel::B => (0.10, 0.25),
            OcclusionLevel::C => (0.25, 0.50),
        }
    }
}

/// Uniform camera distribution for synthetic photographs, a near-frontal
/// subset of the optimizer's search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSampler {
    pub tx: (f64, f64),
    pub ty: (f64, f64),
    pub tz: (f64, f64),
    pub rx: (f64, f64),
    pub ry: (f64, f64),
    pub rz: (f64, f64),
    pub f: (f64, f64),
    /// Smallest accepted silhouette width as a fraction of the image width.
    pub min_width_fraction: f64,
}

impl Default for CameraSampler {
    fn default() -> Self {
        Self {
            tx: (-10.0, 10.0),
            ty: (-8.0, 8.0),
            tz: (-150.0, -50.0),
            rx: (-15.0, 15.0),
            ry: (-20.0, 20.0),
            rz: (-8.0, 8.0),
            f: (80.0, 190.0),
            min_width_fraction: 0.3,
        }
    }
}

impl CameraSampler {
    pub fn draw(&self, rng: &mut impl Rng) -> CameraParams {
        let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        CameraParams {
            tx: u(self.tx),
            ty: u(self.ty),
            tz: u(self.tz),
            rx: u(self.rx),
            ry: u(self.ry),
            rz: u(self.rz),
            f: u(self.f),
        }
    }
}

/// Occlusion band actually applied to a case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBand {
    pub level: OcclusionLevel,
    /// Covered fraction of the silhouette bounding-box height.
    pub fraction: f64,
    /// First masked row; the band extends to the bottom of the image.
    /// `None` when nothing is masked.
    pub top_row: Option<u32>,
}

/// One synthetic (photograph, mesh) pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub subject: Subject,
    pub camera: CameraParams,
    pub intrinsics: IntrinsicConventions,
    pub segmentation: SegmentationImage,
    pub landmarks_2d: LandmarkSet2D,
    pub occlusion: OcclusionBand,
}

/// Whether every mesh vertex projects inside the image, and the silhouette
/// is wide enough.
fn in_frame(mesh: &DentalMesh, c: &CameraParams, ic: &IntrinsicConventions, min_frac: f64) -> bool {
    let proj = Projector::new(c, ic);
    let (w, h) = (ic.image_width_px as f64, ic.image_height_px as f64);
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    for v in &mesh.vertices {
        match proj.project(v) {
            Ok(p) if p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h => {
                min_u = min_u.min(p.x);
                max_u = max_u.max(p.x);
            }
            _ => return false,
        }
    }
    max_u - min_u >= min_frac * w
}

/// Renders a subject under a sampled camera with lip occlusion of the given
/// level. All randomness comes from `seed`.
pub fn render_case(
    subject: &Subject,
    sampler: &CameraSampler,
    level: OcclusionLevel,
    ic: &IntrinsicConventions,
    seed: u64,
) -> Result<SyntheticCase, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = (0..MAX_CAMERA_DRAWS)
        .map(|_| sampler.draw(&mut rng))
        .find(|c| in_frame(&subject.mesh, c, ic, sampler.min_width_fraction))
        .ok_or(SynthError::InFrameExhausted(MAX_CAMERA_DRAWS))?;
    let (lo, hi) = level.fraction_range();
    let fraction = lo + (hi - lo) * rng.random::<f64>();
    Ok(render_with_camera(subject, camera, level, fraction, ic))
}

/// Renders a subject under a fixed camera with a fixed occlusion fraction.
pub fn render_with_camera(
    subject: &Subject,
    camera: CameraParams,
    level: OcclusionLevel,
    fraction: f64,
    ic: &IntrinsicConventions,
) -> SyntheticCase {
    let silhouette = rasterize_silhouette(&subject.mesh, &camera, ic);
    let (w, h) = (ic.image_width_px, ic.image_height_px);
    let top_row = match silhouette.bounding_box() {
        Some(bb) if fraction > 0.0 => {
            let covered = (fraction * bb.height() as f64).round() as u32;
            (covered > 0).then(|| bb.y1 + 1 - covered.min(bb.height()))
        }
        _ => None,
    };
    let occlusion = match top_row {
        Some(top) => Bitmask::from_fn(w, h, |_, y| y >= top),
        None => Bitmask::new(w, h),
    };
    let roi = silhouette.minus(&occlusion);
    let segmentation = SegmentationImage::new(roi, occlusion).expect("same dimensions");

    let entries = subject
        .landmarks
        .entries()
        .iter()
        .map(|e| {
            let p = project(&e.position, &camera, ic).unwrap_or(Point2::new(f64::NAN, f64::NAN));
            let hidden = !p.x.is_finite() || top_row.is_some_and(|t| p.y >= t as f64);
            Landmark {
                name: e.name.clone(),
                position: if p.x.is_finite() { p } else { Point2::origin() },
                present: !hidden,
            }
        })
        .collect();
    SyntheticCase {
        subject: subject.clone(),
        camera,
        intrinsics: *ic,
        segmentation,
        landmarks_2d: LandmarkSet::new(entries).expect("names come from a valid set"),
        occlusion: OcclusionBand {
            level,
            fraction,
            top_row,
        },
    }
}

/// Cases per occlusion level in a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelCounts {
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl LevelCounts {
    pub fn total(&self) -> usize {
        self.a + self.b + self.c
    }

    /// Occlusion level of each case in cohort order: A cases, then B, then C.
    pub fn levels(&self) -> Vec<OcclusionLevel> {
        let mut v = vec![OcclusionLevel::A; self.a];
        v.extend(std::iter::repeat_n(OcclusionLevel::B, self.b));
        v.extend(std::iter::repeat_n(OcclusionLevel::C, self.c));
        v
    }
}

/// Description of a synthetic cohort. Each subject appears once as an AM
/// photograph and once as a PM mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    pub counts: LevelCounts,
    pub perturbation: f64,
    /// `[width, height]` of the rendered photographs.
    pub image_size: [u32; 2],
    pub camera: CameraSampler,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            counts: LevelCounts { a: 15, b: 15, c: 10 },
            perturbation: DEFAULT_PERTURBATION,
            image_size: [320, 240],
            camera: CameraSampler::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("cohort has no cases")]
    Empty,
    #[error("case {id}: {source}")]
    Case { id: String, source: SynthError },
    #[error("{0}")]
    Synth(#[from] SynthError),
    #[error("{path}: {reason}")]
    Write { path: String, reason: String },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
}

/// Ground truth stored next to each synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTruth {
    pub id: String,
    pub camera: CameraParams,
    pub occlusion: OcclusionBand,
    pub subject: SubjectSpec,
}

/// Case id of the `i`-th case (0-based).
pub fn case_id(i: usize) -> String {
    format!("S{:03}", i + 1)
}

/// Renders every case of a cohort in memory, in cohort order.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticCase>, CohortError> {
    let levels = spec.counts.levels();
    if levels.is_empty() {
        return Err(CohortError::Empty);
    }
    let ic = IntrinsicConventions::for_image(spec.image_size[0], spec.image_size[1]);
    ic.validate().map_err(|e| CohortError::Intrinsics(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cases = Vec::with_capacity(levels.len());
    for (i, level) in levels.into_iter().enumerate() {
        let subject_seed: u64 = rng.random();
        let render_seed: u64 = rng.random();
        let wrap = |source| CohortError::Case {
            id: case_id(i),
            source,
        };
        let subject = generate_subject(subject_seed, spec.perturbation).map_err(wrap)?;
        cases.push(render_case(&subject, &spec.camera, level, &ic, render_seed).map_err(wrap)?);
    }
    Ok(cases)
}

/// Writes a cohort as an ingestible directory and returns the manifest path.
///
/// Layout: `manifest.json`, `cohort.json` (the spec), `am/<id>_seg.png`,
/// `am/<id>_landmarks.json`, `pm/<id>.obj`, `pm/<id>_landmarks.json` and
/// `truth/<id>.json`. Output bytes depend only on the spec.
pub fn write_cohort(spec: &CohortSpec, dir: &Path) -> Result<PathBuf, CohortError> {
    let cases = generate_cohort(spec)?;
    let werr = |path: &Path, reason: String| CohortError::Write {
        path: path.display().to_string(),
        reason,
    };
    for sub in ["am", "pm", "truth"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| werr(&d, e.to_string()))?;
    }
    let json = |path: &Path, value: &dyn erased::Json| -> Result<(), CohortError> {
        let mut text = value.to_json().map_err(|e| werr(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| werr(path, e.to_string()))
    };
    let mut manifest = Manifest {
        am: Vec::with_capacity(cases.len()),
        pm: Vec::with_capacity(cases.len()),
        base_dir: dir.to_path_buf(),
    };
    for (i, case) in cases.iter().enumerate() {
        let id = case_id(i);
        let seg = PathBuf::from(format!("am/{id}_seg.png"));
        let lm2 = PathBuf::from(format!("am/{id}_landmarks.json"));
        let mesh = PathBuf::from(format!("pm/{id}.obj"));
        let lm3 = PathBuf::from(format!("pm/{id}_landmarks.json"));
        case.segmentation
            .save_png(&dir.join(&seg))
            .map_err(|e| werr(&dir.join(&seg), e.to_string()))?;
        case.landmarks_2d
            .save(&dir.join(&lm2))
            .map_err(|e| werr(&dir.join(&lm2), e.to_string()))?;
        case.subject
            .mesh
            .write_obj(&dir.join(&mesh))
            .map_err(|e| werr(&dir.join(&mesh), e.to_string()))?;
        case.subject
            .landmarks
            .save(&dir.join(&lm3))
            .map_err(|e| werr(&dir.join(&lm3), e.to_string()))?;
        let truth = CaseTruth {
            id: id.clone(),
            camera: case.camera,
            occlusion: case.occlusion,
            subject: case.subject.spec.clone(),
        };
        json(&dir.join(format!("truth/{id}.json")), &truth)?;
        manifest.am.push(AmEntry {
            id: id.clone(),
            image_size: spec.image_size,
            segmentation: Some(seg),
            landmarks: Some(lm2),
            photo: None,
            truth: Some(id.clone()),
        });
        manifest.pm.push(PmEntry {
            id,
            mesh,
            landmarks: Some(lm3),
        });
    }
    json(&dir.join("cohort.json"), spec)?;
    let path = dir.join("manifest.json");
    manifest.write(&path).map_err(|e| werr(&path, e.to_string()))?;
    Ok(path)
}

mod erased {
    /// Object-safe pretty JSON serialization.
    pub trait Json {
        fn to_json(&self) -> Result<String, String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> Result<String, String> {
            serde_json::to_string_pretty(self).map_err(|e| e.to_string())
        }
    }
}
