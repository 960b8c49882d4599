//! Landmark registration: pose and focal length from 3D-2D landmark pairs.
//!
//! The solver minimizes the sum of squared reprojection residuals over the
//! seven camera parameters with Levenberg-Marquardt, started from a fixed
//! deterministic grid of focal lengths and rotations. For every start the
//! translation is initialized in closed form: with rotation and focal length
//! fixed, the projection equations are linear in `(tx, ty, tz)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    d_rot_x, d_rot_y, d_rot_z, rot_x, rot_y, rot_z, CameraParams, IntrinsicConventions, Point2,
    Point3, Projector, CAMERA_DIM,
};
use crate::landmarks::{
    pair_landmarks, LandmarkError, LandmarkSet2D, LandmarkSet3D, LandmarkSubset, DEFAULT_MIN_PAIRS,
};
use crate::score::ComparisonOutcome;

type Vec7 = SVector<f64, CAMERA_DIM>;
type Mat7 = SMatrix<f64, CAMERA_DIM, CAMERA_DIM>;

/// How the per-pair pixel distances are aggregated into the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmseMode {
    /// `sqrt(mean(d_i^2))`.
    #[default]
    Standard,
    /// `sqrt(mean(d_i))`, the un-squared variant.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub min_pairs: usize,
    /// Focal lengths (mm) of the start grid.
    pub focal_grid_mm: Vec<f64>,
    /// Per-axis rotation seeds (degrees); crossed over the three axes.
    pub rotation_seeds_deg: Vec<f64>,
    pub max_starts: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub rmse_mode: RmseMode,
    /// Landmarks closer than this to their best-fit plane count as coplanar.
    pub coplanar_tolerance_mm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            min_pairs: DEFAULT_MIN_PAIRS,
            focal_grid_mm: vec![20.0, 35.0, 50.0, 85.0, 135.0],
            rotation_seeds_deg: vec![0.0, 30.0, -30.0],
            max_starts: 45,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            relative_cost_tolerance: 1e-12,
            rmse_mode: RmseMode::Standard,
            coplanar_tolerance_mm: 1e-6,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("only {found} landmark pairs, at least {required} required")]
    TooFewPairs { found: usize, required: usize },
    #[error("3D landmarks are collinear or coincident")]
    Degenerate,
    #[error("no start produced a pose with every landmark in front of the camera")]
    NoValidStart,
    #[error("a landmark projects behind the camera")]
    BehindCamera,
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

/// Outcome of [`solve_pnpf`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPSolution {
    pub params: CameraParams,
    pub rmse_px: f64,
    pub n_pairs: usize,
    pub converged: bool,
    /// Number of starts that were run.
    pub restarts_used: usize,
    /// 3D landmarks were coplanar within tolerance.
    pub coplanar: bool,
}

/// Reprojection error of `c` over the pairs, in pixels.
pub fn reprojection_rmse(
    pairs: &[(Point3, Point2)],
    c: &CameraParams,
    ic: &IntrinsicConventions,
    mode: RmseMode,
) -> Result<f64, PnpError> {
    if pairs.is_empty() {
        return Err(PnpError::TooFewPairs {
            found: 0,
            required: 1,
        });
    }
    let proj = Projector::new(c, ic);
    let mut acc = 0.0;
    for (a, b) in pairs {
        let p = proj.project(a).map_err(|_| PnpError::BehindCamera)?;
        let d2 = (p - b).norm_squared();
        acc += match mode {
            RmseMode::Standard => d2,
            RmseMode::Literal => d2.sqrt(),
        };
    }
    Ok((acc / pairs.len() as f64).sqrt())
}

/// Singular values of the centered 3D point cloud, descending.
fn spread(points: &[Point3]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov
        .symmetric_eigenvalues()
        .iter()
        .map(|v| (v.max(0.0) / n).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// Start rotations: every combination of the per-axis seeds, ordered by how
/// many axes are tilted (identity first), then lexicographically.
fn rotation_starts(seeds: &[f64]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for &a in seeds {
        for &b in seeds {
            for &c in seeds {
                out.push([a, b, c]);
            }
        }
    }
    let tilted = |r: &[f64; 3]| r.iter().filter(|v| **v != 0.0).count();
    // stable sort keeps the enumeration order inside each tilt class
    out.sort_by_key(tilted);
    out.dedup();
    out
}

/// The deterministic start grid: the first `max_starts / |focal grid|`
/// rotation starts, each crossed with every focal length.
pub fn start_grid(opts: &SolverOptions) -> Vec<([f64; 3], f64)> {
    let rots = rotation_starts(&opts.rotation_seeds_deg);
    let per_focal = (opts.max_starts / opts.focal_grid_mm.len().max(1)).max(1);
    let mut starts = Vec::new();
    for r in rots.into_iter().take(per_focal) {
        for &f in &opts.focal_grid_mm {
            starts.push((r, f));
        }
    }
    starts.truncate(opts.max_starts.max(1));
    starts
}

/// Closed-form translation for a fixed rotation and focal length.
fn initial_translation(
    pairs: &[(Point3, Point2)],
    rot: &Matrix3<f64>,
    focal_px: f64,
    ic: &IntrinsicConventions,
) -> Option<Vector3<f64>> {
    let [cx, cy] = ic.principal_point;
    // F*(r1.p + tx) - (u - cx)*(r3.p + tz') = 0, same for v with r2 and ty
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (a, b) in pairs {
        let q = rot * a.coords;
        let du = b.x - cx;
        let dv = b.y - cy;
        let rows = [
            (Vector3::new(focal_px, 0.0, -du), du * q.z - focal_px * q.x),
            (Vector3::new(0.0, focal_px, -dv), dv * q.z - focal_px * q.y),
        ];
        for (row, rhs) in rows {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    let t = ata.lu().solve(&atb)?;
    // t.z is the absolute depth offset; convert back to tz
    Some(Vector3::new(t.x, t.y, t.z - ic.base_standoff_mm))
}

struct Problem<'a> {
    pairs: &'a [(Point3, Point2)],
    ic: &'a IntrinsicConventions,
}

impl Problem<'_> {
    /// Half the sum of squared residuals, `None` if any point is behind the camera
    /// or the focal length is not positive.
    fn cost(&self, x: &Vec7) -> Option<f64> {
        if !(x[6] > 0.0) || !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let proj = Projector::new(&CameraParams::from_slice(x.as_slice()), self.ic);
        let mut acc = 0.0;
        for (a, b) in self.pairs {
            let p = proj.project(a).ok()?;
            acc += (p - b).norm_squared();
        }
        Some(0.5 * acc)
    }

    /// Gauss-Newton normal equations `(J^T J, J^T r)` at `x`.
    fn normal_equations(&self, x: &Vec7) -> (Mat7, Vec7) {
        let k = std::f64::consts::PI / 180.0;
        let (ax, ay, az) = (x[3] * k, x[4] * k, x[5] * k);
        let (rx, ry, rz) = (rot_x(ax), rot_y(ay), rot_z(az));
        let rot = rz * ry * rx;
        let drx = rz * ry * d_rot_x(ax) * k;
        let dry = rz * d_rot_y(ay) * rx * k;
        let drz = d_rot_z(az) * ry * rx * k;
        let t = Vector3::new(x[0], x[1], x[2] + self.ic.base_standoff_mm);
        let m = self.ic.pixel_scale();
        let focal = m * x[6];
        let [cx, cy] = self.ic.principal_point;

        let mut jtj = Mat7::zeros();
        let mut jtr = Vec7::zeros();
        for (a, b) in self.pairs {
            let q = rot * a.coords + t;
            let iz = 1.0 / q.z;
            let u = cx + focal * q.x * iz;
            let v = cy + focal * q.y * iz;
            let du_dq = Vector3::new(focal * iz, 0.0, -focal * q.x * iz * iz);
            let dv_dq = Vector3::new(0.0, focal * iz, -focal * q.y * iz * iz);
            let dq = [
                Vector3::x(),
                Vector3::y(),
                Vector3::z(),
                drx * a.coords,
                dry * a.coords,
                drz * a.coords,
            ];
            let mut ju = Vec7::zeros();
            let mut jv = Vec7::zeros();
            for (i, d) in dq.iter().enumerate() {
                ju[i] = du_dq.dot(d);
                jv[i] = dv_dq.dot(d);
            }
            ju[6] = m * q.x * iz;
            jv[6] = m * q.y * iz;
            let (ru, rv) = (u - b.x, v - b.y);
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        (jtj, jtr)
    }
}

struct LmResult {
    x: Vec7,
    cost: f64,
    converged: bool,
}

/// Levenberg-Marquardt with multiplicative Marquardt damping. Only steps
/// that lower the cost are accepted, so the accepted cost sequence is
/// non-increasing.
fn levenberg_marquardt(problem: &Problem, x0: Vec7, opts: &SolverOptions) -> Option<LmResult> {
    let mut x = x0;
    let mut cost = problem.cost(&x)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let (jtj, g) = problem.normal_equations(&x);
        if g.norm() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..CAMERA_DIM {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = x + step;
            match problem.cost(&candidate) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    x = candidate;
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel < opts.relative_cost_tolerance {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted || converged {
            break;
        }
    }
    Some(LmResult { x, cost, converged })
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), PnpError> {
        if self.min_pairs < 4 {
            return Err(PnpError::InvalidOptions("min_pairs must be at least 4".into()));
        }
        if self.focal_grid_mm.is_empty() || self.focal_grid_mm.iter().any(|f| !(*f > 0.0)) {
            return Err(PnpError::InvalidOptions("focal grid must be non-empty and positive".into()));
        }
        if self.rotation_seeds_deg.is_empty() || self.max_starts == 0 {
            return Err(PnpError::InvalidOptions("need at least one start".into()));
        }
        if self.max_iterations == 0 {
            return Err(PnpError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Recovers camera pose and focal length from landmark pairs.
pub fn solve_pnpf(
    pairs: &[(Point3, Point2)],
    ic: &IntrinsicConventions,
    opts: &SolverOptions,
) -> Result<PnPSolution, PnpError> {
    opts.validate()?;
    if pairs.len() < opts.min_pairs {
        return Err(PnpError::TooFewPairs {
            found: pairs.len(),
            required: opts.min_pairs,
        });
    }
    if pairs
        .iter()
        .any(|(a, b)| !a.coords.iter().chain(b.coords.iter()).all(|v| v.is_finite()))
    {
        return Err(PnpError::InvalidOptions("non-finite landmark coordinates".into()));
    }
    let points: Vec<Point3> = pairs.iter().map(|p| p.0).collect();
    let sv = spread(&points);
    if sv[0] < 1e-9 || sv[1] < 1e-9 * sv[0].max(1.0) {
        return Err(PnpError::Degenerate);
    }
    let coplanar = sv[2] < opts.coplanar_tolerance_mm;

    let problem = Problem { pairs, ic };
    let starts = start_grid(opts);
    let mut best: Option<LmResult> = None;
    for (rot, f) in &starts {
        let r = crate::camera::rotation_matrix(rot[0], rot[1], rot[2]);
        let Some(t) = initial_translation(pairs, &r, ic.pixel_scale() * f, ic) else {
            continue;
        };
        let x0 = Vec7::from_column_slice(&[t.x, t.y, t.z, rot[0], rot[1], rot[2], *f]);
        let Some(res) = levenberg_marquardt(&problem, x0, opts) else {
            continue;
        };
        if best.as_ref().map_or(true, |b| res.cost < b.cost) {
            best = Some(res);
        }
    }
    let best = best.ok_or(PnpError::NoValidStart)?;
    let params = CameraParams::from_slice(best.x.as_slice());
    let rmse_px = reprojection_rmse(pairs, &params, ic, opts.rmse_mode)?;
    Ok(PnPSolution {
        params,
        rmse_px,
        n_pairs: pairs.len(),
        converged: best.converged,
        restarts_used: starts.len(),
        coplanar,
    })
}

/// Pairs, solves and scores one (photograph, mesh) landmark comparison.
/// Pairing and solver failures become an unscorable outcome.
pub fn score_landmark_comparison(
    mesh_landmarks: &LandmarkSet3D,
    photo_landmarks: &LandmarkSet2D,
    subset: LandmarkSubset,
    ic: &IntrinsicConventions,
    opts: &SolverOptions,
) -> ComparisonOutcome {
    let pairs = match pair_landmarks(mesh_landmarks, photo_landmarks, subset, opts.min_pairs) {
        Ok(p) => p,
        Err(e @ LandmarkError::TooFewPairs { .. }) => {
            return ComparisonOutcome::Unscorable {
                reason: e.to_string(),
            }
        }
        Err(e) => {
            return ComparisonOutcome::Unscorable {
                reason: e.to_string(),
            }
        }
    };
    match solve_pnpf(&pairs, ic, opts) {
        Ok(sol) => {
            let mut notes = Vec::new();
            if sol.coplanar {
                notes.push("coplanar landmarks");
            }
            if !sol.converged {
                notes.push("solver did not converge");
            }
            ComparisonOutcome::Scored {
                score: sol.rmse_px,
                params: sol.params,
                restarts: sol.restarts_used as u32,
                evaluations: sol.n_pairs as u64,
                seed: None,
                note: (!notes.is_empty()).then(|| notes.join("; ")),
            }
        }
        Err(e) => ComparisonOutcome::Unscorable {
            reason: e.to_string(),
        },
    }
}
