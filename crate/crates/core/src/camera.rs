//! Seven-parameter perspective camera.
//!
//! A pose is three translations (mm), three rotations (degrees) and a focal
//! length (mm). Everything else about the camera is fixed by
//! [`IntrinsicConventions`]: a 36 mm wide sensor with square pixels, the
//! principal point at the image center and a base standoff `Z0` that is added
//! to `tz` so the translation range can be centered on zero.
//!
//! Model points are rotated by `Rz * Ry * Rx` (extrinsic axes), translated by
//! `(tx, ty, tz + Z0)` and projected onto a camera sitting at the origin and
//! looking down `+Z`, with `u` growing rightwards and `v` growing downwards.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Point2 = nalgebra::Point2<f64>;

/// Number of optimization variables in a [`CameraParams`].
pub const CAMERA_DIM: usize = 7;

/// Default near plane distance in millimeters.
pub const DEFAULT_Z_NEAR_MM: f64 = 1.0;

/// Default base standoff in millimeters.
pub const DEFAULT_BASE_STANDOFF_MM: f64 = 400.0;

/// Full-frame sensor width in millimeters.
pub const DEFAULT_SENSOR_WIDTH_MM: f64 = 36.0;

/// The seven optimization variables of a registration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    /// Translation along X in millimeters.
    pub tx: f64,
    /// Translation along Y in millimeters.
    pub ty: f64,
    /// Translation along Z in millimeters, relative to the base standoff.
    pub tz: f64,
    /// Rotation about the model X axis in degrees.
    pub rx: f64,
    /// Rotation about the model Y axis in degrees.
    pub ry: f64,
    /// Rotation about the model Z axis in degrees.
    pub rz: f64,
    /// Focal length in millimeters.
    pub f: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
            rx: 0.0,
            ry: 0.0,
            rz: 0.0,
            f: 50.0,
        }
    }
}

impl CameraParams {
    /// Parameters in canonical order `[tx, ty, tz, rx, ry, rz, f]`.
    pub fn to_array(&self) -> [f64; CAMERA_DIM] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz, self.f]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), CAMERA_DIM, "camera parameter vector must have 7 entries");
        Self {
            tx: v[0],
            ty: v[1],
            tz: v[2],
            rx: v[3],
            ry: v[4],
            rz: v[5],
            f: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Rotation matrix `Rz * Ry * Rx`.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.rx, self.ry, self.rz)
    }

    /// Optimizer search bounds `(lower, upper)` in canonical parameter order.
    pub fn search_bounds() -> [(f64, f64); CAMERA_DIM] {
        [
            (-150.0, 150.0),
            (-150.0, 150.0),
            (-150.0, 150.0),
            (-90.0, 90.0),
            (-90.0, 90.0),
            (-90.0, 90.0),
            (10.0, 200.0),
        ]
    }

    /// Whether every parameter lies inside [`CameraParams::search_bounds`].
    pub fn within_search_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(Self::search_bounds())
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }
}

/// Elementary rotations composed as `Rz * Ry * Rx`, angles in degrees.
pub fn rotation_matrix(rx_deg: f64, ry_deg: f64, rz_deg: f64) -> Matrix3<f64> {
    rot_z(rz_deg.to_radians()) * rot_y(ry_deg.to_radians()) * rot_x(rx_deg.to_radians())
}

pub(crate) fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub(crate) fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

pub(crate) fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

pub(crate) fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

#[derive(Debug, Error, PartialEq)]
pub enum IntrinsicsError {
    #[error("sensor width must be positive, got {0}")]
    SensorWidth(f64),
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    ImageSize(u32, u32),
    #[error("principal point ({0}, {1}) lies outside the image")]
    PrincipalPoint(f64, f64),
    #[error("near plane must be positive and finite, got {0}")]
    NearPlane(f64),
    #[error("base standoff must be finite, got {0}")]
    Standoff(f64),
}

/// Fixed camera conventions shared by every pose of one photograph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConventions {
    pub image_width_px: u32,
    pub image_height_px: u32,
    pub sensor_width_mm: f64,
    /// Principal point `(cx, cy)` in pixels.
    pub principal_point: [f64; 2],
    /// Base standoff `Z0` added to `tz`, in millimeters.
    pub base_standoff_mm: f64,
    pub z_near_mm: f64,
}

impl IntrinsicConventions {
    /// Default conventions for an image of the given size: 36 mm sensor,
    /// centered principal point, 400 mm standoff, 1 mm near plane.
    pub fn for_image(width: u32, height: u32) -> Self {
        Self {
            image_width_px: width,
            image_height_px: height,
            sensor_width_mm: DEFAULT_SENSOR_WIDTH_MM,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            base_standoff_mm: DEFAULT_BASE_STANDOFF_MM,
            z_near_mm: DEFAULT_Z_NEAR_MM,
        }
    }

    /// Pixels per millimeter on the sensor.
    pub fn pixel_scale(&self) -> f64 {
        self.image_width_px as f64 / self.sensor_width_mm
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        if !(self.sensor_width_mm > 0.0) || !self.sensor_width_mm.is_finite() {
            return Err(IntrinsicsError::SensorWidth(self.sensor_width_mm));
        }
        if self.image_width_px == 0 || self.image_height_px == 0 {
            return Err(IntrinsicsError::ImageSize(self.image_width_px, self.image_height_px));
        }
        let [cx, cy] = self.principal_point;
        if !(cx >= 0.0
            && cx <= self.image_width_px as f64
            && cy >= 0.0
            && cy <= self.image_height_px as f64)
        {
            return Err(IntrinsicsError::PrincipalPoint(cx, cy));
        }
        if !(self.z_near_mm > 0.0) || !self.z_near_mm.is_finite() {
            return Err(IntrinsicsError::NearPlane(self.z_near_mm));
        }
        if !self.base_standoff_mm.is_finite() {
            return Err(IntrinsicsError::Standoff(self.base_standoff_mm));
        }
        Ok(())
    }

    /// Same conventions resized to another image, principal point re-centered.
    pub fn with_image_size(&self, width: u32, height: u32) -> Self {
        Self {
            image_width_px: width,
            image_height_px: height,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            ..*self
        }
    }
}

impl Default for IntrinsicConventions {
    fn default() -> Self {
        Self::for_image(1000, 1000)
    }
}

/// The point landed at or behind the near plane.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("point is behind the camera (camera-frame depth {depth} mm)")]
pub struct BehindCamera {
    pub depth: f64,
}

/// Transforms a model point into the camera frame: `R * p + (tx, ty, tz + Z0)`.
pub fn to_camera_frame(p: &Point3, c: &CameraParams, ic: &IntrinsicConventions) -> Point3 {
    Projector::new(c, ic).to_camera_frame(p)
}

/// Projects a model point to pixel coordinates.
pub fn project(
    p: &Point3,
    c: &CameraParams,
    ic: &IntrinsicConventions,
) -> Result<Point2, BehindCamera> {
    Projector::new(c, ic).project(p)
}

/// Element-wise [`project`], preserving input order.
pub fn project_all(
    points: &[Point3],
    c: &CameraParams,
    ic: &IntrinsicConventions,
) -> Vec<Result<Point2, BehindCamera>> {
    let proj = Projector::new(c, ic);
    points.iter().map(|p| proj.project(p)).collect()
}

/// A pose and intrinsics folded into a rotation, a translation and a pixel
/// focal length, for projecting many points under one camera.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    focal_px: f64,
    cx: f64,
    cy: f64,
    z_near: f64,
}

impl Projector {
    pub fn new(c: &CameraParams, ic: &IntrinsicConventions) -> Self {
        Self {
            rotation: c.rotation(),
            translation: Vector3::new(c.tx, c.ty, c.tz + ic.base_standoff_mm),
            focal_px: ic.pixel_scale() * c.f,
            cx: ic.principal_point[0],
            cy: ic.principal_point[1],
            z_near: ic.z_near_mm,
        }
    }

    #[inline]
    pub fn to_camera_frame(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn project(&self, p: &Point3) -> Result<Point2, BehindCamera> {
        let q = self.to_camera_frame(p);
        self.project_camera_frame(&q)
    }

    #[inline]
    pub fn project_camera_frame(&self, q: &Point3) -> Result<Point2, BehindCamera> {
        if !(q.z >= self.z_near) {
            return Err(BehindCamera { depth: q.z });
        }
        let inv_z = 1.0 / q.z;
        Ok(Point2::new(
            self.cx + self.focal_px * q.x * inv_z,
            self.cy + self.focal_px * q.y * inv_z,
        ))
    }

    /// Focal length expressed in pixels.
    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }
}
