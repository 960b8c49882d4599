//! Triangulated dental meshes: loading, normalization and OBJ export.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use thiserror::Error;

use crate::camera::Point3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to parse mesh {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("mesh {0} has no triangles")]
    EmptyMesh(String),
    #[error("unsupported mesh format for {0} (expected .obj or .ply)")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A triangulated tooth-region mesh.
///
/// After [`DentalMesh::normalize`] the vertex centroid sits at the model
/// origin and the removed offset is kept in `centroid_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct DentalMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub centroid_offset: Vector3<f64>,
}

impl DentalMesh {
    /// Builds a mesh after checking every triangle index and rejecting
    /// triangles whose three indices are identical.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self, String> {
        let n = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if let Some(bad) = t.iter().find(|&&ix| ix as usize >= n) {
                return Err(format!(
                    "triangle {i} references vertex {bad} but the mesh has {n} vertices"
                ));
            }
            if t[0] == t[1] && t[1] == t[2] {
                return Err(format!("triangle {i} is degenerate (indices {t:?})"));
            }
        }
        if let Some(p) = vertices.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(format!("non-finite vertex {p:?}"));
        }
        Ok(Self {
            vertices,
            triangles,
            centroid_offset: Vector3::zeros(),
        })
    }

    pub fn vertex_centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        sum / self.vertices.len() as f64
    }

    /// Moves the vertex centroid to the origin, accumulating the shift into
    /// `centroid_offset`.
    pub fn normalize(&mut self) {
        let c = self.vertex_centroid();
        for v in &mut self.vertices {
            v.coords -= c;
        }
        self.centroid_offset += c;
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Keeps only the listed triangles.
    pub fn with_triangles(&self, keep: impl IntoIterator<Item = usize>) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: keep.into_iter().map(|i| self.triangles[i]).collect(),
            centroid_offset: self.centroid_offset,
        }
    }

    /// Serializes to Wavefront OBJ text.
    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 32 + self.triangles.len() * 16);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> std::io::Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_obj_string().as_bytes())
    }
}

/// Loads an OBJ or PLY mesh, validates it and centers it on its vertex centroid.
pub fn load_mesh(path: &Path) -> Result<DentalMesh, MeshError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let display = path.display().to_string();
    let (vertices, triangles) = match ext.as_deref() {
        Some("obj") => read_obj(path)?,
        Some("ply") => read_ply(path)?,
        _ => return Err(MeshError::UnsupportedFormat(display)),
    };
    if triangles.is_empty() {
        return Err(MeshError::EmptyMesh(display));
    }
    let mesh = DentalMesh::new(vertices, triangles).map_err(|reason| MeshError::Parse {
        path: display,
        reason,
    })?;
    Ok(mesh.normalized())
}

type RawMesh = (Vec<Point3>, Vec<[u32; 3]>);

fn parse_err(path: &Path, reason: impl ToString) -> MeshError {
    MeshError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn read_obj(path: &Path) -> Result<RawMesh, MeshError> {
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: false,
        ignore_points: true,
        ignore_lines: true,
    };
    let mut reader = BufReader::new(File::open(path)?);
    let (models, _materials) =
        tobj::load_obj_buf(&mut reader, &opts, |_| Ok(Default::default()))
            .map_err(|e| parse_err(path, e))?;

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for model in models {
        let base = vertices.len() as u32;
        let pos = &model.mesh.positions;
        vertices.extend(pos.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])));
        triangles.extend(
            model
                .mesh
                .indices
                .chunks_exact(3)
                .map(|t| [t[0] + base, t[1] + base, t[2] + base]),
        );
    }
    Ok((vertices, triangles))
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&x| x as i64).collect(),
        _ => return None,
    })
}

fn read_ply(path: &Path) -> Result<RawMesh, MeshError> {
    let mut reader = BufReader::new(File::open(path)?);
    let parser = Parser::<DefaultElement>::new();
    let ply = parser
        .read_ply(&mut reader)
        .map_err(|e| parse_err(path, e))?;

    let verts = ply
        .payload
        .get("vertex")
        .ok_or_else(|| parse_err(path, "missing vertex element"))?;
    let mut vertices = Vec::with_capacity(verts.len());
    for (i, v) in verts.iter().enumerate() {
        let coord = |k: &str| {
            v.get(k)
                .and_then(scalar)
                .ok_or_else(|| parse_err(path, format!("vertex {i} lacks numeric '{k}'")))
        };
        vertices.push(Point3::new(coord("x")?, coord("y")?, coord("z")?));
    }

    let mut triangles = Vec::new();
    if let Some(faces) = ply.payload.get("face") {
        for (i, face) in faces.iter().enumerate() {
            let idx = face
                .get("vertex_indices")
                .or_else(|| face.get("vertex_index"))
                .and_then(index_list)
                .ok_or_else(|| parse_err(path, format!("face {i} lacks a vertex index list")))?;
            if idx.len() < 3 {
                return Err(parse_err(path, format!("face {i} has fewer than 3 vertices")));
            }
            if let Some(bad) = idx.iter().find(|&&x| x < 0 || x as usize >= vertices.len()) {
                return Err(parse_err(
                    path,
                    format!("face {i} references vertex {bad} out of range"),
                ));
            }
            // fan triangulation for polygons
            for k in 1..idx.len() - 1 {
                triangles.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
            }
        }
    }
    Ok((vertices, triangles))
}
