//! Triangle meshes: loading, normalization, sampling and inside tests.

mod inside;
mod io;
mod kdtree;
mod sampling;
pub mod shapes;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::Vec3;

pub use inside::InsideTester;
pub use io::{load_mesh, parse_obj, parse_ply, save_obj, write_obj};
pub use kdtree::SpatialIndex;
pub use sampling::{sample_interior, sample_surface, PointSample, MAX_INTERIOR_PROPOSALS};
pub(crate) use sampling::sample_interior_with;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    ParseLine { line: usize, message: String },
    #[error("parse error at byte {offset}: {message}")]
    ParseByte { offset: usize, message: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
    #[error("normal array length {normals} does not match vertex count {vertices}")]
    NormalCount { normals: usize, vertices: usize },
    #[error("mesh has no faces")]
    Empty,
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("mesh is not watertight: {bad_edges} edges are not shared by exactly two faces")]
    NotWatertight { bad_edges: usize },
    #[error("interior sampling accepted {accepted} of {proposals} proposals; the shape is too thin")]
    InteriorRejection { accepted: usize, proposals: usize },
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

/// `x -> scale * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: Vec3,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        scale: 1.0,
        translation: Vec3::ZERO,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Similarity {
        Similarity {
            scale: 1.0 / self.scale,
            translation: -self.translation / self.scale,
        }
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        (p - self.translation) / self.scale
    }
}

impl TriangleMesh {
    /// Builds a mesh, validating face indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i as usize,
                        count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace(fi));
            }
        }
        Ok(TriangleMesh {
            vertices,
            faces,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self, MeshError> {
        if normals.len() != self.vertices.len() {
            return Err(MeshError::NormalCount {
                normals: normals.len(),
                vertices: self.vertices.len(),
            });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds of the referenced and unreferenced vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Number of undirected edges not shared by exactly two faces.
    pub fn boundary_edge_count(&self) -> usize {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts.values().filter(|&&c| c != 2).count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.boundary_edge_count() == 0
    }

    pub fn check_watertight(&self) -> Result<(), MeshError> {
        if self.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        match self.boundary_edge_count() {
            0 => Ok(()),
            bad_edges => Err(MeshError::NotWatertight { bad_edges }),
        }
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a as usize],
                    self.vertices[b as usize],
                    self.vertices[c as usize],
                );
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, t: &Similarity) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| t.apply(v)).collect(),
            faces: self.faces.clone(),
            normals: if t.scale > 0.0 {
                self.normals.clone()
            } else {
                self.normals
                    .as_ref()
                    .map(|n| n.iter().map(|&v| -v).collect())
            },
        }
    }

    pub fn translated(&self, t: Vec3) -> TriangleMesh {
        self.transformed(&Similarity {
            scale: 1.0,
            translation: t,
        })
    }

    /// Centers the bounding box at the origin and scales its longest side to 1.
    pub fn normalize_to_unit_cube(&self) -> Result<(TriangleMesh, Similarity), MeshError> {
        let (lo, hi) = self.bounds().ok_or(MeshError::Empty)?;
        if self.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let longest = (hi - lo).max_component();
        if !(longest > 0.0) {
            return Err(MeshError::ZeroArea);
        }
        let scale = 1.0 / longest;
        let center = (lo + hi) * 0.5;
        let t = Similarity {
            scale,
            translation: -center * scale,
        };
        Ok((self.transformed(&t), t))
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|&v| -v).collect()),
        }
    }

    /// Disjoint union of two meshes.
    pub fn merged(&self, other: &TriangleMesh) -> TriangleMesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
        TriangleMesh {
            vertices,
            faces,
            normals: None,
        }
    }
}

/// Distance from `p` to the closed triangle `abc`.
pub fn point_triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    // Ericson, closest point on triangle.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return p.distance(a);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return p.distance(b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return p.distance(a + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return p.distance(c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return p.distance(a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return p.distance(b + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    p.distance(a + ab * v + ac * w)
}
