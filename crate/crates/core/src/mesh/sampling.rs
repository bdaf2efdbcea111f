use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InsideTester, MeshError, TriangleMesh};
use crate::vec3::Vec3;

/// Proposal budget for interior rejection sampling.
pub const MAX_INTERIOR_PROPOSALS: usize = 10_000_000;
const MIN_ACCEPTANCE_RATE: f64 = 1e-4;

/// A point on (or inside) a shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    pub normal: Option<Vec3>,
    pub source_face: Option<usize>,
}

impl PointSample {
    pub fn at(position: Vec3) -> Self {
        PointSample {
            position,
            normal: None,
            source_face: None,
        }
    }
}

/// Area-weighted uniform samples with flat face normals.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<PointSample>, MeshError> {
    if mesh.is_empty() {
        return Err(MeshError::Empty);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.triangle(face);
        let position = a + (b - a) * u + (c - a) * v;
        out.push(PointSample {
            position,
            normal: mesh.face_cross(face).normalized(),
            source_face: Some(face),
        });
    }
    Ok(out)
}

/// Rejection-samples `n` points inside a watertight mesh from its bounding box.
pub fn sample_interior(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<PointSample>, MeshError> {
    let tester = InsideTester::new(mesh)?;
    sample_interior_with(&tester, n, seed).map(|(s, _)| s)
}

/// Like [`sample_interior`] but reusing a tester; also returns the number of
/// proposals drawn.
pub(crate) fn sample_interior_with(
    tester: &InsideTester,
    n: usize,
    seed: u64,
) -> Result<(Vec<PointSample>, usize), MeshError> {
    let (lo, hi) = tester.bounds();
    let ext = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut proposals = 0usize;
    while out.len() < n {
        if proposals >= MAX_INTERIOR_PROPOSALS {
            return Err(MeshError::InteriorRejection {
                accepted: out.len(),
                proposals,
            });
        }
        proposals += 1;
        let p = lo + Vec3::new(ext.x * rng.random::<f64>(), ext.y * rng.random::<f64>(), ext.z * rng.random::<f64>());
        if tester.contains(p) {
            out.push(PointSample::at(p));
        }
        // Bail out early on hopeless shapes instead of burning the whole budget.
        if proposals % 1_000_000 == 0 && (out.len() as f64) < MIN_ACCEPTANCE_RATE * proposals as f64 {
            return Err(MeshError::InteriorRejection {
                accepted: out.len(),
                proposals,
            });
        }
    }
    Ok((out, proposals))
}
