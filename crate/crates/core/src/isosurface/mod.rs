//! Dense field sampling, iso-surface extraction and planar slices.

mod marching;
mod slice;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use marching::{case_loops, marching_cubes, marching_cubes_with};
pub use slice::{marching_squares, slice_field, Contour, SliceAxis, SliceImage};

use crate::exec::Execution;
use crate::field::ChargeSet;
use crate::vec3::Vec3;

/// Half-width of the default sampling cube: the normalized shape cube
/// `[-0.5, 0.5]^3` padded by 10%.
pub const DEFAULT_HALF_EXTENT: f64 = 0.55;
pub const DEFAULT_RESOLUTION: usize = 256;

/// Nodes evaluated per scheduling chunk.
const GRID_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must all be >= 2, got {0:?}")]
    InvalidDims([usize; 3]),
    #[error("grid spacing must be finite and > 0, got {0}")]
    InvalidSpacing(f64),
    #[error("grid origin must be finite")]
    InvalidOrigin,
    #[error("cannot allocate a grid of {nodes} nodes ({bytes} bytes)")]
    Allocation { nodes: usize, bytes: usize },
    #[error("grid values contain a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("value count {got} does not match dims {dims:?}")]
    ValueCount { got: usize, dims: [usize; 3] },
}

/// Regular cubic-cell lattice geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self, GridError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(GridError::InvalidDims(dims));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GridError::InvalidSpacing(spacing));
        }
        if !origin.is_finite() {
            return Err(GridError::InvalidOrigin);
        }
        Ok(GridSpec {
            origin,
            spacing,
            dims,
        })
    }

    /// `resolution^3` nodes spanning `[-half_extent, half_extent]^3`.
    pub fn centered_cube(half_extent: f64, resolution: usize) -> Result<Self, GridError> {
        let spacing = 2.0 * half_extent / (resolution.max(2) - 1) as f64;
        GridSpec::new(Vec3::splat(-half_extent), spacing, [resolution; 3])
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Inverse of [`GridSpec::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Same lattice moved by `t`.
    pub fn translated(&self, t: Vec3) -> GridSpec {
        GridSpec {
            origin: self.origin + t,
            ..*self
        }
    }
}

/// Field values on a [`GridSpec`], x varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.node_count() {
            return Err(GridError::ValueCount {
                got: values.len(),
                dims: spec.dims,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(ScalarGrid { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn origin(&self) -> Vec3 {
        self.spec.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spec.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Interior nodes whose value is strictly below all six axis neighbours.
    pub fn strict_interior_minima(&self) -> Vec<[usize; 3]> {
        let [nx, ny, nz] = self.spec.dims;
        let mut out = Vec::new();
        for k in 1..nz.saturating_sub(1) {
            for j in 1..ny.saturating_sub(1) {
                for i in 1..nx.saturating_sub(1) {
                    let v = self.at(i, j, k);
                    let neighbours = [
                        self.at(i - 1, j, k),
                        self.at(i + 1, j, k),
                        self.at(i, j - 1, k),
                        self.at(i, j + 1, k),
                        self.at(i, j, k - 1),
                        self.at(i, j, k + 1),
                    ];
                    if neighbours.iter().all(|&n| v < n) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }
}

/// Samples the field of `set` at every node of `spec`.
///
/// Values are written straight into the output array chunk by chunk; each
/// node is computed independently, so every execution mode gives the same
/// bits.
pub fn evaluate_grid(set: &ChargeSet, spec: &GridSpec, exec: Execution) -> Result<ScalarGrid, GridError> {
    let spec = GridSpec::new(spec.origin, spec.spacing, spec.dims)?;
    let nodes = spec
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(GridError::Allocation {
            nodes: usize::MAX,
            bytes: usize::MAX,
        })?;
    let alloc_err = || GridError::Allocation {
        nodes,
        bytes: nodes.saturating_mul(std::mem::size_of::<f64>()),
    };
    let mut values: Vec<f64> = Vec::new();
    values.try_reserve_exact(nodes).map_err(|_| alloc_err())?;
    values.resize(nodes, 0.0);

    let field = set.prepare();
    exec.fill_chunks(&mut values, GRID_CHUNK, |start, out| {
        for (offset, v) in out.iter_mut().enumerate() {
            let [i, j, k] = spec.coords(start + offset);
            *v = field.value(spec.position(i, j, k));
        }
    });
    ScalarGrid::new(spec, values)
}
