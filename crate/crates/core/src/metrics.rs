//! Reconstruction quality metrics on sampled surfaces and voxelized volumes.
//!
//! Point metrics use exact nearest neighbours. Chamfer distance is the mean of
//! the two directed mean (non-squared) nearest-neighbour distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{sample_surface, InsideTester, MeshError, PointSample, SpatialIndex, TriangleMesh};
use crate::optimizer::derive_seed;
use crate::vec3::Vec3;

pub const DEFAULT_POINTS: usize = 100_000;
pub const DEFAULT_IOU_RESOLUTION: usize = 128;
/// F1 threshold as a fraction of the ground truth's longest bounding-box side.
pub const DEFAULT_F1_FRACTION: f64 = 0.01;
/// Relative padding of the IoU voxel box.
const IOU_PADDING: f64 = 0.02;
const SAMPLE_STREAM: u64 = 11;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point set '{0}' is empty")]
    EmptySet(&'static str),
    #[error("sample {index} of '{set}' has no normal")]
    MissingNormal { set: &'static str, index: usize },
    #[error("F1 threshold must be finite and > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("voxel resolution must be >= 8, got {0}")]
    InvalidResolution(usize),
    #[error("{which} mesh: {source}")]
    Mesh {
        which: &'static str,
        #[source]
        source: MeshError,
    },
}

/// Nearest-neighbour distances in both directions between two point sets.
#[derive(Clone, Debug)]
pub struct NearestPairs {
    /// For every point of `a`, distance to and id of its nearest point in `b`.
    pub a_to_b: Vec<(f64, usize)>,
    pub b_to_a: Vec<(f64, usize)>,
}

impl NearestPairs {
    pub fn compute(a: &[Vec3], b: &[Vec3]) -> Result<Self, MetricError> {
        if a.is_empty() {
            return Err(MetricError::EmptySet("a"));
        }
        if b.is_empty() {
            return Err(MetricError::EmptySet("b"));
        }
        let index_a = SpatialIndex::new(a.to_vec());
        let index_b = SpatialIndex::new(b.to_vec());
        Ok(NearestPairs {
            a_to_b: index_b.nearest_many(a),
            b_to_a: index_a.nearest_many(b),
        })
    }

    pub fn chamfer(&self) -> f64 {
        0.5 * mean_distance(&self.a_to_b) + 0.5 * mean_distance(&self.b_to_a)
    }

    pub fn hausdorff(&self) -> f64 {
        max_distance(&self.a_to_b).max(max_distance(&self.b_to_a))
    }

    /// With `a` the prediction and `b` the ground truth.
    pub fn f1(&self, threshold: f64) -> F1Score {
        let within = |d: &[(f64, usize)]| 100.0 * d.iter().filter(|(x, _)| *x <= threshold).count() as f64 / d.len() as f64;
        F1Score::from_precision_recall(within(&self.a_to_b), within(&self.b_to_a))
    }

    /// Symmetric mean of `|n_a . n_b|` over nearest-neighbour pairs.
    pub fn normal_consistency(&self, a: &[PointSample], b: &[PointSample]) -> Result<f64, MetricError> {
        let na = normals(a, "a")?;
        let nb = normals(b, "b")?;
        let side = |pairs: &[(f64, usize)], from: &[Vec3], to: &[Vec3]| {
            pairs
                .iter()
                .zip(from)
                .map(|(&(_, id), n)| n.dot(to[id]).abs().min(1.0))
                .sum::<f64>()
                / pairs.len() as f64
        };
        Ok(0.5 * side(&self.a_to_b, &na, &nb) + 0.5 * side(&self.b_to_a, &nb, &na))
    }
}

fn normals(samples: &[PointSample], set: &'static str) -> Result<Vec<Vec3>, MetricError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| s.normal.ok_or(MetricError::MissingNormal { set, index }))
        .collect()
}

fn mean_distance(d: &[(f64, usize)]) -> f64 {
    d.iter().map(|(x, _)| x).sum::<f64>() / d.len() as f64
}

fn max_distance(d: &[(f64, usize)]) -> f64 {
    d.iter().map(|(x, _)| *x).fold(0.0, f64::max)
}

fn positions(s: &[PointSample]) -> Vec<Vec3> {
    s.iter().map(|p| p.position).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    /// Percentages.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl F1Score {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        F1Score { f1, precision, recall }
    }
}

pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    Ok(NearestPairs::compute(a, b)?.chamfer())
}

pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    Ok(NearestPairs::compute(a, b)?.hausdorff())
}

pub fn f1_score(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<F1Score, MetricError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    Ok(NearestPairs::compute(pred, gt)?.f1(threshold))
}

pub fn normal_consistency(pred: &[PointSample], gt: &[PointSample]) -> Result<f64, MetricError> {
    NearestPairs::compute(&positions(pred), &positions(gt))?.normal_consistency(pred, gt)
}

/// Voxel box used by [`iou_voxel`]: the union bounding box padded by 2% of
/// its longest side and grown to a cube. Returns `(lower corner, side)`.
pub fn iou_box(a: &TriangleMesh, b: &TriangleMesh) -> Option<(Vec3, f64)> {
    let (alo, ahi) = a.bounds()?;
    let (blo, bhi) = b.bounds()?;
    let (lo, hi) = (alo.min(blo), ahi.max(bhi));
    let center = (lo + hi) * 0.5;
    let side = (hi - lo).max_component() * (1.0 + 2.0 * IOU_PADDING);
    if !(side > 0.0) {
        return None;
    }
    Some((center - Vec3::splat(0.5 * side), side))
}

/// Volumetric IoU of two watertight meshes from occupancy at voxel centers.
pub fn iou_voxel(pred: &TriangleMesh, gt: &TriangleMesh, resolution: usize) -> Result<f64, MetricError> {
    if resolution < 8 {
        return Err(MetricError::InvalidResolution(resolution));
    }
    let tester = |m: &TriangleMesh, which| InsideTester::new(m).map_err(|source| MetricError::Mesh { which, source });
    let tp = tester(pred, "predicted")?;
    let tg = tester(gt, "ground-truth")?;
    let Some((lo, side)) = iou_box(pred, gt) else {
        return Ok(0.0);
    };
    let h = side / resolution as f64;
    let centre = |i: usize| (i as f64 + 0.5) * h;
    let xs: Vec<f64> = (0..resolution).map(|i| lo.x + centre(i)).collect();
    let (inter, union) = (0..resolution * resolution)
        .into_par_iter()
        .map(|row| {
            let (j, k) = (row % resolution, row / resolution);
            let (y, z) = (lo.y + centre(j), lo.z + centre(k));
            let (mut a, mut b) = (Vec::new(), Vec::new());
            tp.classify_row(y, z, &xs, &mut a);
            tg.classify_row(y, z, &xs, &mut b);
            a.iter().zip(&b).fold((0u64, 0u64), |(i, u), (&p, &g)| (i + (p && g) as u64, u + (p || g) as u64))
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Surface samples per mesh.
    pub points: usize,
    /// `None` skips IoU.
    pub iou_resolution: Option<usize>,
    pub f1_fraction: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            points: DEFAULT_POINTS,
            iou_resolution: Some(DEFAULT_IOU_RESOLUTION),
            f1_fraction: DEFAULT_F1_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_threshold: f64,
    pub normal_consistency: f64,
    pub iou: Option<f64>,
    pub sample_count: usize,
    pub voxel_resolution: Option<usize>,
    pub seed: u64,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str =
        "chamfer\thausdorff\tf1\tprecision\trecall\tnormal_consistency\tiou\tsample_count\tvoxel_resolution";

    /// One tab-separated line with the nine fields of [`Self::TSV_HEADER`];
    /// skipped IoU fields are written as `NA`.
    pub fn tsv_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".to_string());
        [
            format!("{:.9e}", self.chamfer),
            format!("{:.9e}", self.hausdorff),
            format!("{:.6}", self.f1),
            format!("{:.6}", self.precision),
            format!("{:.6}", self.recall),
            format!("{:.9}", self.normal_consistency),
            opt(self.iou.map(|v| format!("{v:.9}"))),
            self.sample_count.to_string(),
            opt(self.voxel_resolution.map(|v| v.to_string())),
        ]
        .join("\t")
    }
}

/// Samples both meshes and computes every metric.
pub fn evaluate_pair(pred: &TriangleMesh, gt: &TriangleMesh, config: &MetricConfig) -> Result<MetricReport, MetricError> {
    // Both meshes use the same sample stream, so identical inputs give
    // identical point sets and exactly perfect scores.
    let sample = |m: &TriangleMesh, which| {
        sample_surface(m, config.points, derive_seed(config.seed, SAMPLE_STREAM)).map_err(|source| MetricError::Mesh { which, source })
    };
    let (gt_lo, gt_hi) = gt.bounds().ok_or(MetricError::Mesh {
        which: "ground-truth",
        source: MeshError::Empty,
    })?;
    let threshold = config.f1_fraction * (gt_hi - gt_lo).max_component();
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    let iou = match config.iou_resolution {
        Some(res) => Some(iou_voxel(pred, gt, res)?),
        None => None,
    };
    let ps = sample(pred, "predicted")?;
    let gs = sample(gt, "ground-truth")?;
    let pairs = NearestPairs::compute(&positions(&ps), &positions(&gs))?;
    let f1 = pairs.f1(threshold);
    Ok(MetricReport {
        chamfer: pairs.chamfer(),
        hausdorff: pairs.hausdorff(),
        f1: f1.f1,
        precision: f1.precision,
        recall: f1.recall,
        f1_threshold: threshold,
        normal_consistency: pairs.normal_consistency(&ps, &gs)?,
        iou,
        sample_count: config.points,
        voxel_resolution: config.iou_resolution,
        seed: config.seed,
    })
}
