use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::marching::polygon_segments;
use super::GridError;
use crate::exec::Execution;
use crate::field::ChargeSet;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    fn index(self) -> usize {
        match self {
            SliceAxis::X => 0,
            SliceAxis::Y => 1,
            SliceAxis::Z => 2,
        }
    }

    /// In-plane axes `(u, v)` with `u x v` along the slice normal.
    pub fn plane_axes(self) -> (SliceAxis, SliceAxis) {
        match self {
            SliceAxis::X => (SliceAxis::Y, SliceAxis::Z),
            SliceAxis::Y => (SliceAxis::Z, SliceAxis::X),
            SliceAxis::Z => (SliceAxis::X, SliceAxis::Y),
        }
    }
}

impl FromStr for SliceAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(SliceAxis::X),
            "y" => Ok(SliceAxis::Y),
            "z" => Ok(SliceAxis::Z),
            other => Err(format!("unknown axis '{other}' (expected x, y or z)")),
        }
    }
}

/// An iso-line in plane coordinates `(u, v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub closed: bool,
    pub points: Vec<[f64; 2]>,
}

/// Field values on an axis-aligned square `extent` wide, centered on the
/// slice axis, together with the `tau` iso-lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    pub axis: SliceAxis,
    pub offset: f64,
    pub extent: f64,
    pub resolution: usize,
    pub u_axis: SliceAxis,
    pub v_axis: SliceAxis,
    pub tau: f64,
    pub min: f64,
    pub max: f64,
    /// Row-major, `u` varying fastest, row 0 at the lowest `v`.
    #[serde(skip)]
    pub values: Vec<f64>,
    pub contours: Vec<Contour>,
}

impl SliceImage {
    pub fn spacing(&self) -> f64 {
        self.extent / (self.resolution - 1) as f64
    }

    /// Plane coordinate of sample index `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.extent + i as f64 * self.spacing()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution + i]
    }

    /// World position of plane point `(u, v)`.
    pub fn world(&self, u: f64, v: f64) -> Vec3 {
        let mut p = [0.0; 3];
        p[self.axis.index()] = self.offset;
        p[self.u_axis.index()] = u;
        p[self.v_axis.index()] = v;
        Vec3::new(p[0], p[1], p[2])
    }

    /// ASCII PGM, values mapped linearly from `[min, max]` to `0..=255`,
    /// top row at the highest `v`.
    pub fn to_pgm(&self) -> String {
        let n = self.resolution;
        let mut out = String::with_capacity(n * n * 4 + 64);
        let _ = writeln!(out, "P2\n# axis {:?} offset {}\n{n} {n}\n255", self.axis, self.offset);
        let range = self.max - self.min;
        for j in (0..n).rev() {
            for (c, i) in (0..n).enumerate() {
                let level = if range > 0.0 {
                    ((self.value(i, j) - self.min) / range * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                if c > 0 {
                    out.push(if c % 16 == 0 { '\n' } else { ' ' });
                }
                let _ = write!(out, "{level}");
            }
            out.push('\n');
        }
        out
    }

    /// Metadata and contours as JSON (the pixel values live in the PGM).
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("slice metadata is serializable")
    }
}

/// Samples the field of `set` on the plane `axis = offset`.
pub fn slice_field(
    set: &ChargeSet,
    axis: SliceAxis,
    offset: f64,
    resolution: usize,
    extent: f64,
    exec: Execution,
) -> Result<SliceImage, GridError> {
    if resolution < 2 {
        return Err(GridError::InvalidDims([resolution, resolution, 1]));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(GridError::InvalidSpacing(extent));
    }
    let (u_axis, v_axis) = axis.plane_axes();
    let mut image = SliceImage {
        axis,
        offset,
        extent,
        resolution,
        u_axis,
        v_axis,
        tau: set.iso_value(),
        min: 0.0,
        max: 0.0,
        values: Vec::new(),
        contours: Vec::new(),
    };
    let field = set.prepare();
    let mut values = vec![0.0; resolution * resolution];
    {
        let img = &image;
        exec.fill_chunks(&mut values, resolution, |start, row| {
            let j = start / resolution;
            let v = img.coordinate(j);
            for (i, out) in row.iter_mut().enumerate() {
                *out = field.value(img.world(img.coordinate(i), v));
            }
        });
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    image.min = min;
    image.max = max;
    image.contours = marching_squares(&values, resolution, resolution, -0.5 * extent, image.spacing(), image.tau);
    image.values = values;
    Ok(image)
}

/// Iso-lines of a row-major `nu x nv` image with square pixels of size
/// `spacing` whose first sample sits at `(origin, origin)`.
///
/// Lines are oriented with the region above `tau` on their left.
pub fn marching_squares(values: &[f64], nu: usize, nv: usize, origin: f64, spacing: f64, tau: f64) -> Vec<Contour> {
    assert_eq!(values.len(), nu * nv);
    let at = |i: usize, j: usize| values[j * nu + i];
    // key = node * 2 + axis for the grid edge starting at `node`.
    let key = |i: usize, j: usize, axis: usize| ((j * nu + i) * 2 + axis) as u64;
    let mut next: BTreeMap<u64, u64> = BTreeMap::new();
    for j in 0..nv.saturating_sub(1) {
        for i in 0..nu.saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let inside = corners.map(|(a, b)| at(a, b) > tau);
            if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                continue;
            }
            let edges = [key(i, j, 0), key(i + 1, j, 1), key(i, j + 1, 0), key(i, j, 1)];
            // Reversed relative to the surface rule so the inside is on the left.
            for (k, m) in polygon_segments(inside) {
                next.insert(edges[m], edges[k]);
            }
        }
    }

    let point = |k: u64| {
        let node = (k / 2) as usize;
        let axis = (k % 2) as usize;
        let (i, j) = (node % nu, node / nu);
        let (v0, v1) = if axis == 0 { (at(i, j), at(i + 1, j)) } else { (at(i, j), at(i, j + 1)) };
        let t = (tau - v0) / (v1 - v0);
        let (mut u, mut v) = (origin + i as f64 * spacing, origin + j as f64 * spacing);
        if axis == 0 {
            u += t * spacing;
        } else {
            v += t * spacing;
        }
        [u, v]
    };

    let targets: std::collections::BTreeSet<u64> = next.values().copied().collect();
    let mut contours = Vec::new();
    // Open polylines start where no segment ends (image border).
    let open_starts: Vec<u64> = next.keys().copied().filter(|k| !targets.contains(k)).collect();
    for start in open_starts {
        let mut pts = vec![point(start)];
        let mut cur = start;
        while let Some(n) = next.remove(&cur) {
            pts.push(point(n));
            cur = n;
        }
        contours.push(Contour {
            closed: false,
            points: pts,
        });
    }
    while let Some((&start, _)) = next.iter().next() {
        let mut pts = vec![point(start)];
        let mut cur = next.remove(&start).unwrap();
        while cur != start {
            pts.push(point(cur));
            cur = next.remove(&cur).expect("broken contour chain");
        }
        contours.push(Contour {
            closed: true,
            points: pts,
        });
    }
    contours
}
