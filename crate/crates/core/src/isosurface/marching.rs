use std::collections::HashMap;
use std::sync::OnceLock;

use crate::exec::Execution;
use crate::mesh::TriangleMesh;
use crate::vec3::Vec3;

use super::ScalarGrid;

/// Cube edge: lower corner (bit 0 = x, bit 1 = y, bit 2 = z) and axis.
pub type CubeEdge = (u8, u8);

/// Oriented polygon loops (as cube edges) for each of the 256 inside/outside
/// corner configurations.
///
/// The table is derived rather than transcribed. On every cube face the
/// iso-line is a set of segments between sign-changing edges; on faces with
/// four crossings the inside corners are kept separate. Because that rule
/// only looks at the four values of the face, neighbouring cells agree on
/// shared faces and the extracted surface is closed. Each segment runs from
/// the edge where the boundary walk (counter-clockwise about the outward face
/// normal) enters the inside region to the next edge where it leaves; chaining
/// the segments gives loops whose right-hand normal points away from the
/// inside corners.
pub fn case_loops(case: u8) -> &'static [Vec<CubeEdge>] {
    static TABLE: OnceLock<Vec<Vec<Vec<CubeEdge>>>> = OnceLock::new();
    &TABLE.get_or_init(|| (0..=255u8).map(build_case).collect())[case as usize]
}

fn corner_bit(c: u8, axis: usize) -> u8 {
    (c >> axis) & 1
}

fn edge_between(a: u8, b: u8) -> CubeEdge {
    let diff = a ^ b;
    debug_assert!(diff.count_ones() == 1);
    (a.min(b), diff.trailing_zeros() as u8)
}

/// Face corner cycle, counter-clockwise about the outward normal.
fn face_cycle(axis: usize, side: u8) -> [u8; 4] {
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    let corner = |cu: u8, cv: u8| (side << axis) | (cu << u) | (cv << v);
    let ccw = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
    if side == 1 {
        ccw
    } else {
        [ccw[0], ccw[3], ccw[2], ccw[1]]
    }
}

/// Directed iso-line segments on one polygon, given its corners in
/// counter-clockwise order and which corners are inside.
pub(crate) fn polygon_segments(inside: [bool; 4]) -> Vec<(usize, usize)> {
    // Edge k joins corner k and corner k + 1.
    let entry = |k: usize| !inside[k] && inside[(k + 1) % 4];
    let exit = |k: usize| inside[k] && !inside[(k + 1) % 4];
    let mut segments = Vec::new();
    for k in 0..4 {
        if entry(k) {
            let m = (1..4).map(|d| (k + d) % 4).find(|&m| exit(m)).expect("entry without exit");
            segments.push((k, m));
        }
    }
    segments
}

fn build_case(case: u8) -> Vec<Vec<CubeEdge>> {
    let inside = |c: u8| (case >> c) & 1 == 1;
    let mut next: HashMap<CubeEdge, CubeEdge> = HashMap::new();
    for axis in 0..3 {
        for side in 0..2u8 {
            let cyc = face_cycle(axis, side);
            let flags = [inside(cyc[0]), inside(cyc[1]), inside(cyc[2]), inside(cyc[3])];
            for (k, m) in polygon_segments(flags) {
                let from = edge_between(cyc[k], cyc[(k + 1) % 4]);
                let to = edge_between(cyc[m], cyc[(m + 1) % 4]);
                let previous = next.insert(from, to);
                assert!(previous.is_none(), "edge starts two segments");
            }
        }
    }
    // Walk edges in a fixed order so the table is reproducible.
    let mut starts: Vec<CubeEdge> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut loops = Vec::new();
    for start in starts {
        if !next.contains_key(&start) {
            continue;
        }
        let mut lp = vec![start];
        let mut cur = next.remove(&start).unwrap();
        while cur != start {
            lp.push(cur);
            cur = next.remove(&cur).expect("open iso-line loop in cube");
        }
        loops.push(lp);
    }
    loops
}

/// Extracts the `tau` level set with triangles facing decreasing values
/// ("inside" means value > `tau`).
pub fn marching_cubes(grid: &ScalarGrid, tau: f64) -> TriangleMesh {
    marching_cubes_with(grid, tau, Execution::Parallel)
}

/// [`marching_cubes`] with an explicit execution mode. Cell slabs are
/// processed independently and welded in slab order, so the result does not
/// depend on the mode.
pub fn marching_cubes_with(grid: &ScalarGrid, tau: f64, exec: Execution) -> TriangleMesh {
    let spec = *grid.spec();
    let [nx, ny, nz] = spec.dims;
    let (lo, hi) = grid.min_max();
    if !(tau < hi && tau >= lo) {
        return TriangleMesh::default();
    }

    let slabs: Vec<usize> = (0..nz - 1).collect();
    let per_slab = exec.map_chunks(&slabs, 1, |_, ks| {
        let k = ks[0];
        let mut tris: Vec<[u64; 3]> = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0u8;
                for c in 0..8u8 {
                    let (di, dj, dk) = (corner_bit(c, 0), corner_bit(c, 1), corner_bit(c, 2));
                    if grid.at(i + di as usize, j + dj as usize, k + dk as usize) > tau {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for lp in case_loops(case) {
                    let key = |&(c, axis): &CubeEdge| {
                        let node = spec.index(
                            i + corner_bit(c, 0) as usize,
                            j + corner_bit(c, 1) as usize,
                            k + corner_bit(c, 2) as usize,
                        );
                        node as u64 * 3 + axis as u64
                    };
                    let first = key(&lp[0]);
                    for w in lp[1..].windows(2) {
                        tris.push([first, key(&w[0]), key(&w[1])]);
                    }
                }
            }
        }
        tris
    });

    let mut ids: HashMap<u64, u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let values = grid.values();
    let stride = [1usize, nx, nx * ny];
    for tris in per_slab {
        for tri in tris {
            let mut face = [0u32; 3];
            for (slot, key) in face.iter_mut().zip(tri) {
                *slot = *ids.entry(key).or_insert_with(|| {
                    let node = (key / 3) as usize;
                    let axis = (key % 3) as usize;
                    let (v0, v1) = (values[node], values[node + stride[axis]]);
                    let t = (tau - v0) / (v1 - v0);
                    let [i, j, k] = spec.coords(node);
                    let mut p = spec.position(i, j, k);
                    let step = spec.spacing * t;
                    match axis {
                        0 => p.x += step,
                        1 => p.y += step,
                        _ => p.z += step,
                    }
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
            }
            faces.push(face);
        }
    }
    TriangleMesh::new(vertices, faces).expect("marching cubes produced an invalid mesh")
}
