use rayon::prelude::*;

use crate::vec3::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact nearest-neighbour index over a fixed point list.
///
/// Results equal a linear scan: distances use [`Vec3::distance_squared`] and
/// ties go to the lowest point id.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        SpatialIndex { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, id: usize) -> Vec3 {
        self.points[id]
    }

    /// Nearest point as `(distance, id)`; `None` for an empty index.
    pub fn nearest(&self, q: Vec3) -> Option<(f64, usize)> {
        self.nearest_squared(q).map(|(d2, id)| (d2.sqrt(), id))
    }

    pub fn nearest_squared(&self, q: Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some(best)
    }

    /// Nearest distance for every query, in query order.
    pub fn nearest_many(&self, queries: &[Vec3]) -> Vec<(f64, usize)> {
        queries
            .par_iter()
            .map(|&q| self.nearest(q).expect("non-empty index"))
            .collect()
    }

    fn search(&self, node: usize, q: Vec3, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let d2 = q.distance_squared(self.points[id]);
                    if d2 < best.0 || (d2 == best.0 && id < best.1) {
                        *best = (d2, id);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equal-distance candidates with a lower id may hide on the far side.
                if delta * delta <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let me = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return me;
    }
    let (lo, hi) = order[start..end].iter().fold(
        (Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY)),
        |(lo, hi), &i| (lo.min(points[i]), hi.max(points[i])),
    );
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] == 0.0 {
        nodes.push(Node::Leaf { start, end });
        return me;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis])
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // Points left of `mid` are <= value, right are >= value.
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[me] = Node::Split { axis, value, left, right };
    me
}
