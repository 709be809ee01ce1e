//! Exact nearest-neighbor search over a fixed point set.
//!
//! The tree returns exactly what a linear scan would: the point with the
//! smallest squared distance, ties broken toward the lowest index. Queries
//! never approximate, so registration results cannot drift with tree shape.

use nalgebra::Vector3;

use super::IcpError;

#[derive(Debug, Clone)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Balanced kd-tree splitting each level on the widest axis.
#[derive(Debug, Clone)]
pub struct KdTree {
    pts: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    /// Builds over a copy of the points. At least one point is required.
    pub fn build(points: &[Vector3<f64>]) -> Result<Self, IcpError> {
        if points.is_empty() {
            return Err(IcpError::TooFewPoints { available: 0, required: 1 });
        }
        let pts = points.to_vec();
        let mut idx: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::with_capacity(pts.len());
        let root = build_rec(&pts, &mut idx, &mut nodes);
        Ok(Self { pts, nodes, root })
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Returns `(index, squared_distance)` of the nearest stored point,
    /// lowest index on exact distance ties.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, node: i32, q: &Vector3<f64>, best: &mut (usize, f64)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.pts[n.point as usize];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && (n.point as usize) < best.0) {
            *best = (n.point as usize, d2);
        }
        let diff = q[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, best);
        // Equal plane distance can still hide a lower-index tie, so the far
        // side is pruned only on a strict excess.
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build_rec(pts: &[Vector3<f64>], idx: &mut [u32], nodes: &mut Vec<Node>) -> i32 {
    if idx.is_empty() {
        return -1;
    }
    let axis = widest_axis(pts, idx);
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        pts[a as usize][axis]
            .partial_cmp(&pts[b as usize][axis])
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let point = idx[mid];
    let slot = nodes.len();
    nodes.push(Node { point, axis: axis as u8, left: -1, right: -1 });
    let (lo, rest) = idx.split_at_mut(mid);
    let left = build_rec(pts, lo, nodes);
    let right = build_rec(pts, &mut rest[1..], nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as i32
}

fn widest_axis(pts: &[Vector3<f64>], idx: &[u32]) -> usize {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in idx {
        let p = &pts[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let spread = hi - lo;
    let mut axis = 0;
    for a in 1..3 {
        if spread[a] > spread[axis] {
            axis = a;
        }
    }
    axis
}
