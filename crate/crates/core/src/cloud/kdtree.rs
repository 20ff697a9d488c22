//! Exact 3-D KD-tree over an immutable point set.
//!
//! Nearest-neighbour ties resolve to the lowest point index, so queries are
//! reproducible regardless of tree layout.

use crate::se3::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Spatial index answering radius, nearest and k-nearest queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &[Vec3]) -> NeighborIndex {
        let mut index = NeighborIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build_node(0, points.len());
        }
        index
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
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

    /// Indices with `‖p − center‖ ≤ r`, ascending.
    pub fn radius_neighbors(&self, center: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.radius_rec(0, center, r, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, c: &Vec3, r: f64, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if (self.points[i] - c).norm_squared() <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = c[axis] - value;
                if d <= r {
                    self.radius_rec(left, c, r, r2, out);
                }
                if d >= -r {
                    self.radius_rec(right, c, r, r2, out);
                }
            }
        }
    }

    /// Nearest point `(index, squared distance)`; `None` on an empty index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if d * d <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points, closest first (index breaks distance ties).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, q, k, &mut heap);
        }
        heap
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, best: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    let worse = |e: &(usize, f64)| e.1 > d2 || (e.1 == d2 && e.0 > i);
                    if best.len() < k || best.last().is_some_and(worse) {
                        let pos = best.iter().position(worse).unwrap_or(best.len());
                        best.insert(pos, (i, d2));
                        best.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, best);
                if best.len() < k || d * d <= best.last().map_or(f64::INFINITY, |e| e.1) {
                    self.knn_rec(far, q, k, best);
                }
            }
        }
    }
}
