use super::KinematicError;
use crate::cloud::{NeighborIndex, PointCloud};
use crate::se3::Vec3;

/// A rooted spanning tree over parts.
///
/// `order` lists descendants before ancestors (the reversed depth-first
/// preorder from the root, children visited in ascending index), so the root
/// is always last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinematicTree {
    num_parts: usize,
    root: usize,
    /// Directed `(parent, child)` pairs, sorted by child.
    edges: Vec<(usize, usize)>,
    parent: Vec<Option<usize>>,
    order: Vec<usize>,
}

impl KinematicTree {
    /// Orients undirected `edges` away from `root` and checks that they span
    /// all `num_parts` nodes without a cycle.
    pub fn from_edges(num_parts: usize, root: usize, edges: &[(usize, usize)]) -> Result<Self, KinematicError> {
        if num_parts < 2 {
            return Err(KinematicError::TooFewParts(num_parts));
        }
        if root >= num_parts {
            return Err(KinematicError::PartOutOfRange(root));
        }
        if edges.len() != num_parts - 1 {
            return Err(KinematicError::NotATree(format!("{} edges for {num_parts} parts", edges.len())));
        }
        let mut adjacency = vec![Vec::new(); num_parts];
        for &(a, b) in edges {
            if a >= num_parts || b >= num_parts {
                return Err(KinematicError::PartOutOfRange(a.max(b)));
            }
            if a == b {
                return Err(KinematicError::NotATree(format!("self loop at {a}")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut parent = vec![None; num_parts];
        let mut seen = vec![false; num_parts];
        let mut preorder = Vec::with_capacity(num_parts);
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(node) = stack.pop() {
            preorder.push(node);
            for &child in adjacency[node].iter().rev() {
                if !seen[child] {
                    seen[child] = true;
                    parent[child] = Some(node);
                    stack.push(child);
                }
            }
        }
        if preorder.len() != num_parts {
            return Err(KinematicError::NotATree("edges do not connect every part".into()));
        }
        let mut directed: Vec<(usize, usize)> = (0..num_parts).filter_map(|c| parent[c].map(|p| (p, c))).collect();
        directed.sort_unstable_by_key(|&(_, c)| c);
        preorder.reverse();
        Ok(KinematicTree {
            num_parts,
            root,
            edges: directed,
            parent,
            order: preorder,
        })
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent(&self, part: usize) -> Option<usize> {
        self.parent[part]
    }

    pub fn children(&self, part: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(p, _)| p == part).map(|&(_, c)| c).collect()
    }

    /// Non-root parts from the root down to `part` (inclusive).
    pub fn path_from_root(&self, part: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut node = part;
        while let Some(p) = self.parent[node] {
            path.push(node);
            node = p;
        }
        path.reverse();
        path
    }

    pub fn degree(&self, part: usize) -> usize {
        self.edges.iter().filter(|&&(p, c)| p == part || c == part).count()
    }
}

/// Minimum point-to-point distance between every pair of parts.
pub fn min_distances(parts: &[PointCloud]) -> Vec<Vec<f64>> {
    let indices: Vec<NeighborIndex> = parts.iter().map(PointCloud::index).collect();
    let k = parts.len();
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let (small, big) = if parts[i].len() <= parts[j].len() { (i, j) } else { (j, i) };
            let best = parts[small]
                .points()
                .iter()
                .filter_map(|p| indices[big].nearest(p))
                .map(|(_, d2)| d2)
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            d[i][j] = best;
            d[j][i] = best;
        }
    }
    d
}

/// Adjacency confidence `exp(−d_min / τ)` with `τ = 0.1 ×` the diameter of
/// all parts together.
pub fn adjacency_confidence(parts: &[PointCloud]) -> Vec<Vec<f64>> {
    let all: Vec<Vec3> = parts.iter().flat_map(|p| p.points().iter().copied()).collect();
    let tau = (0.1 * crate::cloud::diameter(&all)).max(f64::MIN_POSITIVE);
    min_distances(parts)
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, d)| if i == j { 1.0 } else { (-d / tau).exp() })
                .collect()
        })
        .collect()
}

/// Kruskal maximum spanning tree over a dense symmetric weight matrix.
/// Ties are broken by the lower `(i, j)` pair. Returns undirected `(i, j)`
/// edges with `i < j`, in acceptance order.
pub fn maximum_spanning_tree(weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let k = weights.len();
    let mut candidates: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
    candidates.sort_by(|&(a, b), &(c, d)| weights[c][d].total_cmp(&weights[a][b]).then((a, b).cmp(&(c, d))));
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(k.saturating_sub(1));
    for (i, j) in candidates {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
            tree.push((i, j));
        }
    }
    tree
}

/// Roots an undirected spanning tree at its node of largest degree (ties go
/// to the lowest index).
pub fn root_tree(num_parts: usize, edges: &[(usize, usize)]) -> Result<KinematicTree, KinematicError> {
    let mut degree = vec![0usize; num_parts];
    for &(a, b) in edges {
        if a < num_parts && b < num_parts {
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    let root = (0..num_parts).max_by(|&a, &b| degree[a].cmp(&degree[b]).then(b.cmp(&a))).unwrap_or(0);
    KinematicTree::from_edges(num_parts, root, edges)
}

/// Kinematic chain from part clouds expressed in one common frame.
///
/// The spanning tree maximizes total adjacency confidence. Since confidence
/// is monotone in the inter-part gap, edges are ranked by the gap itself,
/// which avoids ties from underflow when parts are far apart.
pub fn infer_chain(parts: &[PointCloud]) -> Result<KinematicTree, KinematicError> {
    if parts.len() < 2 {
        return Err(KinematicError::TooFewParts(parts.len()));
    }
    let negated: Vec<Vec<f64>> = min_distances(parts)
        .into_iter()
        .map(|row| row.into_iter().map(|d| -d).collect())
        .collect();
    root_tree(parts.len(), &maximum_spanning_tree(&negated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use proptest::prelude::*;

    fn blob(center: Vec3, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|i| center + Vec3::new((i % 3) as f64 * 0.01, (i / 3 % 3) as f64 * 0.01, (i / 9) as f64 * 0.01))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    /// Maximum total weight over every spanning tree, by enumerating all
    /// `k − 1` edge subsets.
    fn brute_force_best(weights: &[Vec<f64>]) -> f64 {
        let k = weights.len();
        let all: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
        all.iter()
            .combinations(k - 1)
            .filter(|edges| {
                let pairs: Vec<(usize, usize)> = edges.iter().map(|&&e| e).collect();
                KinematicTree::from_edges(k, 0, &pairs).is_ok()
            })
            .map(|edges| edges.iter().map(|&&(i, j)| weights[i][j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn two_parts_single_edge() {
        let tree = infer_chain(&[blob(Vec3::zeros(), 9), blob(Vec3::new(0.05, 0.0, 0.0), 9)]).unwrap();
        assert_eq!(tree.root(), 0);
        assert_eq!(tree.edges(), &[(0, 1)]);
        assert_eq!(tree.order(), &[1, 0]);
    }

    #[test]
    fn eyeglasses_layout_is_a_star_on_the_frame() {
        let leg_a = blob(Vec3::new(-1.0, 0.0, 0.0), 18);
        let frame = blob(Vec3::new(-0.97, 0.0, 0.0), 9)
            .points()
            .iter()
            .chain(blob(Vec3::new(0.95, 0.0, 0.0), 9).points())
            .copied()
            .collect::<Vec<_>>();
        let frame = PointCloud::new(frame).unwrap();
        let leg_b = blob(Vec3::new(1.0, 0.0, 0.0), 18);
        let tree = infer_chain(&[leg_a, frame, leg_b]).unwrap();
        assert_eq!(tree.root(), 1);
        assert_eq!(tree.edges(), &[(1, 0), (1, 2)]);
        assert_eq!(tree.order(), &[2, 0, 1]);
    }

    #[test]
    fn order_is_reversed_preorder() {
        // 0 - 1 - 2, 1 - 3, 3 - 4
        let tree = KinematicTree::from_edges(5, 1, &[(0, 1), (1, 2), (3, 1), (3, 4)]).unwrap();
        assert_eq!(tree.order(), &[4, 3, 2, 0, 1]);
        assert_eq!(*tree.order().last().unwrap(), tree.root());
        assert_eq!(tree.path_from_root(4), vec![3, 4]);
        assert_eq!(tree.parent(4), Some(3));
        assert_eq!(tree.children(1), vec![0, 2, 3]);
    }

    #[test]
    fn rejects_non_trees() {
        assert!(matches!(KinematicTree::from_edges(1, 0, &[]), Err(KinematicError::TooFewParts(1))));
        assert!(KinematicTree::from_edges(3, 0, &[(0, 1), (1, 0)]).is_err());
        assert!(KinematicTree::from_edges(4, 0, &[(0, 1), (1, 2), (2, 0)]).is_err());
        assert!(matches!(infer_chain(&[blob(Vec3::zeros(), 3)]), Err(KinematicError::TooFewParts(1))));
    }

    #[test]
    fn four_node_graph_matches_enumeration() {
        let w = vec![
            vec![0.0, 0.3, 0.9, 0.1],
            vec![0.3, 0.0, 0.4, 0.8],
            vec![0.9, 0.4, 0.0, 0.2],
            vec![0.1, 0.8, 0.2, 0.0],
        ];
        let tree = maximum_spanning_tree(&w);
        let total: f64 = tree.iter().map(|&(i, j)| w[i][j]).sum();
        assert!((total - brute_force_best(&w)).abs() < 1e-12);
        assert_eq!(total, 0.9 + 0.8 + 0.4);
    }

    #[test]
    fn isometry_does_not_change_chain() {
        let parts = [blob(Vec3::zeros(), 9), blob(Vec3::new(0.06, 0.0, 0.0), 9), blob(Vec3::new(0.0, 0.3, 0.0), 9)];
        let motion = crate::se3::RigidTransform::new(crate::se3::exp_so3(&Vec3::new(0.3, -1.0, 0.4)), Vec3::new(1.0, 2.0, 3.0));
        let moved: Vec<PointCloud> = parts.iter().map(|p| p.transformed(&motion)).collect();
        assert_eq!(infer_chain(&parts).unwrap(), infer_chain(&moved).unwrap());
    }

    #[test]
    fn confidence_is_monotone_in_gap() {
        let parts = [blob(Vec3::zeros(), 9), blob(Vec3::new(0.1, 0.0, 0.0), 9), blob(Vec3::new(0.5, 0.0, 0.0), 9)];
        let c = adjacency_confidence(&parts);
        assert!(c[0][1] > c[0][2]);
        assert!(c[1][2] > c[0][2]);
        assert_eq!(c[1][0], c[0][1]);
    }

    proptest! {
        #[test]
        fn mst_weight_matches_enumeration(k in 2usize..=5, raw in proptest::collection::vec(0.0f64..1.0, 10)) {
            let mut w = vec![vec![0.0; k]; k];
            let mut it = raw.iter();
            for i in 0..k {
                for j in (i + 1)..k {
                    let v = *it.next().unwrap();
                    w[i][j] = v;
                    w[j][i] = v;
                }
            }
            let tree = maximum_spanning_tree(&w);
            prop_assert_eq!(tree.len(), k - 1);
            let total: f64 = tree.iter().map(|&(i, j)| w[i][j]).sum();
            prop_assert!((total - brute_force_best(&w)).abs() < 1e-12);
        }
    }
}
