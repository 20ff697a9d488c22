//! Point-cloud container, Chamfer distances, bounding boxes and
//! segmentation scoring.

mod io;
mod kdtree;

pub use io::{read_apc, read_apc_file, write_apc, write_apc_file};
pub use kdtree::NeighborIndex;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("label {label} at point {index} is outside [0, {parts})")]
    LabelOutOfRange { index: usize, label: usize, parts: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cloud carries no part labels")]
    MissingLabels,
    #[error("malformed point-cloud file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferMode {
    /// Mean nearest distance from the first cloud to the second.
    Uni,
    /// Sum of both directions.
    Bi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferNorm {
    /// Euclidean distance.
    L1,
    /// Squared Euclidean distance.
    L2Sq,
}

impl std::str::FromStr for ChamferMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uni" => Ok(ChamferMode::Uni),
            "bi" => Ok(ChamferMode::Bi),
            _ => Err(format!("unknown chamfer mode '{s}' (expected uni|bi)")),
        }
    }
}

/// Labeled or unlabeled set of 3-D points. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Option<Vec<usize>>,
    num_parts: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<PointCloud, CloudError> {
        if points.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        Ok(PointCloud {
            points,
            labels: None,
            num_parts: 0,
        })
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<usize>, num_parts: usize) -> Result<PointCloud, CloudError> {
        let mut cloud = PointCloud::new(points)?;
        if labels.len() != cloud.points.len() {
            return Err(CloudError::LengthMismatch(cloud.points.len(), labels.len()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_parts) {
            return Err(CloudError::LabelOutOfRange {
                index,
                label,
                parts: num_parts,
            });
        }
        cloud.labels = Some(labels);
        cloud.num_parts = num_parts;
        Ok(cloud)
    }

    /// Concatenates part clouds, labeling each with its position.
    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a [Vec3]>) -> Result<PointCloud, CloudError> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut k = 0;
        for part in parts {
            points.extend_from_slice(part);
            labels.extend(std::iter::repeat_n(k, part.len()));
            k += 1;
        }
        PointCloud::with_labels(points, labels, k)
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

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn require_labels(&self) -> Result<&[usize], CloudError> {
        self.labels.as_deref().ok_or(CloudError::MissingLabels)
    }

    /// Indices of the points carrying `label`.
    pub fn part_indices(&self, label: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// The unlabeled sub-cloud of one part.
    pub fn part(&self, label: usize) -> Result<PointCloud, CloudError> {
        self.require_labels()?;
        PointCloud::new(self.part_indices(label).into_iter().map(|i| self.points[i]).collect())
    }

    /// Points at `indices`, keeping labels.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud, CloudError> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        match &self.labels {
            Some(l) => PointCloud::with_labels(points, indices.iter().map(|&i| l[i]).collect(), self.num_parts),
            None => PointCloud::new(points),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: t.apply_all(&self.points),
            labels: self.labels.clone(),
            num_parts: self.num_parts,
        }
    }

    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        self.transformed(&RigidTransform::from_translation(*offset))
    }

    pub fn map_points(&self, f: impl Fn(usize, &Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().enumerate().map(|(i, p)| f(i, p)).collect(),
            labels: self.labels.clone(),
            num_parts: self.num_parts,
        }
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox(&self.points).expect("point cloud is never empty")
    }

    pub fn bbox_center(&self) -> Vec3 {
        let (lo, hi) = self.bbox();
        (lo + hi) / 2.0
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        diameter(&self.points)
    }

    pub fn index(&self) -> NeighborIndex {
        NeighborIndex::build(&self.points)
    }
}

pub fn bbox(points: &[Vec3]) -> Result<(Vec3, Vec3), CloudError> {
    let first = points.first().ok_or(CloudError::EmptyCloud)?;
    Ok(points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

/// Center of the axis-aligned bounding box.
pub fn bbox_center(points: &[Vec3]) -> Result<Vec3, CloudError> {
    let (lo, hi) = bbox(points)?;
    Ok((lo + hi) / 2.0)
}

pub fn diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

#[inline]
fn apply_norm(d2: f64, norm: ChamferNorm) -> f64 {
    match norm {
        ChamferNorm::L1 => d2.sqrt(),
        ChamferNorm::L2Sq => d2,
    }
}

/// Mean over `from` of the distance to the nearest point indexed by `to`.
pub fn directed_chamfer(from: &[Vec3], to: &NeighborIndex, norm: ChamferNorm) -> Result<f64, CloudError> {
    if from.is_empty() || to.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let sum: f64 = from
        .iter()
        .map(|p| apply_norm(to.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2), norm))
        .sum();
    Ok(sum / from.len() as f64)
}

/// Chamfer distance with per-direction means.
pub fn chamfer(x: &PointCloud, y: &PointCloud, mode: ChamferMode, norm: ChamferNorm) -> Result<f64, CloudError> {
    chamfer_points(x.points(), y.points(), mode, norm)
}

pub fn chamfer_points(x: &[Vec3], y: &[Vec3], mode: ChamferMode, norm: ChamferNorm) -> Result<f64, CloudError> {
    if x.is_empty() || y.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let forward = directed_chamfer(x, &NeighborIndex::build(y), norm)?;
    match mode {
        ChamferMode::Uni => Ok(forward),
        ChamferMode::Bi => Ok(forward + directed_chamfer(y, &NeighborIndex::build(x), norm)?),
    }
}

/// Chamfer with a prebuilt index over `x` (reused across many `y`).
pub fn chamfer_indexed(x: &NeighborIndex, y: &[Vec3], mode: ChamferMode, norm: ChamferNorm) -> Result<f64, CloudError> {
    let y_index = NeighborIndex::build(y);
    let forward = directed_chamfer(x.points(), &y_index, norm)?;
    match mode {
        ChamferMode::Uni => Ok(forward),
        ChamferMode::Bi => Ok(forward + directed_chamfer(y, x, norm)?),
    }
}

/// Mean per-part IoU under the best one-to-one assignment of predicted to
/// ground-truth labels (exhaustive over permutations).
pub fn miou(pred: &[usize], gt: &[usize], num_parts: usize) -> Result<f64, CloudError> {
    if pred.len() != gt.len() {
        return Err(CloudError::LengthMismatch(pred.len(), gt.len()));
    }
    for (index, &label) in pred.iter().chain(gt).enumerate() {
        if label >= num_parts {
            return Err(CloudError::LabelOutOfRange {
                index: index % pred.len().max(1),
                label,
                parts: num_parts,
            });
        }
    }
    if num_parts == 0 {
        return Ok(1.0);
    }
    let k = num_parts;
    // confusion[p][g]
    let mut confusion = vec![0usize; k * k];
    let mut pred_count = vec![0usize; k];
    let mut gt_count = vec![0usize; k];
    for (&p, &g) in pred.iter().zip(gt) {
        confusion[p * k + g] += 1;
        pred_count[p] += 1;
        gt_count[g] += 1;
    }
    let iou = |p: usize, g: usize| {
        let inter = confusion[p * k + g];
        let union = pred_count[p] + gt_count[g] - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    let best = (0..k)
        .permutations(k)
        .map(|perm| (0..k).map(|g| iou(perm[g], g)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn brute_directed(a: &[Vec3], b: &[Vec3], norm: ChamferNorm) -> f64 {
        a.iter()
            .map(|p| {
                let d2 = b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
                apply_norm(d2, norm)
            })
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(PointCloud::new(vec![]), Err(CloudError::EmptyCloud)));
        assert!(matches!(
            PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]),
            Err(CloudError::NonFinite(0))
        ));
        assert!(matches!(
            PointCloud::with_labels(vec![Vec3::zeros()], vec![2], 2),
            Err(CloudError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn chamfer_trivial_cases() {
        let x = PointCloud::new(random_points(30, 1)).unwrap();
        assert_eq!(chamfer(&x, &x, ChamferMode::Bi, ChamferNorm::L1).unwrap(), 0.0);
        let a = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        let b = PointCloud::new(vec![Vec3::x()]).unwrap();
        assert_eq!(chamfer(&a, &b, ChamferMode::Uni, ChamferNorm::L1).unwrap(), 1.0);
        assert!(matches!(chamfer_points(&[], b.points(), ChamferMode::Uni, ChamferNorm::L1), Err(CloudError::EmptyCloud)));
    }

    #[test]
    fn chamfer_matches_all_pairs() {
        let a = random_points(50, 2);
        let b = random_points(50, 3);
        for norm in [ChamferNorm::L1, ChamferNorm::L2Sq] {
            let uni = chamfer_points(&a, &b, ChamferMode::Uni, norm).unwrap();
            assert!((uni - brute_directed(&a, &b, norm)).abs() < 1e-9);
            let bi = chamfer_points(&a, &b, ChamferMode::Bi, norm).unwrap();
            assert!((bi - brute_directed(&a, &b, norm) - brute_directed(&b, &a, norm)).abs() < 1e-9);
            let idx = NeighborIndex::build(&a);
            assert!((chamfer_indexed(&idx, &b, ChamferMode::Bi, norm).unwrap() - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn bbox_cases() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64))
            .collect();
        assert_eq!(bbox_center(&corners).unwrap(), Vec3::new(0.5, 0.5, 0.5));
        let p = Vec3::new(0.3, -2.0, 7.0);
        assert_eq!(bbox_center(&[p]).unwrap(), p);
        assert!(matches!(bbox_center(&[]), Err(CloudError::EmptyCloud)));
        let pts = random_points(40, 9);
        let t = Vec3::new(0.25, -0.5, 2.0);
        let shifted: Vec<Vec3> = pts.iter().map(|p| p + t).collect();
        let d = bbox_center(&shifted).unwrap() - bbox_center(&pts).unwrap() - t;
        assert!(d.abs().max() < 1e-15);
    }

    #[test]
    fn miou_cases() {
        let gt = vec![0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(miou(&gt, &gt, 2).unwrap(), 1.0);
        let swapped: Vec<usize> = gt.iter().map(|&l| 1 - l).collect();
        assert_eq!(miou(&swapped, &gt, 2).unwrap(), 1.0);
        // Half of part 0 labeled as part 1. Identity matching:
        // IoU0 = 2 / 4, IoU1 = 4 / 6; the swapped matching scores 0 + 2/6.
        let pred = vec![0, 0, 1, 1, 1, 1, 1, 1];
        let expected = (2.0 / 4.0 + 4.0 / 6.0) / 2.0;
        assert!((miou(&pred, &gt, 2).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(miou(&pred, &gt[..3], 2), Err(CloudError::LengthMismatch(8, 3))));
    }

    #[test]
    fn part_extraction() {
        let cloud = PointCloud::from_parts([&[Vec3::zeros()][..], &[Vec3::x(), Vec3::y()][..]]).unwrap();
        assert_eq!(cloud.num_parts(), 2);
        assert_eq!(cloud.part(1).unwrap().points(), &[Vec3::x(), Vec3::y()]);
        assert!(matches!(PointCloud::new(vec![Vec3::x()]).unwrap().part(0), Err(CloudError::MissingLabels)));
    }

    proptest! {
        #[test]
        fn chamfer_bi_is_symmetric_and_isometry_invariant(seed in 0u64..1000, w in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
            let a = PointCloud::new(random_points(25, seed)).unwrap();
            let b = PointCloud::new(random_points(31, seed + 7)).unwrap();
            let ab = chamfer(&a, &b, ChamferMode::Bi, ChamferNorm::L1).unwrap();
            let ba = chamfer(&b, &a, ChamferMode::Bi, ChamferNorm::L1).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            let t = RigidTransform::new(crate::se3::exp_so3(&Vec3::new(w.0, w.1, w.2)), Vec3::new(w.2, w.0, 1.0));
            let moved = chamfer(&a.transformed(&t), &b.transformed(&t), ChamferMode::Bi, ChamferNorm::L1).unwrap();
            prop_assert!((ab - moved).abs() < 1e-9);
        }

        #[test]
        fn miou_ignores_relabeling(labels in proptest::collection::vec(0usize..3, 1..60), gt in proptest::collection::vec(0usize..3, 60), p in 0usize..6) {
            let gt = &gt[..labels.len()];
            let perm = (0..3).permutations(3).nth(p).unwrap();
            let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = miou(&labels, gt, 3).unwrap();
            prop_assert!((a - miou(&relabeled, gt, 3).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
