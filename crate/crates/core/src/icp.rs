//! Oracle ICP baseline: per-part point-to-point registration of template
//! parts onto the segmented observation from many initial hypotheses, with
//! inlier-RMSE selection and nearest-part segmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cloud::{bbox_center, diameter, CloudError, NeighborIndex, PointCloud};
use crate::rotgroup::{GroupElementId, RotationGroup};
use crate::se3::{geodesic_deg, RigidTransform, Vec3};

/// Inlier radius relative to the template part's diameter.
pub const DEFAULT_INLIER_RATIO: f64 = 0.1;
/// Stop once an update moves less than this (radians plus scene units).
pub const DEFAULT_CHANGE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("inlier radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("template has {template} parts but the observation has {observed}")]
    LabelMismatch { template: usize, observed: usize },
    #[error("part {0} has no observed points")]
    EmptyPart(usize),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpStatus {
    Converged,
    MaxIterations,
    /// No correspondence within the inlier radius at the initial pose.
    NoInliers,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcpResult {
    /// Maps the source cloud onto the destination.
    pub transform: RigidTransform,
    /// RMSE over the inliers of the final transform (`+∞` without inliers).
    pub inlier_rmse: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub status: IcpStatus,
    /// Inlier RMSE of every iteration's frozen pairs, before and after its
    /// update.
    pub history: Vec<(f64, f64)>,
}

/// Least-squares rigid transform (no scale) carrying `src[i]` onto `dst[i]`,
/// with the reflection guard. Panics on length mismatch or empty input.
pub fn umeyama(src: &[Vec3], dst: &[Vec3]) -> RigidTransform {
    assert!(!src.is_empty() && src.len() == dst.len(), "umeyama needs matched, non-empty point lists");
    let n = src.len() as f64;
    let ms: Vec3 = src.iter().sum::<Vec3>() / n;
    let md: Vec3 = dst.iter().sum::<Vec3>() / n;
    let cov = src
        .iter()
        .zip(dst)
        .fold(nalgebra::Matrix3::zeros(), |acc, (s, d)| acc + (d - md) * (s - ms).transpose());
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = nalgebra::Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let rotation = nalgebra::Rotation3::from_matrix_unchecked(r);
    RigidTransform::new(rotation, md - rotation * ms)
}

fn rmse(sum_sq: f64, n: usize) -> f64 {
    (sum_sq / n as f64).sqrt()
}

/// Point-to-point ICP from `init`.
///
/// Every iteration matches each moved source point to its nearest
/// destination point, keeps pairs closer than `inlier_r`, and composes the
/// closed-form update for those pairs. Stops after `max_iter` updates or when
/// an update moves less than [`DEFAULT_CHANGE_TOL`].
pub fn icp(src: &[Vec3], dst: &[Vec3], init: &RigidTransform, max_iter: usize, inlier_r: f64) -> Result<IcpResult, IcpError> {
    icp_indexed(src, &NeighborIndex::build(dst), dst, init, max_iter, inlier_r)
}

/// Inlier pairs of `transform`: `(moved source, destination)`.
fn inliers(src: &[Vec3], index: &NeighborIndex, dst: &[Vec3], transform: &RigidTransform, r2: f64) -> (Vec<Vec3>, Vec<Vec3>, f64) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut sum = 0.0;
    for p in src {
        let q = transform.apply(p);
        if let Some((j, d2)) = index.nearest(&q) {
            if d2 <= r2 {
                a.push(q);
                b.push(dst[j]);
                sum += d2;
            }
        }
    }
    (a, b, sum)
}

fn icp_indexed(
    src: &[Vec3],
    index: &NeighborIndex,
    dst: &[Vec3],
    init: &RigidTransform,
    max_iter: usize,
    inlier_r: f64,
) -> Result<IcpResult, IcpError> {
    if src.is_empty() || dst.is_empty() {
        return Err(CloudError::EmptyCloud.into());
    }
    if !(inlier_r > 0.0 && inlier_r.is_finite()) {
        return Err(IcpError::BadRadius(inlier_r));
    }
    let r2 = inlier_r * inlier_r;
    let mut transform = *init;
    let mut history = Vec::new();
    let mut status = IcpStatus::MaxIterations;
    let mut iterations_used = 0;
    for it in 0..max_iter {
        let (moved, matched, sum) = inliers(src, index, dst, &transform, r2);
        if moved.is_empty() {
            if it == 0 {
                status = IcpStatus::NoInliers;
            }
            break;
        }
        let update = umeyama(&moved, &matched);
        let after: f64 = moved.iter().zip(&matched).map(|(p, q)| (update.apply(p) - q).norm_squared()).sum();
        history.push((rmse(sum, moved.len()), rmse(after, moved.len())));
        transform = update.compose(&transform);
        iterations_used += 1;
        let change = geodesic_deg(&update.rotation, &nalgebra::Rotation3::identity()).to_radians() + update.translation.norm();
        if change < DEFAULT_CHANGE_TOL {
            status = IcpStatus::Converged;
            break;
        }
    }
    if max_iter == 0 && inliers(src, index, dst, &transform, r2).0.is_empty() {
        status = IcpStatus::NoInliers;
    }
    let inlier_rmse = if status == IcpStatus::NoInliers {
        f64::INFINITY
    } else {
        let (moved, _, sum) = inliers(src, index, dst, &transform, r2);
        if moved.is_empty() {
            f64::INFINITY
        } else {
            rmse(sum, moved.len())
        }
    };
    Ok(IcpResult {
        transform,
        inlier_rmse,
        iterations_used,
        converged: status == IcpStatus::Converged,
        status,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleIcpConfig {
    pub max_iter: usize,
    /// Inlier radius relative to each template part's diameter.
    pub inlier_ratio: f64,
    /// Translation hypotheses per rotation in partial mode.
    pub translation_hypotheses: usize,
    /// Half-width of the translation jitter relative to the part diameter.
    pub translation_jitter: f64,
    pub seed: u64,
}

impl Default for OracleIcpConfig {
    fn default() -> Self {
        OracleIcpConfig {
            max_iter: 50,
            inlier_ratio: DEFAULT_INLIER_RATIO,
            translation_hypotheses: 10,
            translation_jitter: 0.2,
            seed: 0,
        }
    }
}

/// Per-part registrations and the induced segmentation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleIcpResult {
    /// Winning registration of every template part.
    pub per_part: Vec<IcpResult>,
    /// Index of the winning hypothesis of every part.
    pub selected: Vec<usize>,
    /// Final inlier RMSE of every hypothesis, per part.
    pub hypothesis_rmse: Vec<Vec<f64>>,
    /// Nearest registered template part of every observed point.
    pub segmentation: Vec<usize>,
}

/// Initial transforms: each group rotation about the matched part centres,
/// times the translation offsets in partial mode.
fn initializations(src: &[Vec3], dst: &[Vec3], group: &RotationGroup, partial: bool, cfg: &OracleIcpConfig) -> Result<Vec<RigidTransform>, IcpError> {
    // Complete mode matches bounding-box centres; partial views bias those,
    // so partial mode matches centroids and jitters around them.
    let (cs, cd) = if partial {
        let mean = |p: &[Vec3]| p.iter().sum::<Vec3>() / p.len() as f64;
        (mean(src), mean(dst))
    } else {
        (bbox_center(src)?, bbox_center(dst)?)
    };
    let offsets: Vec<Vec3> = if partial {
        let half = cfg.translation_jitter * diameter(src);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        std::iter::once(Vec3::zeros())
            .chain((1..cfg.translation_hypotheses.max(1)).map(|_| {
                Vec3::new(rng.random_range(-half..=half), rng.random_range(-half..=half), rng.random_range(-half..=half))
            }))
            .collect()
    } else {
        vec![Vec3::zeros()]
    };
    Ok(group
        .rotations()
        .iter()
        .flat_map(|r| offsets.iter().map(move |o| RigidTransform::new(*r, cd - r * cs + o)))
        .collect())
}

/// Registers every template part onto the observed points carrying the
/// same label and keeps the hypothesis with the smallest inlier RMSE (lowest
/// index on ties).
pub fn oracle_icp(
    template: &PointCloud,
    observed: &PointCloud,
    group: &RotationGroup,
    partial: bool,
    cfg: &OracleIcpConfig,
) -> Result<OracleIcpResult, IcpError> {
    template.require_labels()?;
    observed.require_labels()?;
    let k = template.num_parts();
    if observed.num_parts() != k {
        return Err(IcpError::LabelMismatch {
            template: k,
            observed: observed.num_parts(),
        });
    }
    let mut per_part = Vec::with_capacity(k);
    let mut selected = Vec::with_capacity(k);
    let mut hypothesis_rmse = Vec::with_capacity(k);
    for part in 0..k {
        let src = template.part(part)?;
        let dst = observed.part(part).map_err(|_| IcpError::EmptyPart(part))?;
        if dst.is_empty() {
            return Err(IcpError::EmptyPart(part));
        }
        let index = dst.index();
        let radius = cfg.inlier_ratio * src.diameter();
        let inits = initializations(src.points(), dst.points(), group, partial, cfg)?;
        let results = inits
            .par_iter()
            .map(|init| icp_indexed(src.points(), &index, dst.points(), init, cfg.max_iter, radius))
            .collect::<Result<Vec<_>, _>>()?;
        let best = (0..results.len()).fold(0, |b, h| if results[h].inlier_rmse < results[b].inlier_rmse { h } else { b });
        hypothesis_rmse.push(results.iter().map(|r| r.inlier_rmse).collect());
        selected.push(best);
        per_part.push(results[best].clone());
    }
    let mut points = Vec::with_capacity(template.len());
    let mut labels = Vec::with_capacity(template.len());
    for (part, result) in per_part.iter().enumerate() {
        for i in template.part_indices(part) {
            points.push(result.transform.apply(&template.points()[i]));
            labels.push(part);
        }
    }
    let index = NeighborIndex::build(&points);
    let segmentation = observed
        .points()
        .iter()
        .map(|p| labels[index.nearest(p).expect("template is non-empty").0])
        .collect();
    Ok(OracleIcpResult {
        per_part,
        selected,
        hypothesis_rmse,
        segmentation,
    })
}

/// Group element behind hypothesis `h` of [`oracle_icp`].
pub fn hypothesis_rotation(h: usize, partial: bool, cfg: &OracleIcpConfig) -> GroupElementId {
    GroupElementId(if partial { h / cfg.translation_hypotheses.max(1) } else { h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotgroup::GroupKind;
    use crate::se3::{random_rotation, random_rotation_within};
    use proptest::prelude::*;

    /// Irregular blob: a box lattice with a few bumps.
    fn blob(seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1)))
            .collect();
        pts.extend((0..40).map(|_| Vec3::new(0.3, 0.2, 0.1) + Vec3::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.1), rng.random_range(0.0..0.1))));
        pts
    }

    fn box_lattice(extent: Vec3, n: usize) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let idx = [i, j, l];
                    if idx.iter().any(|&a| a == 0 || a == n - 1) {
                        pts.push(Vec3::new(
                            extent.x * (i as f64 / (n - 1) as f64 - 0.5),
                            extent.y * (j as f64 / (n - 1) as f64 - 0.5),
                            extent.z * (l as f64 / (n - 1) as f64 - 0.5),
                        ));
                    }
                }
            }
        }
        pts
    }

    #[test]
    fn identical_clouds_give_identity() {
        let src = blob(0);
        let r = icp(&src, &src, &RigidTransform::identity(), 20, 0.1).unwrap();
        assert!(r.inlier_rmse < 1e-12);
        assert!(geodesic_deg(&r.transform.rotation, &nalgebra::Rotation3::identity()) < 1e-9);
        assert!(r.transform.translation.norm() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn recovers_small_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = blob(1);
        for _ in 0..5 {
            let truth = RigidTransform::new(random_rotation_within(&mut rng, 14.0), Vec3::new(0.02, -0.01, 0.015));
            let dst = truth.apply_all(&src);
            let r = icp(&src, &dst, &RigidTransform::identity(), 100, 0.3).unwrap();
            assert!(geodesic_deg(&r.transform.rotation, &truth.rotation) < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn disjoint_start_reports_no_inliers() {
        let src = blob(2);
        let far = RigidTransform::from_translation(Vec3::new(10.0, 0.0, 0.0));
        let r = icp(&src, &src, &far, 10, 0.1).unwrap();
        assert_eq!(r.status, IcpStatus::NoInliers);
        assert!(r.inlier_rmse.is_infinite() && !r.converged);
        assert!(icp(&src, &src, &far, 10, 0.0).is_err());
        assert!(icp(&[], &src, &far, 10, 0.1).is_err());
    }

    #[test]
    fn true_rotation_start_converges_in_two_iterations() {
        let group = RotationGroup::new(GroupKind::Icosahedral);
        let src = blob(3);
        let truth = RigidTransform::new(*group.rotation(GroupElementId(17)), Vec3::new(0.3, 0.1, -0.2));
        let dst = truth.apply_all(&src);
        let mean = |p: &[Vec3]| p.iter().sum::<Vec3>() / p.len() as f64;
        let init = RigidTransform::new(truth.rotation, mean(&dst) - truth.rotation * mean(&src));
        let r = icp(&src, &dst, &init, 2, 0.05).unwrap();
        assert!(r.iterations_used <= 2 && r.inlier_rmse < 1e-8, "{r:?}");
    }

    #[test]
    fn umeyama_guards_against_reflections() {
        let src = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let mirrored: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let t = umeyama(&src, &mirrored);
        assert!((t.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    fn two_part_scene(seed: u64) -> (PointCloud, PointCloud, Vec<RigidTransform>) {
        let a = blob(seed);
        let b: Vec<Vec3> = blob(seed + 100).iter().map(|p| p + Vec3::new(0.0, 0.0, 0.6)).collect();
        let template = PointCloud::from_parts([a.as_slice(), b.as_slice()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moves: Vec<RigidTransform> = (0..2)
            .map(|_| RigidTransform::new(random_rotation(&mut rng), Vec3::new(rng.random_range(-1.0..1.0), 0.3, 0.0)))
            .collect();
        let observed = template.map_points(|i, p| moves[template.labels().unwrap()[i]].apply(p));
        (template, observed, moves)
    }

    #[test]
    fn oracle_recovers_distinctive_parts() {
        let group = RotationGroup::new(GroupKind::Icosahedral);
        let mut errors = Vec::new();
        for seed in 0..3 {
            let (template, observed, moves) = two_part_scene(seed);
            let r = oracle_icp(&template, &observed, &group, false, &OracleIcpConfig::default()).unwrap();
            for (res, truth) in r.per_part.iter().zip(&moves) {
                errors.push(geodesic_deg(&res.transform.rotation, &truth.rotation));
            }
            assert_eq!(&r.segmentation, observed.labels().unwrap());
            assert_eq!(r.hypothesis_rmse[0].len(), 60);
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(mean < 5.0, "{errors:?}");
    }

    #[test]
    fn partial_mode_uses_translation_hypotheses() {
        let group = RotationGroup::new(GroupKind::Octahedral);
        let (template, observed, moves) = two_part_scene(7);
        let labels = observed.labels().unwrap();
        let keep: Vec<usize> = (0..observed.len())
            .filter(|&i| (observed.points()[i] - moves[labels[i]].translation).x > -0.1)
            .collect();
        let partial = observed.subset(&keep).unwrap();
        let cfg = OracleIcpConfig::default();
        let r = oracle_icp(&template, &partial, &group, true, &cfg).unwrap();
        assert_eq!(r.hypothesis_rmse[0].len(), 24 * 10);
        assert!(hypothesis_rotation(r.selected[0], true, &cfg).index() < 24);
    }

    #[test]
    fn symmetric_box_is_ambiguous() {
        // A box lattice with distinct extents maps onto itself under three
        // half-turns, so a far-off registration fits exactly.
        let group = RotationGroup::new(GroupKind::Icosahedral);
        let part = box_lattice(Vec3::new(0.6, 0.4, 0.2), 7);
        let template = PointCloud::with_labels(part.clone(), vec![0; part.len()], 1).unwrap();
        let mut flipped = false;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.5, 0.0, 0.0));
            let observed = template.transformed(&truth);
            let r = oracle_icp(&template, &observed, &group, false, &OracleIcpConfig::default()).unwrap();
            let res = &r.per_part[0];
            let err = geodesic_deg(&res.transform.rotation, &truth.rotation);
            flipped |= res.inlier_rmse < 1e-6 && err > 90.0;
        }
        assert!(flipped);
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let (template, _, _) = two_part_scene(0);
        let single = PointCloud::with_labels(blob(0), vec![0; 340], 1).unwrap();
        let group = RotationGroup::new(GroupKind::Tetrahedral);
        assert!(matches!(
            oracle_icp(&template, &single, &group, false, &OracleIcpConfig::default()),
            Err(IcpError::LabelMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn frozen_pair_rmse_never_increases(seed in 0u64..1000, deg in 0.0f64..30.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = blob(seed);
            let truth = RigidTransform::new(random_rotation_within(&mut rng, deg), Vec3::new(0.05, 0.0, -0.02));
            let dst = truth.apply_all(&src);
            let r = icp(&src, &dst, &RigidTransform::identity(), 30, 0.2).unwrap();
            for (before, after) in r.history {
                prop_assert!(after <= before + 1e-12);
            }
        }

        #[test]
        fn selection_ignores_hypothesis_order(seed in 0u64..50) {
            let src = blob(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = RigidTransform::new(random_rotation(&mut rng), Vec3::zeros());
            let dst = truth.apply_all(&src);
            let group = RotationGroup::new(GroupKind::Tetrahedral);
            let inits = initializations(&src, &dst, &group, false, &OracleIcpConfig::default()).unwrap();
            let rmse: Vec<f64> = inits.iter().map(|i| icp(&src, &dst, i, 30, 0.06).unwrap().inlier_rmse).collect();
            let forward = rmse.iter().copied().fold(f64::INFINITY, f64::min);
            let backward = rmse.iter().rev().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(forward, backward);
        }
    }
}
