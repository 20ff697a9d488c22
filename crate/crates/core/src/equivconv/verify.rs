use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ConvError, ConvStack, EquivariantFeature, PerPointPose};
use crate::cloud::PointCloud;
use crate::rotgroup::{GroupElementId, RotationGroup};
use crate::se3::{random_rotation, random_rotation_within, RigidTransform, Vec3};

/// Poses handed to the convolution after a part has moved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PoseFeed {
    /// Poses updated with the applied motion.
    Exact,
    /// Identity everywhere, before and after the motion.
    Identity,
    /// The pre-motion poses.
    Stale,
    /// Updated poses perturbed by a random rotation of up to `rot_deg`
    /// degrees and a translation of norm up to `trans`.
    Noisy { rot_deg: f64, trans: f64 },
}

/// Rotations used to move a part in the invariance trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InvarianceRotations {
    /// Arbitrary rotations for a single block, group elements for deeper
    /// stacks.
    Auto,
    /// Haar-random rotations.
    Arbitrary,
    /// Random group elements.
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub feed: PoseFeed,
    pub invariance_rotations: InvarianceRotations,
    /// Largest component of the random translations.
    pub translation_scale: f64,
    /// Replace every motion by the identity (sanity baseline).
    pub identity_motions: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 20,
            tol: 1e-4,
            seed: 0,
            feed: PoseFeed::Exact,
            invariance_rotations: InvarianceRotations::Auto,
            translation_scale: 1.0,
            identity_motions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub max_invariance_violation: f64,
    pub max_equivariance_violation: f64,
    /// Largest feature magnitude seen, for scale.
    pub feature_scale: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Executes the part-level invariance and equivariance checks.
///
/// `x` holds the observed cloud and `part_poses[k]` maps canonical object
/// coordinates of part `k` to `x`. Every trial moves one part (cycling over
/// the parts):
///
/// * invariance: a random rigid motion of the part must leave the features of
///   all other parts unchanged;
/// * equivariance: a motion whose rotation is a group element `a` must turn
///   the moved part's features into `act(a, F)`, again leaving the other
///   parts unchanged.
///
/// Exact invariance under rotations outside the group only holds for a single
/// block fed group-constant features; deeper stacks read neighbour features
/// through quantized relative rotations, which is why
/// [`InvarianceRotations::Auto`] falls back to group elements there.
pub fn verify_part_level(
    x: &PointCloud,
    part_poses: &[RigidTransform],
    group: Arc<RotationGroup>,
    stack: &ConvStack<f64>,
    config: &VerifyConfig,
) -> Result<VerifyReport, ConvError> {
    let labels = x.labels().ok_or(ConvError::MissingLabels)?.to_vec();
    let k = x.num_parts();
    if part_poses.len() != k {
        return Err(ConvError::PoseMissing(part_poses.len().min(k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_point: Vec<f64> = (0..x.len() * stack.input_channels())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let fin = EquivariantFeature::group_constant(group.clone(), x.len(), stack.input_channels(), &per_point)?;

    let feed_for = |rng: &mut ChaCha8Rng, before: &[RigidTransform], after: &[RigidTransform]| -> Result<PerPointPose, ConvError> {
        let poses: Vec<RigidTransform> = match config.feed {
            PoseFeed::Exact => after.to_vec(),
            PoseFeed::Identity => vec![RigidTransform::identity(); k],
            PoseFeed::Stale => before.to_vec(),
            PoseFeed::Noisy { rot_deg, trans } => after
                .iter()
                .map(|p| {
                    let dir = random_rotation(rng) * Vec3::x();
                    let noise = RigidTransform::new(random_rotation_within(rng, rot_deg), dir * rng.random_range(0.0..=trans));
                    noise.compose(p)
                })
                .collect(),
        };
        PerPointPose::from_parts(&labels, &poses)
    };
    let initial_feed = match config.feed {
        PoseFeed::Identity => vec![RigidTransform::identity(); k],
        _ => part_poses.to_vec(),
    };
    let base = stack.forward(x, &fin, Some(&PerPointPose::from_parts(&labels, &initial_feed)?))?;

    let arbitrary = match config.invariance_rotations {
        InvarianceRotations::Auto => stack.depth() == 1,
        InvarianceRotations::Arbitrary => true,
        InvarianceRotations::Group => false,
    };
    let random_translation = |rng: &mut ChaCha8Rng| {
        let s = config.translation_scale;
        Vec3::new(rng.random_range(-s..=s), rng.random_range(-s..=s), rng.random_range(-s..=s))
    };
    let moved = |part: usize, motion: &RigidTransform| {
        let cloud = x.map_points(|i, p| if labels[i] == part { motion.apply(p) } else { *p });
        let mut poses = part_poses.to_vec();
        poses[part] = motion.compose(&poses[part]);
        (cloud, poses)
    };

    let mut max_inv = 0.0f64;
    let mut max_eq = 0.0f64;
    let mut scale = base.max_abs();
    for trial in 0..config.trials {
        let part = trial % k;
        let inside: Vec<usize> = (0..x.len()).filter(|&i| labels[i] == part).collect();
        let outside: Vec<usize> = (0..x.len()).filter(|&i| labels[i] != part).collect();

        let rotation = if arbitrary {
            random_rotation(&mut rng)
        } else {
            *group.rotation(GroupElementId(rng.random_range(0..group.order())))
        };
        let motion = if config.identity_motions {
            RigidTransform::identity()
        } else {
            RigidTransform::new(rotation, random_translation(&mut rng))
        };
        let (cloud, poses) = moved(part, &motion);
        let out = stack.forward(&cloud, &fin, Some(&feed_for(&mut rng, part_poses, &poses)?))?;
        max_inv = max_inv.max(base.max_abs_diff_at(&out, &outside));
        scale = scale.max(out.max_abs());

        let a = if config.identity_motions {
            GroupElementId::IDENTITY
        } else {
            GroupElementId(rng.random_range(0..group.order()))
        };
        let shift = if config.identity_motions { Vec3::zeros() } else { random_translation(&mut rng) };
        let motion = RigidTransform::new(*group.rotation(a), shift);
        let (cloud, poses) = moved(part, &motion);
        let out = stack.forward(&cloud, &fin, Some(&feed_for(&mut rng, part_poses, &poses)?))?;
        max_eq = max_eq.max(base.act(a).max_abs_diff_at(&out, &inside));
        max_inv = max_inv.max(base.max_abs_diff_at(&out, &outside));
        scale = scale.max(out.max_abs());
    }
    Ok(VerifyReport {
        trials: config.trials,
        max_invariance_violation: max_inv,
        max_equivariance_violation: max_eq,
        feature_scale: scale,
        tol: config.tol,
        passed: max_inv <= config.tol && max_eq <= config.tol,
    })
}
