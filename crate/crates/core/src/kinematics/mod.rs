//! Articulated object model: kinematic chains, 1-DOF joints and forward
//! articulation across the canonical part, canonical object and observed
//! spaces.
//!
//! A part `i` with canonical shape `Z_i` is placed in the canonical object
//! space by its assembly translation `p_i`, articulated by the joints on its
//! path from the root (`A_i`) and finally moved by the base transform:
//! `P_i = base ∘ A_i ∘ T(p_i)`. Joint axes and pivots live in the canonical
//! object space at rest.

mod chain;
mod manifest;

pub use chain::{adjacency_confidence, infer_chain, maximum_spanning_tree, min_distances, root_tree, KinematicTree};
pub use manifest::{load_model, save_model, EdgeRecord, ModelManifest};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};
use crate::se3::{rotation_about_line, translation_about_line, AxisAngle, RigidTransform, Se3Error, Vec3};

/// Minimum relative rotation for a revolute joint estimate.
pub const MIN_REVOLUTE_MOTION_DEG: f64 = 1.0;
/// Minimum relative translation for a prismatic joint estimate.
pub const MIN_PRISMATIC_MOTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum KinematicError {
    #[error("need at least two parts, got {0}")]
    TooFewParts(usize),
    #[error("part index {0} out of range")]
    PartOutOfRange(usize),
    #[error("not a spanning tree: {0}")]
    NotATree(String),
    #[error("expected {expected} joint states, got {found}")]
    MissingJointState { expected: usize, found: usize },
    #[error("relative motion too small to define a joint ({0})")]
    DegenerateMotion(f64),
    #[error("joint state {state} of part {part} outside limits [{lo}, {hi}]")]
    OutOfLimits { part: usize, state: f64, lo: f64, hi: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Se3(#[from] Se3Error),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

impl std::fmt::Display for JointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
        })
    }
}

/// 1-DOF joint between `parent` and `child`. `pivot` is any point of the
/// axis line and is unused for prismatic joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Vec3,
    pub pivot: Vec3,
    pub parent: usize,
    pub child: usize,
    /// Inclusive state range (radians or scene units).
    pub limits: Option<[f64; 2]>,
}

impl Joint {
    pub fn revolute(parent: usize, child: usize, axis: Vec3, pivot: Vec3) -> Result<Joint, KinematicError> {
        Self::build(JointKind::Revolute, parent, child, axis, pivot)
    }

    pub fn prismatic(parent: usize, child: usize, axis: Vec3) -> Result<Joint, KinematicError> {
        Self::build(JointKind::Prismatic, parent, child, axis, Vec3::zeros())
    }

    fn build(kind: JointKind, parent: usize, child: usize, axis: Vec3, pivot: Vec3) -> Result<Joint, KinematicError> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Se3Error::BadAxis(n).into());
        }
        if !pivot.iter().all(|v| v.is_finite()) {
            return Err(KinematicError::InvalidModel("pivot is not finite".into()));
        }
        Ok(Joint {
            kind,
            // Already-unit axes are kept bit-exact so models round-trip.
            axis: if (n - 1.0).abs() <= 1e-12 { axis } else { axis / n },
            pivot,
            parent,
            child,
            limits: None,
        })
    }

    pub fn with_limits(mut self, lo: f64, hi: f64) -> Joint {
        self.limits = Some([lo, hi]);
        self
    }

    /// Articulation of the child subtree at `state`.
    pub fn transform(&self, state: f64) -> RigidTransform {
        match self.kind {
            JointKind::Revolute => rotation_about_line(&self.axis, &self.pivot, state),
            JointKind::Prismatic => translation_about_line(&self.axis, state),
        }
        .expect("joint axis is normalized at construction")
    }

    pub fn clamp(&self, state: f64) -> f64 {
        match self.limits {
            Some([lo, hi]) => state.clamp(lo, hi),
            None => state,
        }
    }

    /// Same joint with axis and pivot mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Joint {
        Joint {
            axis: t.apply_vector(&self.axis),
            pivot: t.apply(&self.pivot),
            ..*self
        }
    }
}

/// Canonical part shapes, assembly translations, chain and joints.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedModel {
    parts: Vec<PointCloud>,
    assembly: Vec<Vec3>,
    tree: KinematicTree,
    /// `joints[i]` drives part `i`; `None` for the root.
    joints: Vec<Option<Joint>>,
}

impl ArticulatedModel {
    /// `joints` must contain exactly one joint per tree edge, with matching
    /// parent and child.
    pub fn new(parts: Vec<PointCloud>, assembly: Vec<Vec3>, tree: KinematicTree, joints: Vec<Joint>) -> Result<Self, KinematicError> {
        let k = parts.len();
        if k < 2 {
            return Err(KinematicError::TooFewParts(k));
        }
        if assembly.len() != k || tree.num_parts() != k {
            return Err(KinematicError::InvalidModel(format!(
                "{k} parts, {} assembly offsets, tree over {} parts",
                assembly.len(),
                tree.num_parts()
            )));
        }
        let mut slots: Vec<Option<Joint>> = vec![None; k];
        for joint in joints {
            if joint.child >= k || tree.parent(joint.child) != Some(joint.parent) {
                return Err(KinematicError::InvalidModel(format!(
                    "joint {}→{} is not a tree edge",
                    joint.parent, joint.child
                )));
            }
            if slots[joint.child].replace(joint).is_some() {
                return Err(KinematicError::InvalidModel(format!("two joints drive part {}", joint.child)));
            }
        }
        if let Some((child, _)) = slots.iter().enumerate().find(|(c, j)| j.is_none() && *c != tree.root()) {
            return Err(KinematicError::InvalidModel(format!("no joint drives part {child}")));
        }
        Ok(ArticulatedModel {
            parts,
            assembly,
            tree,
            joints: slots,
        })
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[PointCloud] {
        &self.parts
    }

    pub fn part(&self, i: usize) -> &PointCloud {
        &self.parts[i]
    }

    pub fn assembly(&self) -> &[Vec3] {
        &self.assembly
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn joint(&self, part: usize) -> Option<&Joint> {
        self.joints[part].as_ref()
    }

    /// Joints in child order.
    pub fn joints(&self) -> impl Iterator<Item = &Joint> {
        self.joints.iter().flatten()
    }

    pub fn with_assembly(&self, assembly: Vec<Vec3>) -> Result<Self, KinematicError> {
        if assembly.len() != self.parts.len() {
            return Err(KinematicError::InvalidModel("assembly length differs from part count".into()));
        }
        Ok(ArticulatedModel { assembly, ..self.clone() })
    }

    pub fn with_joints(&self, joints: Vec<Joint>) -> Result<Self, KinematicError> {
        ArticulatedModel::new(self.parts.clone(), self.assembly.clone(), self.tree.clone(), joints)
    }

    /// Labeled cloud `{Z_i + p_i}`.
    pub fn assembled(&self) -> PointCloud {
        self.posed(&ArticulatedPose::rest(self.num_parts()))
            .expect("rest pose covers every part")
            .1
    }

    /// Minimum gap between the two parts of every tree edge in the assembled
    /// canonical object.
    pub fn contact_gaps(&self) -> Vec<((usize, usize), f64)> {
        let placed: Vec<PointCloud> = (0..self.num_parts())
            .map(|i| self.parts[i].translated(&self.assembly[i]))
            .collect();
        let d = min_distances(&placed);
        self.tree.edges().iter().map(|&(p, c)| ((p, c), d[p][c])).collect()
    }

    /// Per-part articulation `A_i` (without base or assembly).
    pub fn articulations(&self, states: &[f64]) -> Result<Vec<RigidTransform>, KinematicError> {
        let k = self.num_parts();
        if states.len() != k {
            return Err(KinematicError::MissingJointState {
                expected: k,
                found: states.len(),
            });
        }
        let mut a = vec![RigidTransform::identity(); k];
        // Reversed `order` visits ancestors before descendants.
        for &part in self.tree.order().iter().rev() {
            if let (Some(parent), Some(joint)) = (self.tree.parent(part), self.joints[part].as_ref()) {
                a[part] = a[parent].compose(&joint.transform(states[part]));
            }
        }
        Ok(a)
    }

    /// Per-part poses `P_i = base ∘ A_i ∘ T(p_i)`.
    pub fn part_poses(&self, pose: &ArticulatedPose) -> Result<Vec<RigidTransform>, KinematicError> {
        let a = self.articulations(&pose.joint_states)?;
        Ok(a.iter()
            .zip(&self.assembly)
            .map(|(ai, p)| pose.base.compose(ai).compose(&RigidTransform::from_translation(*p)))
            .collect())
    }

    /// Part poses and the labeled posed cloud `∪ {R_i Z_i + t_i}`.
    pub fn posed(&self, pose: &ArticulatedPose) -> Result<(Vec<RigidTransform>, PointCloud), KinematicError> {
        let poses = self.part_poses(pose)?;
        let moved: Vec<Vec<Vec3>> = self.parts.iter().zip(&poses).map(|(z, p)| p.apply_all(z.points())).collect();
        let cloud = PointCloud::from_parts(moved.iter().map(Vec::as_slice))?;
        Ok((poses, cloud))
    }

    /// All joints in the observed frame at `pose`: each joint is carried by
    /// `base ∘ A_parent`.
    pub fn world_joints(&self, pose: &ArticulatedPose) -> Result<Vec<Joint>, KinematicError> {
        let a = self.articulations(&pose.joint_states)?;
        Ok(self
            .joints()
            .map(|j| j.transformed(&pose.base.compose(&a[j.parent])))
            .collect())
    }

    pub fn check_limits(&self, pose: &ArticulatedPose) -> Result<(), KinematicError> {
        for joint in self.joints() {
            let s = pose.joint_states[joint.child];
            if let Some([lo, hi]) = joint.limits {
                if s < lo || s > hi {
                    return Err(KinematicError::OutOfLimits {
                        part: joint.child,
                        state: s,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Base transform plus one joint state per part (the root entry is unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedPose {
    pub base: RigidTransform,
    pub joint_states: Vec<f64>,
}

impl ArticulatedPose {
    pub fn rest(num_parts: usize) -> Self {
        ArticulatedPose {
            base: RigidTransform::identity(),
            joint_states: vec![0.0; num_parts],
        }
    }

    pub fn new(base: RigidTransform, joint_states: Vec<f64>) -> Self {
        ArticulatedPose { base, joint_states }
    }
}

/// Convenience wrapper over [`ArticulatedModel::posed`].
pub fn forward(model: &ArticulatedModel, pose: &ArticulatedPose) -> Result<(Vec<RigidTransform>, PointCloud), KinematicError> {
    model.posed(pose)
}

/// Joint line estimated from one part's pose at two articulation states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointEstimate {
    pub kind: JointKind,
    pub axis: Vec3,
    /// Point of the axis line closest to the origin (zero for prismatic).
    pub pivot: Vec3,
    /// Rotation angle (radians) or translation length of the motion.
    pub magnitude: f64,
}

/// Recovers the joint that carries `a` to `b`.
///
/// Revolute: `u` is the axis of `ΔR = R_b R_aᵀ`, and the pivot is the
/// minimum-norm least-squares solution of `(I − ΔR) p = Δt`. Prismatic:
/// `u = Δt / ‖Δt‖`.
pub fn estimate_joint_from_motion(a: &RigidTransform, b: &RigidTransform, kind: JointKind) -> Result<JointEstimate, KinematicError> {
    let delta = b.compose(&a.inverse());
    match kind {
        JointKind::Revolute => {
            let aa = AxisAngle::from_rotation(&delta.rotation);
            if aa.angle.to_degrees() < MIN_REVOLUTE_MOTION_DEG {
                return Err(KinematicError::DegenerateMotion(aa.angle.to_degrees()));
            }
            let m = nalgebra::Matrix3::identity() - delta.rotation.matrix();
            let pinv = m
                .svd(true, true)
                .pseudo_inverse(1e-9)
                .map_err(|e| KinematicError::InvalidModel(e.to_string()))?;
            Ok(JointEstimate {
                kind,
                axis: aa.axis,
                pivot: pinv * delta.translation,
                magnitude: aa.angle,
            })
        }
        JointKind::Prismatic => {
            let n = delta.translation.norm();
            if n < MIN_PRISMATIC_MOTION {
                return Err(KinematicError::DegenerateMotion(n));
            }
            Ok(JointEstimate {
                kind,
                axis: delta.translation / n,
                pivot: Vec3::zeros(),
                magnitude: n,
            })
        }
    }
}

/// Aligns every joint axis with one shared direction: the dominant
/// eigenvector of `Σ u uᵀ`, signed to agree with each joint's own axis.
pub fn enforce_consistent_axes(joints: &mut [Joint]) {
    if joints.is_empty() {
        return;
    }
    let scatter = joints.iter().fold(nalgebra::Matrix3::zeros(), |m, j| m + j.axis * j.axis.transpose());
    let eig = scatter.symmetric_eigen();
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("3 eigenvalues");
    let shared: Vec3 = eig.eigenvectors.column(best).into_owned().normalize();
    for joint in joints {
        joint.axis = if joint.axis.dot(&shared) >= 0.0 { shared } else { -shared };
    }
}

/// Distance between the lines `p1 + s u1` and `p2 + s u2`; parallel lines
/// use the point-to-line distance.
pub fn line_distance(u1: &Vec3, p1: &Vec3, u2: &Vec3, p2: &Vec3) -> f64 {
    let u1 = u1.normalize();
    let u2 = u2.normalize();
    let w = p2 - p1;
    let cross = u1.cross(&u2);
    let sin = cross.norm();
    if sin < 1e-9 {
        (w - u1 * w.dot(&u1)).norm()
    } else {
        w.dot(&cross).abs() / sin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::exp_so3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn slab(x0: f64, x1: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..3 {
                pts.push(Vec3::new(x0 + (x1 - x0) * i as f64 / 4.0, j as f64 * 0.1, 0.0));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    /// Base slab on x ∈ [−0.5, 0], lid slab on x ∈ [0, 0.5], both centred
    /// in their part spaces; hinge along y through the origin.
    fn laptop() -> ArticulatedModel {
        let parts = vec![slab(-0.25, 0.25), slab(-0.25, 0.25)];
        let assembly = vec![Vec3::new(-0.25, 0.0, 0.0), Vec3::new(0.25, 0.0, 0.0)];
        let tree = KinematicTree::from_edges(2, 0, &[(0, 1)]).unwrap();
        let hinge = Joint::revolute(0, 1, Vec3::y(), Vec3::zeros()).unwrap();
        ArticulatedModel::new(parts, assembly, tree, vec![hinge]).unwrap()
    }

    fn drawer() -> ArticulatedModel {
        let parts = vec![slab(-0.25, 0.25), slab(-0.2, 0.2)];
        let assembly = vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.05)];
        let tree = KinematicTree::from_edges(2, 0, &[(0, 1)]).unwrap();
        let slide = Joint::prismatic(0, 1, Vec3::x()).unwrap();
        ArticulatedModel::new(parts, assembly, tree, vec![slide]).unwrap()
    }

    /// Chain 0 → 1 → 2 with two hinges.
    fn three_link() -> ArticulatedModel {
        let parts = vec![slab(0.0, 0.4), slab(0.0, 0.4), slab(0.0, 0.4)];
        let assembly = vec![Vec3::zeros(), Vec3::new(0.4, 0.0, 0.0), Vec3::new(0.8, 0.0, 0.0)];
        let tree = KinematicTree::from_edges(3, 0, &[(0, 1), (1, 2)]).unwrap();
        let j1 = Joint::revolute(0, 1, Vec3::z(), Vec3::new(0.4, 0.0, 0.0)).unwrap();
        let j2 = Joint::revolute(1, 2, Vec3::z(), Vec3::new(0.8, 0.0, 0.0)).unwrap();
        ArticulatedModel::new(parts, assembly, tree, vec![j1, j2]).unwrap()
    }

    #[test]
    fn rest_pose_is_assembled_object() {
        let m = laptop();
        let (_, posed) = forward(&m, &ArticulatedPose::rest(2)).unwrap();
        for (i, p) in posed.points().iter().enumerate() {
            let label = posed.labels().unwrap()[i];
            let local = m.part(label).points()[i - label * 15];
            assert_eq!(*p, local + m.assembly()[label]);
        }
    }

    #[test]
    fn laptop_lid_rotates_about_hinge() {
        let m = laptop();
        let theta = 90f64.to_radians();
        let (_, posed) = forward(&m, &ArticulatedPose::new(RigidTransform::identity(), vec![0.0, theta])).unwrap();
        let hinge = rotation_about_line(&Vec3::y(), &Vec3::zeros(), theta).unwrap();
        let assembled = m.assembled();
        for (i, label) in posed.labels().unwrap().iter().enumerate() {
            let want = if *label == 1 { hinge.apply(&assembled.points()[i]) } else { assembled.points()[i] };
            assert_relative_eq!(posed.points()[i], want, epsilon = 1e-12);
        }
        // Far lid edge (x = 0.5) swings to z = −0.5 under a right-handed turn about +y.
        let tip = posed.points()[15 + 12];
        assert_relative_eq!(tip, Vec3::new(0.0, 0.0, -0.5), epsilon = 1e-12);
    }

    #[test]
    fn drawer_slides_along_axis() {
        let m = drawer();
        let (_, posed) = forward(&m, &ArticulatedPose::new(RigidTransform::identity(), vec![0.0, 0.3])).unwrap();
        let rest = m.assembled();
        for (i, label) in posed.labels().unwrap().iter().enumerate() {
            let shift = if *label == 1 { Vec3::new(0.3, 0.0, 0.0) } else { Vec3::zeros() };
            assert_relative_eq!(posed.points()[i], rest.points()[i] + shift, epsilon = 1e-15);
        }
    }

    #[test]
    fn chain_composes_ancestor_joints() {
        let m = three_link();
        let states = vec![0.0, 0.5, -0.3];
        let a = m.articulations(&states).unwrap();
        let j1 = m.joint(1).unwrap().transform(0.5);
        let j2 = m.joint(2).unwrap().transform(-0.3);
        assert_eq!(a[1], j1);
        let want = j1.compose(&j2);
        assert_relative_eq!(a[2].rotation.matrix(), want.rotation.matrix(), epsilon = 1e-15);
        assert_relative_eq!(a[2].translation, want.translation, epsilon = 1e-15);
        // Link 2 still touches link 1 at the moved second hinge.
        let hinge2 = j1.apply(&Vec3::new(0.8, 0.0, 0.0));
        assert_relative_eq!(a[2].apply(&Vec3::new(0.8, 0.0, 0.0)), hinge2, epsilon = 1e-12);
    }

    #[test]
    fn missing_states_rejected() {
        let m = laptop();
        let pose = ArticulatedPose::new(RigidTransform::identity(), vec![0.0]);
        assert!(matches!(
            forward(&m, &pose),
            Err(KinematicError::MissingJointState { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn model_validation() {
        let m = laptop();
        let tree = m.tree().clone();
        assert!(ArticulatedModel::new(m.parts().to_vec(), m.assembly().to_vec(), tree.clone(), vec![]).is_err());
        let wrong = Joint::revolute(1, 0, Vec3::y(), Vec3::zeros()).unwrap();
        assert!(ArticulatedModel::new(m.parts().to_vec(), m.assembly().to_vec(), tree, vec![wrong]).is_err());
        assert!(Joint::revolute(0, 1, Vec3::zeros(), Vec3::zeros()).is_err());
    }

    #[test]
    fn limits_checked() {
        let m = laptop();
        let hinge = m.joint(1).unwrap().with_limits(0.0, 1.0);
        let m = m.with_joints(vec![hinge]).unwrap();
        assert!(m.check_limits(&ArticulatedPose::new(RigidTransform::identity(), vec![0.0, 0.5])).is_ok());
        assert!(matches!(
            m.check_limits(&ArticulatedPose::new(RigidTransform::identity(), vec![0.0, 1.5])),
            Err(KinematicError::OutOfLimits { part: 1, .. })
        ));
        assert_eq!(hinge.clamp(2.0), 1.0);
    }

    #[test]
    fn contact_gaps_along_edges() {
        let gaps = three_link().contact_gaps();
        assert_eq!(gaps.len(), 2);
        assert!(gaps.iter().all(|&(_, g)| g < 1e-12));
    }

    #[test]
    fn revolute_joint_recovered_from_motion() {
        let u0 = Vec3::new(1.0, 2.0, -0.5).normalize();
        let p0 = Vec3::new(0.3, -0.1, 0.7);
        let b = rotation_about_line(&u0, &p0, 30f64.to_radians()).unwrap();
        let est = estimate_joint_from_motion(&RigidTransform::identity(), &b, JointKind::Revolute).unwrap();
        assert!((est.axis - u0).norm() < 1e-8);
        assert!(line_distance(&est.axis, &est.pivot, &u0, &p0) < 1e-8);
        assert!(est.pivot.dot(&est.axis).abs() < 1e-8);
        assert_relative_eq!(est.magnitude, 30f64.to_radians(), epsilon = 1e-10);
    }

    #[test]
    fn prismatic_joint_recovered_from_motion() {
        let b = RigidTransform::from_translation(Vec3::new(0.0, 0.2, 0.0));
        let est = estimate_joint_from_motion(&RigidTransform::identity(), &b, JointKind::Prismatic).unwrap();
        assert_relative_eq!(est.axis, Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_motion_rejected() {
        let id = RigidTransform::identity();
        assert!(matches!(
            estimate_joint_from_motion(&id, &id, JointKind::Revolute),
            Err(KinematicError::DegenerateMotion(_))
        ));
        assert!(matches!(
            estimate_joint_from_motion(&id, &id, JointKind::Prismatic),
            Err(KinematicError::DegenerateMotion(_))
        ));
    }

    #[test]
    fn line_distance_cases() {
        let d = line_distance(&Vec3::x(), &Vec3::zeros(), &Vec3::y(), &Vec3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(d, 2.0, epsilon = 1e-15);
        let d = line_distance(&Vec3::z(), &Vec3::zeros(), &-Vec3::z(), &Vec3::new(3.0, 4.0, 9.0));
        assert_relative_eq!(d, 5.0, epsilon = 1e-15);
        assert_eq!(line_distance(&Vec3::z(), &Vec3::zeros(), &-Vec3::z(), &Vec3::new(0.0, 0.0, 4.0)), 0.0);
    }

    #[test]
    fn axes_made_consistent() {
        let mut joints = vec![
            Joint::revolute(0, 1, Vec3::new(1.0, 0.01, 0.0), Vec3::zeros()).unwrap(),
            Joint::revolute(0, 2, Vec3::new(-1.0, 0.0, 0.01), Vec3::zeros()).unwrap(),
        ];
        enforce_consistent_axes(&mut joints);
        assert_relative_eq!(joints[0].axis, -joints[1].axis, epsilon = 1e-15);
        assert!(joints[0].axis.dot(&Vec3::x()) > 0.999);
    }

    proptest! {
        #[test]
        fn common_base_motion_composes(w in proptest::array::uniform3(-3.0f64..3.0), t in proptest::array::uniform3(-2.0f64..2.0),
                                        s1 in -1.5f64..1.5, s2 in -1.5f64..1.5) {
            let m = three_link();
            let extra = RigidTransform::new(exp_so3(&Vec3::from(w)), Vec3::from(t));
            let pose = ArticulatedPose::new(RigidTransform::new(exp_so3(&Vec3::new(0.2, 0.1, -0.4)), Vec3::zeros()), vec![0.0, s1, s2]);
            let moved = ArticulatedPose::new(extra.compose(&pose.base), pose.joint_states.clone());
            let a = m.part_poses(&pose).unwrap();
            let b = m.part_poses(&moved).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                let want = extra.compose(pa);
                prop_assert!((want.rotation.matrix() - pb.rotation.matrix()).norm() < 1e-12);
                prop_assert!((want.translation - pb.translation).norm() < 1e-12);
            }
        }

        #[test]
        fn joints_recovered_from_forward(s in 0.1f64..2.5, w in proptest::array::uniform3(-3.0f64..3.0)) {
            let m = three_link();
            let base = RigidTransform::from_rotation(exp_so3(&Vec3::from(w)));
            let a = m.part_poses(&ArticulatedPose::new(base, vec![0.0, 0.0, 0.0])).unwrap();
            let b = m.part_poses(&ArticulatedPose::new(base, vec![0.0, s, 0.0])).unwrap();
            // Relative to the base part, the motion of part 1 is its joint.
            let rel_a = a[0].inverse().compose(&a[1]);
            let rel_b = b[0].inverse().compose(&b[1]);
            let est = estimate_joint_from_motion(&rel_a, &rel_b, JointKind::Revolute).unwrap();
            let joint = m.joint(1).unwrap().transformed(&a[0].inverse().compose(&base));
            prop_assert!(est.axis.cross(&joint.axis).norm() < 1e-6);
            prop_assert!(line_distance(&est.axis, &est.pivot, &joint.axis, &joint.pivot) < 1e-6);
        }
    }
}
