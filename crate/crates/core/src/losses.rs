//! Self-supervised objective: min-of-N reconstruction loss over group
//! hypotheses plus the point-based joint regularizer, and analytic pose
//! gradients of its frozen-correspondence surrogate.
//!
//! Losses use squared Euclidean Chamfer. A [`Surrogate`] freezes every
//! nearest-neighbour pair at one pose. It equals the true objective there and
//! bounds it from above elsewhere (re-matching can only shorten a nearest
//! distance), so a step that lowers the surrogate lowers the objective.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{chamfer_points, diameter, ChamferMode, ChamferNorm, CloudError, NeighborIndex, PointCloud};
use crate::kinematics::{ArticulatedModel, ArticulatedPose, Joint, JointKind, KinematicError};
use crate::rotgroup::GroupElementId;
use crate::se3::{exp_so3, RigidTransform, Vec3};

/// Joint samples per revolute joint.
pub const DEFAULT_JOINT_SAMPLES: usize = 16;
/// Half length of the sampled joint segment, relative to object diameter.
pub const DEFAULT_HALF_LEN_RATIO: f64 = 0.25;
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("joint {parent}→{child} is not revolute")]
    NotRevolute { parent: usize, child: usize },
    #[error("no pose hypotheses given")]
    NoHypotheses,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Kinematic(#[from] KinematicError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_g_loss: Vec<f64>,
    pub g0: GroupElementId,
    #[serde(rename = "L_rec")]
    pub l_rec: f64,
    #[serde(rename = "L_reg")]
    pub l_reg: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `K_v` points `pivot + s_k · axis`, `s_k` evenly spaced over
/// `[−half_len, half_len]` (the pivot alone when `K_v = 1`).
pub fn joint_points(joint: &Joint, k_v: usize, half_len: f64) -> Result<Vec<Vec3>, LossError> {
    if joint.kind != JointKind::Revolute {
        return Err(LossError::NotRevolute {
            parent: joint.parent,
            child: joint.child,
        });
    }
    Ok(match k_v {
        0 => Vec::new(),
        1 => vec![joint.pivot],
        _ => (0..k_v)
            .map(|k| {
                let s = -half_len + 2.0 * half_len * k as f64 / (k_v - 1) as f64;
                joint.pivot + joint.axis * s
            })
            .collect(),
    })
}

/// Joint regularizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegSettings {
    pub k_v: usize,
    pub half_len: f64,
}

impl RegSettings {
    /// Defaults scaled to the model's assembled diameter.
    pub fn for_model(model: &ArticulatedModel) -> Self {
        RegSettings {
            k_v: DEFAULT_JOINT_SAMPLES,
            half_len: DEFAULT_HALF_LEN_RATIO * diameter(model.assembled().points()),
        }
    }
}

/// Joint-constraint loss for one group hypothesis.
///
/// For every revolute edge `(a, b)` with joint samples `V`:
/// `d(V, Z¹_a) + d(V, Z¹_b) + d(V, Z²_a) + d(V, Z²_b)` with `d` the
/// unidirectional squared Chamfer from `V`. `Z¹` are the assembled parts,
/// `Z²` the parts articulated with the base fixed. The `Z²` terms are taken
/// in the parent's articulated frame, where the joint line sits at rest, so
/// `d(V, Z²_a) = d(V, Z¹_a)` and only the child's own joint state enters.
/// Prismatic edges contribute nothing.
pub fn reg_loss(model: &ArticulatedModel, pose: &ArticulatedPose, settings: RegSettings) -> Result<f64, LossError> {
    check_states(model, pose)?;
    reg_value(model, model.assembly(), &pose.joint_states, settings)
}

fn check_states(model: &ArticulatedModel, pose: &ArticulatedPose) -> Result<(), LossError> {
    if pose.joint_states.len() != model.num_parts() {
        return Err(KinematicError::MissingJointState {
            expected: model.num_parts(),
            found: pose.joint_states.len(),
        }
        .into());
    }
    Ok(())
}

fn reg_value(model: &ArticulatedModel, assembly: &[Vec3], states: &[f64], settings: RegSettings) -> Result<f64, LossError> {
    let mut total = 0.0;
    for joint in model.joints().filter(|j| j.kind == JointKind::Revolute) {
        let v = joint_points(joint, settings.k_v, settings.half_len)?;
        if v.is_empty() {
            continue;
        }
        let za: Vec<Vec3> = model.part(joint.parent).points().iter().map(|z| z + assembly[joint.parent]).collect();
        let zb: Vec<Vec3> = model.part(joint.child).points().iter().map(|z| z + assembly[joint.child]).collect();
        let art = joint.transform(states[joint.child]);
        let zb2 = art.apply_all(&zb);
        let uni = |target: &[Vec3]| chamfer_points(&v, target, ChamferMode::Uni, ChamferNorm::L2Sq);
        total += 2.0 * uni(&za)? + uni(&zb)? + uni(&zb2)?;
    }
    Ok(total)
}

/// Evaluates every hypothesis and selects `g0` by the min-of-N rule (lowest
/// index on ties); `L_reg` is taken at `g0`.
pub fn rec_loss(
    x: &PointCloud,
    model: &ArticulatedModel,
    hyps: &[ArticulatedPose],
    mode: ChamferMode,
    lambda: f64,
    settings: RegSettings,
) -> Result<LossReport, LossError> {
    if hyps.is_empty() {
        return Err(LossError::NoHypotheses);
    }
    let x_index = x.index();
    let per_g_loss = hyps
        .par_iter()
        .map(|h| {
            let (_, y) = model.posed(h)?;
            Ok(reconstruction(&x_index, y.points(), mode)?)
        })
        .collect::<Result<Vec<f64>, LossError>>()?;
    report_from_losses(model, hyps, per_g_loss, lambda, settings)
}

/// Builds a report for already evaluated per-hypothesis losses.
pub fn report_from_losses(
    model: &ArticulatedModel,
    hyps: &[ArticulatedPose],
    per_g_loss: Vec<f64>,
    lambda: f64,
    settings: RegSettings,
) -> Result<LossReport, LossError> {
    let (g0, l_rec) = per_g_loss
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (g, l)| if l < best.1 { (g, l) } else { best });
    let l_reg = reg_loss(model, &hyps[g0], settings)?;
    Ok(LossReport {
        per_g_loss,
        g0: GroupElementId(g0),
        l_rec,
        l_reg,
        total: l_rec + lambda * l_reg,
        lambda,
    })
}

fn reconstruction(x_index: &NeighborIndex, y: &[Vec3], mode: ChamferMode) -> Result<f64, CloudError> {
    crate::cloud::chamfer_indexed(x_index, y, mode, ChamferNorm::L2Sq)
}

/// Optimization variables: articulated pose plus assembly translations.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    pub pose: ArticulatedPose,
    pub assembly: Vec<Vec3>,
}

/// Which blocks a gradient step may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamMask {
    pub base_rotation: bool,
    pub base_translation: bool,
    pub joint_states: bool,
    pub assembly: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        base_rotation: true,
        base_translation: true,
        joint_states: true,
        assembly: true,
    };
}

/// Gradient in the step parameterization: the rotation block is the
/// derivative with respect to a left so(3) increment, `R ← exp(ω) R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseGradient {
    pub base_rotation: Vec3,
    pub base_translation: Vec3,
    /// One entry per part; the root entry is always zero.
    pub joint_states: Vec<f64>,
    pub assembly: Vec<Vec3>,
}

impl PoseGradient {
    fn zeros(k: usize) -> Self {
        PoseGradient {
            base_rotation: Vec3::zeros(),
            base_translation: Vec3::zeros(),
            joint_states: vec![0.0; k],
            assembly: vec![Vec3::zeros(); k],
        }
    }

    pub fn masked(mut self, mask: ParamMask) -> Self {
        if !mask.base_rotation {
            self.base_rotation = Vec3::zeros();
        }
        if !mask.base_translation {
            self.base_translation = Vec3::zeros();
        }
        if !mask.joint_states {
            self.joint_states.iter_mut().for_each(|s| *s = 0.0);
        }
        if !mask.assembly {
            self.assembly.iter_mut().for_each(|p| *p = Vec3::zeros());
        }
        self
    }

    pub fn norm(&self) -> f64 {
        (self.base_rotation.norm_squared()
            + self.base_translation.norm_squared()
            + self.joint_states.iter().map(|s| s * s).sum::<f64>()
            + self.assembly.iter().map(|p| p.norm_squared()).sum::<f64>())
        .sqrt()
    }

    /// Flattened `[ω, t, s_0..s_K, p_0..p_K]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.base_rotation.iter().chain(self.base_translation.iter()).copied().collect();
        v.extend(&self.joint_states);
        v.extend(self.assembly.iter().flat_map(|p| p.iter().copied()));
        v
    }
}

impl PoseGradient {
    /// Inverse of [`PoseGradient::to_vec`] for `k` parts.
    pub fn from_vec(k: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), 6 + 4 * k, "flattened gradient length");
        PoseGradient {
            base_rotation: Vec3::new(v[0], v[1], v[2]),
            base_translation: Vec3::new(v[3], v[4], v[5]),
            joint_states: v[6..6 + k].to_vec(),
            assembly: (0..k).map(|i| Vec3::new(v[6 + k + 3 * i], v[7 + k + 3 * i], v[8 + k + 3 * i])).collect(),
        }
    }
}

impl PoseState {
    pub fn new(pose: ArticulatedPose, assembly: Vec<Vec3>) -> Self {
        PoseState { pose, assembly }
    }

    /// Moves by `−step · direction` in the step parameterization.
    pub fn retract(&self, direction: &PoseGradient, step: f64) -> PoseState {
        let base = &self.pose.base;
        let rotation = exp_so3(&(-step * direction.base_rotation)) * base.rotation;
        let translation = base.translation - step * direction.base_translation;
        PoseState {
            pose: ArticulatedPose::new(
                RigidTransform::new(rotation, translation),
                self.pose
                    .joint_states
                    .iter()
                    .zip(&direction.joint_states)
                    .map(|(s, g)| s - step * g)
                    .collect(),
            ),
            assembly: self.assembly.iter().zip(&direction.assembly).map(|(p, g)| p - step * g).collect(),
        }
    }

    /// Moves by `+h` along flattened coordinate `index` (see
    /// [`PoseGradient::to_vec`]).
    pub fn nudge(&self, index: usize, h: f64) -> PoseState {
        let k = self.assembly.len();
        let mut dir = PoseGradient::zeros(k);
        match index {
            0..=2 => dir.base_rotation[index] = 1.0,
            3..=5 => dir.base_translation[index - 3] = 1.0,
            i if i < 6 + k => dir.joint_states[i - 6] = 1.0,
            i => dir.assembly[(i - 6 - k) / 3][(i - 6 - k) % 3] = 1.0,
        }
        self.retract(&dir, -h)
    }

    pub fn num_params(&self) -> usize {
        6 + 4 * self.assembly.len()
    }
}

/// Observation, model and weights of the full objective.
pub struct Objective<'a> {
    x: &'a PointCloud,
    x_index: NeighborIndex,
    model: &'a ArticulatedModel,
    mode: ChamferMode,
    lambda: f64,
    settings: RegSettings,
    /// `(part, local point)` of every reconstructed point, in output order.
    model_points: Vec<(usize, Vec3)>,
}

/// True objective value split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValue {
    pub rec: f64,
    pub reg: f64,
    pub total: f64,
}

impl<'a> Objective<'a> {
    pub fn new(x: &'a PointCloud, model: &'a ArticulatedModel, mode: ChamferMode, lambda: f64, settings: RegSettings) -> Self {
        let model_points = model
            .parts()
            .iter()
            .enumerate()
            .flat_map(|(i, part)| part.points().iter().map(move |z| (i, *z)))
            .collect();
        Objective {
            x,
            x_index: x.index(),
            model,
            mode,
            lambda,
            settings,
            model_points,
        }
    }

    pub fn model(&self) -> &ArticulatedModel {
        self.model
    }

    pub fn observation(&self) -> &PointCloud {
        self.x
    }

    pub fn mode(&self) -> ChamferMode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn settings(&self) -> RegSettings {
        self.settings
    }

    pub fn part_poses(&self, state: &PoseState) -> Result<Vec<RigidTransform>, LossError> {
        check_states(self.model, &state.pose)?;
        let a = self.model.articulations(&state.pose.joint_states)?;
        Ok(a.iter()
            .zip(&state.assembly)
            .map(|(ai, p)| state.pose.base.compose(ai).compose(&RigidTransform::from_translation(*p)))
            .collect())
    }

    pub fn reconstruct(&self, state: &PoseState) -> Result<Vec<Vec3>, LossError> {
        let poses = self.part_poses(state)?;
        Ok(self.model_points.iter().map(|(i, z)| poses[*i].apply(z)).collect())
    }

    /// Reconstruction term alone.
    pub fn rec_value(&self, state: &PoseState) -> Result<f64, LossError> {
        Ok(reconstruction(&self.x_index, &self.reconstruct(state)?, self.mode)?)
    }

    pub fn value(&self, state: &PoseState) -> Result<LossValue, LossError> {
        let rec = self.rec_value(state)?;
        let reg = if self.lambda == 0.0 {
            0.0
        } else {
            reg_value(self.model, &state.assembly, &state.pose.joint_states, self.settings)?
        };
        Ok(LossValue {
            rec,
            reg,
            total: rec + self.lambda * reg,
        })
    }

    /// Freezes all nearest-neighbour correspondences at `state`.
    pub fn freeze(&self, state: &PoseState) -> Result<Surrogate<'_, 'a>, LossError> {
        let y = self.reconstruct(state)?;
        let y_index = NeighborIndex::build(&y);
        let n = self.x.len() as f64;
        let m = y.len() as f64;
        let mut rec_pairs: Vec<(usize, Vec3, f64)> = self
            .x
            .points()
            .iter()
            .map(|p| {
                let (idx, _) = y_index.nearest(p).expect("reconstruction is non-empty");
                (idx, *p, 1.0 / n)
            })
            .collect();
        if self.mode == ChamferMode::Bi {
            rec_pairs.extend(y.iter().enumerate().map(|(idx, q)| {
                let (j, _) = self.x_index.nearest(q).expect("observation is non-empty");
                (idx, self.x.points()[j], 1.0 / m)
            }));
        }
        let mut reg_pairs = Vec::new();
        if self.lambda != 0.0 {
            for joint in self.model.joints().filter(|j| j.kind == JointKind::Revolute) {
                let v = joint_points(joint, self.settings.k_v, self.settings.half_len)?;
                if v.is_empty() {
                    continue;
                }
                let w = self.lambda / v.len() as f64;
                let (a, b) = (joint.parent, joint.child);
                let za: Vec<Vec3> = self.model.part(a).points().iter().map(|z| z + state.assembly[a]).collect();
                let zb: Vec<Vec3> = self.model.part(b).points().iter().map(|z| z + state.assembly[b]).collect();
                let zb2 = joint.transform(state.pose.joint_states[b]).apply_all(&zb);
                let (ia, ib, ib2) = (NeighborIndex::build(&za), NeighborIndex::build(&zb), NeighborIndex::build(&zb2));
                for vk in &v {
                    let near = |idx: &NeighborIndex| idx.nearest(vk).expect("part is non-empty").0;
                    reg_pairs.push(RegPair { vk: *vk, part: a, local: self.model.part(a).points()[near(&ia)], joint: None, weight: 2.0 * w });
                    reg_pairs.push(RegPair { vk: *vk, part: b, local: self.model.part(b).points()[near(&ib)], joint: None, weight: w });
                    reg_pairs.push(RegPair { vk: *vk, part: b, local: self.model.part(b).points()[near(&ib2)], joint: Some(*joint), weight: w });
                }
            }
        }
        Ok(Surrogate {
            objective: self,
            rec_pairs,
            reg_pairs,
        })
    }
}

/// One frozen regularizer pair: `weight · ‖v − J(s)(local + p)‖²`, with `J`
/// the identity when `joint` is `None`.
#[derive(Debug, Clone, Copy)]
struct RegPair {
    vk: Vec3,
    part: usize,
    local: Vec3,
    joint: Option<Joint>,
    weight: f64,
}

/// Objective with correspondences frozen at one pose.
pub struct Surrogate<'o, 'a> {
    objective: &'o Objective<'a>,
    /// `(reconstructed point index, target, weight)`
    rec_pairs: Vec<(usize, Vec3, f64)>,
    reg_pairs: Vec<RegPair>,
}

impl Surrogate<'_, '_> {
    pub fn value(&self, state: &PoseState) -> Result<f64, LossError> {
        let poses = self.objective.part_poses(state)?;
        let pts = &self.objective.model_points;
        let rec: f64 = self
            .rec_pairs
            .iter()
            .map(|(idx, target, w)| {
                let (i, z) = &pts[*idx];
                w * (poses[*i].apply(z) - target).norm_squared()
            })
            .sum();
        let reg: f64 = self
            .reg_pairs
            .iter()
            .map(|p| {
                let w = p.local + state.assembly[p.part];
                let w = match p.joint {
                    Some(j) => j.transform(state.pose.joint_states[j.child]).apply(&w),
                    None => w,
                };
                p.weight * (p.vk - w).norm_squared()
            })
            .sum();
        Ok(rec + reg)
    }

    /// Gauss–Newton normal equations of [`Surrogate::value`] in the
    /// flattened step parameterization: `(H, g)` with `g` the gradient and
    /// `H = 2 Σ w JᵀJ`, so `H⁻¹ g` is the Gauss–Newton step.
    pub fn normal_equations(&self, state: &PoseState) -> Result<(DMatrix<f64>, DVector<f64>), LossError> {
        let model = self.objective.model;
        let k = model.num_parts();
        let n = 6 + 4 * k;
        let a = model.articulations(&state.pose.joint_states)?;
        let base = &state.pose.base;
        let poses = self.objective.part_poses(state)?;
        let world: Vec<Option<(JointKind, Vec3, Vec3)>> = (0..k)
            .map(|c| {
                model.joint(c).map(|j| {
                    let carrier = base.compose(&a[j.parent]);
                    (j.kind, carrier.apply_vector(&j.axis), carrier.apply(&j.pivot))
                })
            })
            .collect();
        let paths: Vec<Vec<usize>> = (0..k).map(|i| model.tree().path_from_root(i)).collect();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        // Sparse Jacobian row block: (column, dy/dθ_column) pairs.
        let mut cols: Vec<(usize, Vec3)> = Vec::with_capacity(n);
        let mut accumulate = |cols: &[(usize, Vec3)], r: Vec3, w: f64| {
            for &(ci, ji) in cols {
                g[ci] += 2.0 * w * ji.dot(&r);
                for &(cj, jj) in cols {
                    h[(ci, cj)] += 2.0 * w * ji.dot(&jj);
                }
            }
        };
        let pts = &self.objective.model_points;
        for (idx, target, w) in &self.rec_pairs {
            let (i, z) = &pts[*idx];
            let y = poses[*i].apply(z);
            cols.clear();
            let arm = y - base.translation;
            for (c, e) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
                cols.push((c, e.cross(&arm)));
                cols.push((3 + c, *e));
                cols.push((6 + k + 3 * i + c, poses[*i].rotation * e));
            }
            for &c in &paths[*i] {
                let (kind, axis, pivot) = world[c].expect("non-root parts have joints");
                let d = match kind {
                    JointKind::Revolute => axis.cross(&(y - pivot)),
                    JointKind::Prismatic => axis,
                };
                cols.push((6 + c, d));
            }
            accumulate(&cols, y - target, *w);
        }
        for p in &self.reg_pairs {
            let w0 = p.local + state.assembly[p.part];
            cols.clear();
            let w = match p.joint {
                Some(j) => {
                    let t = j.transform(state.pose.joint_states[j.child]);
                    let w = t.apply(&w0);
                    for (c, e) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
                        cols.push((6 + k + 3 * p.part + c, t.rotation * e));
                    }
                    cols.push((6 + j.child, j.axis.cross(&(w - j.pivot))));
                    w
                }
                None => {
                    for (c, e) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
                        cols.push((6 + k + 3 * p.part + c, *e));
                    }
                    w0
                }
            };
            accumulate(&cols, w - p.vk, p.weight);
        }
        Ok((h, g))
    }

    /// Analytic gradient of [`Surrogate::value`].
    pub fn gradient(&self, state: &PoseState) -> Result<PoseGradient, LossError> {
        let model = self.objective.model;
        let k = model.num_parts();
        let a = model.articulations(&state.pose.joint_states)?;
        let base = &state.pose.base;
        let poses = self.objective.part_poses(state)?;
        // World-space axis and pivot of every joint at the current state.
        let world: Vec<Option<(JointKind, Vec3, Vec3)>> = (0..k)
            .map(|c| {
                model.joint(c).map(|j| {
                    let carrier = base.compose(&a[j.parent]);
                    (j.kind, carrier.apply_vector(&j.axis), carrier.apply(&j.pivot))
                })
            })
            .collect();
        let paths: Vec<Vec<usize>> = (0..k).map(|i| model.tree().path_from_root(i)).collect();
        let mut grad = PoseGradient::zeros(k);
        let mut part_sums = vec![Vec3::zeros(); k];
        let pts = &self.objective.model_points;
        for (idx, target, w) in &self.rec_pairs {
            let (i, z) = &pts[*idx];
            let y = poses[*i].apply(z);
            let g = 2.0 * w * (y - target);
            grad.base_rotation += (y - base.translation).cross(&g);
            grad.base_translation += g;
            part_sums[*i] += g;
            for &c in &paths[*i] {
                let (kind, axis, pivot) = world[c].expect("non-root parts have joints");
                grad.joint_states[c] += match kind {
                    JointKind::Revolute => axis.cross(&(y - pivot)).dot(&g),
                    JointKind::Prismatic => axis.dot(&g),
                };
            }
        }
        for (i, sum) in part_sums.iter().enumerate() {
            grad.assembly[i] += poses[i].rotation.inverse() * sum;
        }
        for p in &self.reg_pairs {
            let w0 = p.local + state.assembly[p.part];
            let (w, art) = match p.joint {
                Some(j) => {
                    let t = j.transform(state.pose.joint_states[j.child]);
                    (t.apply(&w0), Some((j, t)))
                }
                None => (w0, None),
            };
            // d/dw of weight · ‖v − w‖²
            let g = -2.0 * p.weight * (p.vk - w);
            match art {
                Some((j, t)) => {
                    grad.assembly[p.part] += t.rotation.inverse() * g;
                    grad.joint_states[j.child] += j.axis.cross(&(w - j.pivot)).dot(&g);
                }
                None => grad.assembly[p.part] += g,
            }
        }
        Ok(grad)
    }
}
