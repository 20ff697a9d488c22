//! Articulated pose estimation by analysis-by-synthesis: one hypothesis per
//! group element, joint states from a coordinate-wise grid search, budgeted
//! refinement, full refinement of the best few and min-of-N selection.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{ChamferMode, CloudError, NeighborIndex, PointCloud};
use crate::equivconv::{ConvError, ConvStack, EquivariantFeature, PerPointPose, Real};
use crate::kinematics::{ArticulatedModel, ArticulatedPose, Joint, JointKind, KinematicError};
use crate::losses::{report_from_losses, LossError, LossReport, Objective, ParamMask, PoseGradient, PoseState, RegSettings, DEFAULT_LAMBDA};
use crate::rotgroup::{GroupKind, RotationGroup};
use crate::se3::{RigidTransform, Vec3};

/// Grid cells per revolute joint.
pub const REVOLUTE_GRID: usize = 12;
/// Grid cells per prismatic joint.
pub const PRISMATIC_GRID: usize = 8;
/// Most step halvings per refinement iteration.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Kinematic(#[from] KinematicError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Conv(#[from] ConvError),
}

/// Search direction of a refinement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDirection {
    /// Gradient preconditioned by the Gauss–Newton matrix of the frozen
    /// surrogate.
    GaussNewton,
    /// Raw gradient.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub group: GroupKind,
    /// Refinement iterations of the selected hypothesis.
    pub iterations: usize,
    /// Refinement iterations of each budgeted hypothesis before selection.
    pub hypothesis_iterations: usize,
    /// Hypotheses refined before selection, ranked by their loss after
    /// screening.
    pub refine_top: usize,
    /// Refinement iterations every hypothesis gets before ranking.
    pub screen_iterations: usize,
    /// Hypotheses given the full refinement at full resolution; the best
    /// of them wins.
    pub finalists: usize,
    /// Step length of iteration `k` is `step_initial · step_decay^k`.
    pub step_initial: f64,
    pub step_decay: f64,
    pub direction: StepDirection,
    /// Grid cells per joint; `None` uses 12 (revolute) or 8 (prismatic).
    pub grid_size: Option<usize>,
    pub feedback_rounds: usize,
    pub mode: ChamferMode,
    pub lambda: f64,
    /// Joint samples per revolute joint in the regularizer.
    pub joint_samples: usize,
    /// Also optimize assembly translations.
    pub refine_assembly: bool,
    /// Align the object as one rigid part before the joint grid search.
    pub prealign: bool,
    /// Stop when an iteration lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Observation points used before selection (strided subsample).
    pub coarse_points: usize,
    /// Model points per part used before selection.
    pub coarse_part_points: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            group: GroupKind::Octahedral,
            iterations: 60,
            hypothesis_iterations: 15,
            refine_top: 8,
            screen_iterations: 16,
            finalists: 3,
            step_initial: 1.0,
            step_decay: 1.0,
            direction: StepDirection::GaussNewton,
            grid_size: None,
            feedback_rounds: 0,
            mode: ChamferMode::Bi,
            lambda: DEFAULT_LAMBDA,
            joint_samples: crate::losses::DEFAULT_JOINT_SAMPLES,
            refine_assembly: false,
            prealign: false,
            rel_tol: 1e-10,
            coarse_points: 512,
            coarse_part_points: 192,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.to_string()));
        if self.grid_size == Some(0) {
            return bad("grid size must be at least 1");
        }
        if self.refine_top == 0 {
            return bad("refine_top must be at least 1");
        }
        if self.finalists == 0 {
            return bad("finalists must be at least 1");
        }
        if !(self.step_initial > 0.0 && self.step_initial.is_finite()) {
            return bad("step_initial must be positive");
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return bad("step_decay must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.coarse_points == 0 || self.coarse_part_points == 0 {
            return bad("coarse point budgets must be at least 1");
        }
        Ok(())
    }

    fn mask(&self) -> ParamMask {
        ParamMask {
            assembly: self.refine_assembly,
            ..ParamMask::ALL
        }
    }

    fn reg_settings(&self, model: &ArticulatedModel) -> RegSettings {
        RegSettings {
            k_v: self.joint_samples,
            ..RegSettings::for_model(model)
        }
    }
}

/// Result of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseEstimate {
    pub pose: ArticulatedPose,
    pub assembly: Vec<Vec3>,
    /// Pose of every part from canonical object space to the observation.
    pub per_part: Vec<RigidTransform>,
    pub report: LossReport,
    /// Nearest reconstructed part of every observed point.
    pub segmentation: Vec<usize>,
    /// Objective after every accepted step of the final refinement.
    pub history: Vec<f64>,
}

/// Articulation range searched for a joint.
fn search_range(joint: &Joint, diameter: f64) -> [f64; 2] {
    joint.limits.unwrap_or(match joint.kind {
        JointKind::Revolute => [-std::f64::consts::PI, std::f64::consts::PI],
        JointKind::Prismatic => [-0.5 * diameter, 0.5 * diameter],
    })
}

/// Cell centres of an `n`-cell grid over `[lo, hi)`.
fn grid(range: [f64; 2], n: usize) -> Vec<f64> {
    let [lo, hi] = range;
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

fn mean(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len().max(1) as f64
}

fn clamp_states(model: &ArticulatedModel, state: &mut PoseState) {
    for joint in model.joints() {
        let s = &mut state.pose.joint_states[joint.child];
        *s = joint.clamp(*s);
    }
}

/// Full-resolution centroids: the observation's, and every model part's
/// with its share of the model points.
struct Centroids {
    x_mean: Vec3,
    part_means: Vec<(f64, Vec3)>,
}

impl Centroids {
    fn new(x: &PointCloud, model: &ArticulatedModel) -> Self {
        let total: usize = model.parts().iter().map(|p| p.len()).sum();
        Centroids {
            x_mean: mean(x.points()),
            part_means: model.parts().iter().map(|p| (p.len() as f64 / total as f64, mean(p.points()))).collect(),
        }
    }

    /// Places the base so the reconstruction's centroid matches the
    /// observation's for the given rotation and states.
    fn centre(&self, objective: &Objective, state: &mut PoseState) -> Result<(), EstimatorError> {
        state.pose.base.translation = Vec3::zeros();
        let poses = objective.part_poses(state)?;
        let y_mean: Vec3 = poses.iter().zip(&self.part_means).map(|(p, (w, m))| *w * p.apply(m)).sum();
        state.pose.base.translation = self.x_mean - y_mean;
        Ok(())
    }
}

/// Initial poses, one per group element.
///
/// Hypothesis `g` starts at base rotation `R_g`; each joint state is picked by
/// a 1-D grid search with the other joints at mid-range, and the base
/// translation matches centroids.
pub fn enumerate_hypotheses(x: &PointCloud, model: &ArticulatedModel, cfg: &EstimatorConfig) -> Result<Vec<ArticulatedPose>, EstimatorError> {
    cfg.validate()?;
    let (cx, cm) = coarse_inputs(x, model, cfg)?;
    let objective = Objective::new(&cx, &cm, cfg.mode, cfg.lambda, cfg.reg_settings(model));
    Ok(initial_states(&objective, &Centroids::new(x, model), &RotationGroup::new(cfg.group), cfg)?
        .into_iter()
        .map(|s| s.pose)
        .collect())
}

/// Every `⌈n / max⌉`-th index of `0..n`.
fn stride_indices(n: usize, max: usize) -> Vec<usize> {
    (0..n).step_by(n.div_ceil(max).max(1)).collect()
}

/// Strided subsamples of the observation and of every model part.
fn coarse_inputs(x: &PointCloud, model: &ArticulatedModel, cfg: &EstimatorConfig) -> Result<(PointCloud, ArticulatedModel), EstimatorError> {
    let cx = x.subset(&stride_indices(x.len(), cfg.coarse_points))?;
    let parts = model
        .parts()
        .iter()
        .map(|p| p.subset(&stride_indices(p.len(), cfg.coarse_part_points)))
        .collect::<Result<Vec<_>, _>>()?;
    let cm = ArticulatedModel::new(parts, model.assembly().to_vec(), model.tree().clone(), model.joints().copied().collect())?;
    Ok((cx, cm))
}

fn initial_states(objective: &Objective, centroids: &Centroids, group: &RotationGroup, cfg: &EstimatorConfig) -> Result<Vec<PoseState>, EstimatorError> {
    cfg.validate()?;
    let model = objective.model();
    let x = objective.observation();
    if x.is_empty() {
        return Err(CloudError::EmptyCloud.into());
    }
    let k = model.num_parts();
    if k < 2 {
        return Err(KinematicError::TooFewParts(k).into());
    }
    let diameter = crate::cloud::diameter(model.assembled().points());
    let joints: Vec<&Joint> = model.joints().collect();
    let grids: Vec<Vec<f64>> = joints
        .iter()
        .map(|j| {
            let n = cfg.grid_size.unwrap_or(match j.kind {
                JointKind::Revolute => REVOLUTE_GRID,
                JointKind::Prismatic => PRISMATIC_GRID,
            });
            grid(search_range(j, diameter), n)
        })
        .collect();
    let mut mid = vec![0.0; k];
    for j in &joints {
        let [lo, hi] = search_range(j, diameter);
        mid[j.child] = 0.5 * (lo + hi);
    }
    let ids: Vec<usize> = (0..group.order()).collect();
    ids.par_iter()
        .map(|&g| {
            let base = RigidTransform::from_rotation(*group.rotation(crate::rotgroup::GroupElementId(g)));
            let mut start = PoseState::new(ArticulatedPose::new(base, mid.clone()), model.assembly().to_vec());
            if cfg.prealign {
                centroids.centre(objective, &mut start)?;
                let rigid = ParamMask {
                    base_rotation: true,
                    base_translation: true,
                    joint_states: false,
                    assembly: false,
                };
                start = run_refinement(objective, start, cfg, cfg.hypothesis_iterations, rigid)?.0;
            }
            let mut best_states = start.pose.joint_states.clone();
            for (j, cells) in joints.iter().zip(&grids) {
                let mut best = (f64::INFINITY, best_states[j.child]);
                for &s in cells {
                    let mut trial = start.clone();
                    trial.pose.joint_states[j.child] = s;
                    if !cfg.prealign {
                        centroids.centre(objective, &mut trial)?;
                    }
                    let loss = objective.rec_value(&trial)?;
                    if loss < best.0 {
                        best = (loss, s);
                    }
                }
                best_states[j.child] = best.1;
            }
            let mut state = start;
            state.pose.joint_states = best_states;
            if !cfg.prealign {
                centroids.centre(objective, &mut state)?;
            }
            Ok(state)
        })
        .collect()
}

/// Iterated frozen-correspondence descent.
///
/// Every iteration freezes correspondences at the current state, takes a
/// step along the masked search direction and halves it (at most
/// [`MAX_HALVINGS`] times) until the surrogate does not increase. Since the
/// surrogate bounds the objective from above and touches it at the freeze
/// point, the objective never increases. Returns the final state and the
/// objective after every accepted step.
fn run_refinement(
    objective: &Objective,
    mut state: PoseState,
    cfg: &EstimatorConfig,
    iterations: usize,
    mask: ParamMask,
) -> Result<(PoseState, Vec<f64>), EstimatorError> {
    let model = objective.model();
    let k = model.num_parts();
    let root = model.tree().root();
    let mut history = Vec::new();
    let mut step = cfg.step_initial;
    for _ in 0..iterations {
        let surrogate = objective.freeze(&state)?;
        let current = surrogate.value(&state)?;
        if current <= 0.0 {
            break;
        }
        let (h, g) = surrogate.normal_equations(&state)?;
        let free: Vec<bool> = (0..6 + 4 * k)
            .map(|i| match i {
                0..=2 => mask.base_rotation,
                3..=5 => mask.base_translation,
                i if i < 6 + k => mask.joint_states && i - 6 != root,
                _ => mask.assembly,
            })
            .collect();
        let Some(direction) = search_direction(&h, g.as_slice(), &free, cfg.direction) else {
            break;
        };
        let direction = PoseGradient::from_vec(k, &direction);
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = state.retract(&direction, trial_step);
            clamp_states(model, &mut candidate);
            if surrogate.value(&candidate)? <= current {
                accepted = Some(candidate);
                break;
            }
            trial_step *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        let after = objective.value(&next)?.total;
        state = next;
        history.push(after);
        if current - after <= cfg.rel_tol * current {
            break;
        }
        step *= cfg.step_decay;
    }
    Ok((state, history))
}

/// Descent direction restricted to the free coordinates, or `None` when the
/// gradient vanishes there.
fn search_direction(h: &DMatrix<f64>, g: &[f64], free: &[bool], kind: StepDirection) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| free[i]).collect();
    let gf: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
    let gnorm = gf.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return None;
    }
    let reduced = match kind {
        StepDirection::Gradient => gf,
        StepDirection::GaussNewton => {
            let n = idx.len();
            let mut hf = DMatrix::from_fn(n, n, |a, b| h[(idx[a], idx[b])]);
            let scale = (0..n).map(|a| hf[(a, a)]).fold(0.0f64, f64::max).max(1e-12);
            for a in 0..n {
                hf[(a, a)] += 1e-9 * scale;
            }
            match hf.cholesky() {
                Some(ch) => ch.solve(&nalgebra::DVector::from_vec(gf.clone())).iter().copied().collect(),
                None => gf,
            }
        }
    };
    let mut full = vec![0.0; g.len()];
    for (a, &i) in idx.iter().enumerate() {
        full[i] = reduced[a];
    }
    Some(full)
}

/// Refines a pose for `cfg.iterations` iterations with the model's assembly.
pub fn refine(x: &PointCloud, model: &ArticulatedModel, pose: &ArticulatedPose, cfg: &EstimatorConfig) -> Result<ArticulatedPose, EstimatorError> {
    cfg.validate()?;
    let objective = Objective::new(x, model, cfg.mode, cfg.lambda, cfg.reg_settings(model));
    let start = PoseState::new(pose.clone(), model.assembly().to_vec());
    Ok(run_refinement(&objective, start, cfg, cfg.iterations, cfg.mask())?.0.pose)
}

/// Refinement returning the objective after every accepted step.
pub fn refine_with_history(
    x: &PointCloud,
    model: &ArticulatedModel,
    pose: &ArticulatedPose,
    cfg: &EstimatorConfig,
) -> Result<(ArticulatedPose, Vec<f64>), EstimatorError> {
    cfg.validate()?;
    let objective = Objective::new(x, model, cfg.mode, cfg.lambda, cfg.reg_settings(model));
    let start = PoseState::new(pose.clone(), model.assembly().to_vec());
    let (state, history) = run_refinement(&objective, start, cfg, cfg.iterations, cfg.mask())?;
    Ok((state.pose, history))
}

/// Labels every observed point with its nearest reconstructed part.
pub fn segment(x: &PointCloud, model: &ArticulatedModel, per_part: &[RigidTransform]) -> Result<Vec<usize>, EstimatorError> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, pose) in per_part.iter().enumerate() {
        points.extend(pose.apply_all(model.part(i).points()));
        labels.extend(std::iter::repeat_n(i, model.part(i).len()));
    }
    let index = NeighborIndex::build(&points);
    Ok(x
        .points()
        .iter()
        .map(|p| labels[index.nearest(p).expect("model parts are non-empty").0])
        .collect())
}

/// Full pipeline: hypotheses, budgeted refinement, finalist refinement,
/// selection and segmentation. The best pose found is always returned.
pub fn estimate(x: &PointCloud, model: &ArticulatedModel, cfg: &EstimatorConfig) -> Result<PoseEstimate, EstimatorError> {
    cfg.validate()?;
    let settings = cfg.reg_settings(model);
    let objective = Objective::new(x, model, cfg.mode, cfg.lambda, settings);
    let (cx, cm) = coarse_inputs(x, model, cfg)?;
    let coarse = Objective::new(&cx, &cm, cfg.mode, cfg.lambda, settings);
    let group = RotationGroup::new(cfg.group);
    let mut states = initial_states(&coarse, &Centroids::new(x, model), &group, cfg)?;
    if cfg.screen_iterations > 0 {
        states = states
            .into_par_iter()
            .map(|s| run_refinement(&coarse, s, cfg, cfg.screen_iterations, cfg.mask()).map(|(s, _)| s))
            .collect::<Result<Vec<_>, _>>()?;
    }
    let initial = states.iter().map(|s| coarse.rec_value(s)).collect::<Result<Vec<f64>, _>>()?;

    let mut ranked: Vec<usize> = (0..states.len()).collect();
    ranked.sort_by(|&a, &b| initial[a].total_cmp(&initial[b]).then(a.cmp(&b)));
    ranked.truncate(cfg.refine_top);
    let refined = ranked
        .par_iter()
        .map(|&g| run_refinement(&coarse, states[g].clone(), cfg, cfg.hypothesis_iterations, cfg.mask()).map(|(s, _)| (g, s)))
        .collect::<Result<Vec<_>, _>>()?;
    for (g, s) in refined {
        states[g] = s;
    }
    let mut per_g_loss = states.par_iter().map(|s| objective.rec_value(s)).collect::<Result<Vec<f64>, _>>()?;

    let mut ranked: Vec<usize> = (0..states.len()).collect();
    ranked.sort_by(|&a, &b| per_g_loss[a].total_cmp(&per_g_loss[b]).then(a.cmp(&b)));
    ranked.truncate(cfg.finalists);
    let finals = ranked
        .par_iter()
        .map(|&g| run_refinement(&objective, states[g].clone(), cfg, cfg.iterations, cfg.mask()).map(|(s, h)| (g, s, h)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut histories = Vec::with_capacity(finals.len());
    for (g, s, h) in finals {
        per_g_loss[g] = objective.rec_value(&s)?;
        states[g] = s;
        histories.push((g, h));
    }
    let (g0, history) = histories
        .into_iter()
        .min_by(|a, b| per_g_loss[a.0].total_cmp(&per_g_loss[b.0]).then(a.0.cmp(&b.0)))
        .expect("at least one finalist");
    let winner = states[g0].clone();

    let hyps: Vec<ArticulatedPose> = states.iter().map(|s| s.pose.clone()).collect();
    let assembled = model.with_assembly(winner.assembly.clone())?;
    let report = report_from_losses(&assembled, &hyps, per_g_loss, cfg.lambda, settings)?;
    let per_part = objective.part_poses(&states[report.g0.index()])?;
    let best = &states[report.g0.index()];
    Ok(PoseEstimate {
        pose: best.pose.clone(),
        assembly: best.assembly.clone(),
        segmentation: segment(x, model, &per_part)?,
        per_part,
        report,
        history,
    })
}

/// Runs the convolution stack with poses fed back from an estimate.
///
/// Round 0 is the identity-pose pass. Each later round feeds the estimate's
/// part poses through its segmentation; poses are not re-estimated from the
/// features, so rounds past the first repeat the same pass.
pub fn feedback_features<S: Real>(
    x: &PointCloud,
    estimate: &PoseEstimate,
    stack: &ConvStack<S>,
    group: Arc<RotationGroup>,
    rounds: usize,
) -> Result<(EquivariantFeature<S>, PerPointPose), EstimatorError> {
    if estimate.segmentation.len() != x.len() {
        return Err(ConvError::ShapeMismatch(format!(
            "segmentation has {} labels for {} points",
            estimate.segmentation.len(),
            x.len()
        ))
        .into());
    }
    let fin = EquivariantFeature::ones(group, x.len());
    let mut poses = PerPointPose::identity(x.len());
    let mut features = stack.forward(x, &fin, Some(&poses))?;
    for _ in 0..rounds {
        poses = PerPointPose::from_parts(&estimate.segmentation, &estimate.per_part)?;
        features = stack.forward(x, &fin, Some(&poses))?;
    }
    Ok((features, poses))
}
