//! Evaluation protocol: per-part rotation and translation errors after
//! bounding-box centralization, joint axis and line errors, residual-pose
//! calibration and mean/median aggregation.

use std::io::Write;

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{miou, CloudError, PointCloud};
use crate::kinematics::{line_distance, ArticulatedModel, Joint, JointKind};
use crate::se3::{geodesic_deg, RigidTransform, Vec3};

pub const RANSAC_ITERATIONS: usize = 100;
pub const RANSAC_ROTATION_DEG: f64 = 5.0;
/// Translation inlier threshold relative to the part diameter.
pub const RANSAC_TRANSLATION_RATIO: f64 = 0.02;
pub const MIN_CALIBRATION_SAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("joint kinds differ: predicted {pred}, ground truth {gt}")]
    KindMismatch { pred: JointKind, gt: JointKind },
    #[error("calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartError {
    /// Degrees.
    #[serde(rename = "R_err")]
    pub r_err: f64,
    #[serde(rename = "T_err")]
    pub t_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    /// Child part of the joint.
    pub child: usize,
    /// Degrees, axes compared up to sign.
    pub theta_err: f64,
    /// Line-to-line distance; `None` for prismatic joints.
    pub d_err: Option<f64>,
}

/// Metrics of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_part: Vec<PartError>,
    pub joints: Vec<JointError>,
    pub miou: f64,
}

/// Rotation error and translation error between bbox-centred placements:
/// `‖pred(c_pred) − gt(c_gt)‖` with `c` the bounding-box centre of each
/// canonical part.
pub fn part_pose_error(pred: &RigidTransform, gt: &RigidTransform, pred_part: &PointCloud, gt_part: &PointCloud) -> Result<PartError, EvalError> {
    if pred_part.is_empty() || gt_part.is_empty() {
        return Err(CloudError::EmptyCloud.into());
    }
    Ok(PartError {
        r_err: geodesic_deg(&pred.rotation, &gt.rotation),
        t_err: (pred.apply(&pred_part.bbox_center()) - gt.apply(&gt_part.bbox_center())).norm(),
    })
}

/// Axis angle up to sign, plus the line distance for revolute joints.
pub fn joint_error(pred: &Joint, gt: &Joint) -> Result<JointError, EvalError> {
    if pred.kind != gt.kind {
        return Err(EvalError::KindMismatch { pred: pred.kind, gt: gt.kind });
    }
    let (u, v) = (pred.axis.normalize(), gt.axis.normalize());
    Ok(JointError {
        child: gt.child,
        theta_err: u.cross(&v).norm().atan2(u.dot(&v).abs()).to_degrees(),
        d_err: match gt.kind {
            JointKind::Revolute => Some(line_distance(&pred.axis, &pred.pivot, &gt.axis, &gt.pivot)),
            JointKind::Prismatic => None,
        },
    })
}

/// Observed-frame joints implied by per-part poses: each joint is carried
/// by its parent's pose, undoing the parent's assembly offset.
pub fn joints_from_part_poses(model: &ArticulatedModel, per_part: &[RigidTransform]) -> Result<Vec<Joint>, EvalError> {
    if per_part.len() != model.num_parts() {
        return Err(EvalError::CountMismatch(format!("{} poses for {} parts", per_part.len(), model.num_parts())));
    }
    Ok(model
        .joints()
        .map(|j| {
            let carrier = per_part[j.parent].compose(&RigidTransform::from_translation(-model.assembly()[j.parent]));
            j.transformed(&carrier)
        })
        .collect())
}

/// Everything needed to score one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleEval<'a> {
    /// Canonical part clouds of the prediction and of the ground truth.
    pub pred_parts: &'a [PointCloud],
    pub gt_parts: &'a [PointCloud],
    pub pred_poses: &'a [RigidTransform],
    pub gt_poses: &'a [RigidTransform],
    pub pred_joints: &'a [Joint],
    pub gt_joints: &'a [Joint],
    pub segmentation: &'a [usize],
    pub labels: &'a [usize],
}

/// Scores one sample. Joints are matched by child part.
pub fn evaluate_sample(s: &SampleEval<'_>) -> Result<MetricReport, EvalError> {
    let k = s.gt_parts.len();
    if s.pred_parts.len() != k || s.pred_poses.len() != k || s.gt_poses.len() != k {
        return Err(EvalError::CountMismatch("part counts differ".into()));
    }
    if s.pred_joints.len() != s.gt_joints.len() {
        return Err(EvalError::CountMismatch(format!("{} predicted joints, {} ground-truth", s.pred_joints.len(), s.gt_joints.len())));
    }
    let per_part = (0..k)
        .map(|i| part_pose_error(&s.pred_poses[i], &s.gt_poses[i], &s.pred_parts[i], &s.gt_parts[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let joints = s
        .gt_joints
        .iter()
        .map(|gt| {
            let pred = s
                .pred_joints
                .iter()
                .find(|p| p.child == gt.child)
                .ok_or_else(|| EvalError::CountMismatch(format!("no predicted joint for part {}", gt.child)))?;
            joint_error(pred, gt)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricReport {
        per_part,
        joints,
        miou: miou(s.segmentation, s.labels, k)?,
    })
}

/// Projection of `Σ R_i` onto SO(3).
pub fn chordal_mean(rotations: &[Rotation3<f64>]) -> Rotation3<f64> {
    let sum = rotations.iter().fold(Matrix3::zeros(), |m, r| m + r.matrix());
    let svd = sum.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

fn consensus(samples: &[RigidTransform], diameter: f64, rng: &mut ChaCha8Rng) -> RigidTransform {
    let t_thresh = RANSAC_TRANSLATION_RATIO * diameter;
    let inliers_of = |model: &RigidTransform| -> Vec<usize> {
        (0..samples.len())
            .filter(|&i| {
                geodesic_deg(&model.rotation, &samples[i].rotation) < RANSAC_ROTATION_DEG
                    && (model.translation - samples[i].translation).norm() < t_thresh
            })
            .collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..RANSAC_ITERATIONS {
        let candidate = inliers_of(&samples[rng.random_range(0..samples.len())]);
        if candidate.len() > best.len() {
            best = candidate;
        }
    }
    let rotations: Vec<Rotation3<f64>> = best.iter().map(|&i| samples[i].rotation).collect();
    let translation = best.iter().map(|&i| samples[i].translation).sum::<Vec3>() / best.len() as f64;
    RigidTransform::new(chordal_mean(&rotations), translation)
}

/// Per-part residual pose of predictions made on canonical inputs:
/// RANSAC over single samples, refit on the inliers.
///
/// `samples[s][i]` is the prediction for part `i` in sample `s`.
pub fn calibrate_residual(samples: &[Vec<RigidTransform>], diameters: &[f64], seed: u64) -> Result<Vec<RigidTransform>, EvalError> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(EvalError::TooFewSamples(samples.len()));
    }
    let k = diameters.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != k) {
        return Err(EvalError::CountMismatch(format!("{} poses for {k} parts", bad.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|i| {
            let part: Vec<RigidTransform> = samples.iter().map(|s| s[i]).collect();
            consensus(&part, diameters[i], &mut rng)
        })
        .collect())
}

/// `P_i ← residual_i⁻¹ ∘ P_i`.
pub fn apply_residual(residuals: &[RigidTransform], poses: &[RigidTransform]) -> Result<Vec<RigidTransform>, EvalError> {
    if residuals.len() != poses.len() {
        return Err(EvalError::CountMismatch(format!("{} residuals for {} poses", residuals.len(), poses.len())));
    }
    Ok(residuals.iter().zip(poses).map(|(r, p)| r.inverse().compose(p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMedian {
    pub mean: f64,
    pub median: f64,
}

/// Mean and lower median. `None` for an empty list.
pub fn mean_median(values: &[f64]) -> Option<MeanMedian> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(MeanMedian {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: sorted[(sorted.len() - 1) / 2],
    })
}

/// One CSV row per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub dataset: String,
    pub part_id: usize,
    #[serde(rename = "R_err_mean")]
    pub r_err_mean: f64,
    #[serde(rename = "R_err_median")]
    pub r_err_median: f64,
    #[serde(rename = "T_err_mean")]
    pub t_err_mean: f64,
    #[serde(rename = "T_err_median")]
    pub t_err_median: f64,
    /// Error of the joint whose child is this part; empty for the root.
    pub theta_err_mean: Option<f64>,
    pub d_err_mean: Option<f64>,
    pub miou: f64,
}

/// Aggregates per-sample metrics across a test set.
pub fn report(dataset: &str, samples: &[MetricReport]) -> Result<Vec<CsvRow>, EvalError> {
    let first = samples.first().ok_or_else(|| EvalError::CountMismatch("no samples".into()))?;
    let k = first.per_part.len();
    if samples.iter().any(|s| s.per_part.len() != k || s.joints.len() != first.joints.len()) {
        return Err(EvalError::CountMismatch("samples disagree on part or joint counts".into()));
    }
    let miou = samples.iter().map(|s| s.miou).sum::<f64>() / samples.len() as f64;
    Ok((0..k)
        .map(|i| {
            let r = mean_median(&samples.iter().map(|s| s.per_part[i].r_err).collect::<Vec<_>>()).expect("non-empty");
            let t = mean_median(&samples.iter().map(|s| s.per_part[i].t_err).collect::<Vec<_>>()).expect("non-empty");
            let joint: Vec<&JointError> = samples.iter().filter_map(|s| s.joints.iter().find(|j| j.child == i)).collect();
            let theta = mean_median(&joint.iter().map(|j| j.theta_err).collect::<Vec<_>>());
            let d = mean_median(&joint.iter().filter_map(|j| j.d_err).collect::<Vec<_>>());
            CsvRow {
                dataset: dataset.to_string(),
                part_id: i,
                r_err_mean: r.mean,
                r_err_median: r.median,
                t_err_mean: t.mean,
                t_err_median: t.median,
                theta_err_mean: theta.map(|m| m.mean),
                d_err_mean: d.map(|m| m.mean),
                miou,
            }
        })
        .collect())
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
