//! Synthetic articulated dataset: box-lattice templates, articulation
//! sampling within per-category ranges, random global rotations, orthographic
//! partial views and Gaussian noise.

mod dataset;
mod render;
mod shapes;

pub use dataset::{read_dataset, read_ground_truth, write_dataset, write_samples, Dataset, DatasetManifest, GroundTruth};
pub use render::{visible_points, View};
pub use shapes::{ShapeKind, ShapeTemplate, TemplateOptions, DEFAULT_SPACING, MIN_PART_POINTS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};
use crate::kinematics::{ArticulatedPose, KinematicError};
use crate::losses::LossError;
use crate::se3::{random_rotation, random_rotation_within, RigidTransform, Vec3};

/// Smallest fraction of a part's points a partial view must keep.
pub const MIN_VISIBLE_FRACTION: f64 = 0.1;
/// View draws before giving up.
pub const MAX_VIEW_ATTEMPTS: usize = 100;
/// Noise level of the robustness setting.
pub const PAPER_NOISE_SIGMA: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no view keeps every part visible after {0} attempts")]
    NoValidView(usize),
    #[error("invalid generation settings: {0}")]
    InvalidSettings(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Kinematic(#[from] KinematicError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSettings {
    pub resolution: usize,
    /// Half-angle of the viewing cone about the template front, degrees.
    pub cone_deg: f64,
}

impl Default for ViewSettings {
    fn default() -> Self {
        ViewSettings {
            resolution: 32,
            cone_deg: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    pub n_states: usize,
    pub n_rots: usize,
    pub seed: u64,
    /// Render partial views instead of complete clouds.
    pub partial: Option<ViewSettings>,
    /// Gaussian noise per coordinate (0 for noiseless data).
    pub noise_sigma: f64,
}

impl GenSettings {
    /// Small preset for tests and CI: 10 states × 3 rotations.
    pub fn desk(seed: u64) -> Self {
        GenSettings {
            n_states: 10,
            n_rots: 3,
            seed,
            partial: None,
            noise_sigma: 0.0,
        }
    }

    /// Full-size preset: 100 states × 10 rotations.
    pub fn full(seed: u64) -> Self {
        GenSettings {
            n_states: 100,
            n_rots: 10,
            ..Self::desk(seed)
        }
    }
}

/// One observation with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub gt_pose: ArticulatedPose,
    pub part_poses: Vec<RigidTransform>,
    /// Camera direction of a partial view (observed frame).
    pub view: Option<Vec3>,
    /// Indices into the complete cloud kept by the partial view.
    pub visible: Option<Vec<usize>>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream offsets keeping state, rotation, view and noise draws disjoint.
const STATE_STREAM: u64 = 0;
const ROTATION_STREAM: u64 = 1 << 32;
const NOISE_STREAM: u64 = 2 << 32;

/// Draws articulation states uniformly in each joint's `[lo, hi)` range,
/// then `n_rots` Haar-random base rotations per state.
///
/// Sample `k` belongs to state `k / n_rots`; every state and every sample
/// draws from its own RNG stream, so the output does not depend on thread
/// scheduling.
pub fn generate(template: &ShapeTemplate, settings: &GenSettings) -> Result<Vec<Sample>, SynthError> {
    if settings.n_states == 0 || settings.n_rots == 0 {
        return Err(SynthError::InvalidSettings("n_states and n_rots must be at least 1".into()));
    }
    if let Some(v) = settings.partial {
        if v.resolution < 32 {
            return Err(SynthError::InvalidSettings(format!("resolution {} is below 32", v.resolution)));
        }
    }
    let model = &template.model;
    let k = model.num_parts();
    let states: Vec<Vec<f64>> = (0..settings.n_states)
        .map(|s| {
            let mut rng = stream_rng(settings.seed, STATE_STREAM + s as u64);
            (0..k)
                .map(|part| match model.joint(part).and_then(|j| j.limits) {
                    Some([lo, hi]) => rng.random_range(lo..hi),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    (0..settings.n_states * settings.n_rots)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(settings.seed, ROTATION_STREAM + idx as u64);
            let pose = ArticulatedPose::new(
                RigidTransform::from_rotation(random_rotation(&mut rng)),
                states[idx / settings.n_rots].clone(),
            );
            let (part_poses, cloud) = model.posed(&pose)?;
            let mut sample = Sample {
                cloud,
                gt_pose: pose,
                part_poses,
                view: None,
                visible: None,
            };
            if let Some(view) = settings.partial {
                sample = render_partial(template, &sample, &view, &mut rng)?;
            }
            if settings.noise_sigma > 0.0 {
                sample = add_noise(&sample, settings.noise_sigma, settings.seed ^ (NOISE_STREAM + idx as u64));
            }
            Ok(sample)
        })
        .collect()
}

/// Keeps one partial view of a complete sample.
///
/// Directions are drawn within `cone_deg` of the template front (carried to
/// the observed frame by the base rotation) until every part keeps at least
/// [`MIN_VISIBLE_FRACTION`] of its points.
pub fn render_partial<R: Rng + ?Sized>(
    template: &ShapeTemplate,
    sample: &Sample,
    settings: &ViewSettings,
    rng: &mut R,
) -> Result<Sample, SynthError> {
    let base = sample.gt_pose.base.rotation;
    let front = base * template.kind.front();
    for _ in 0..MAX_VIEW_ATTEMPTS {
        let direction = random_rotation_within(rng, settings.cone_deg) * front;
        let view = View {
            direction,
            resolution: settings.resolution,
        };
        if let Some(partial) = partial_with_view(sample, &view)? {
            return Ok(partial);
        }
    }
    Err(SynthError::NoValidView(MAX_VIEW_ATTEMPTS))
}

/// Renders `view`; `None` when some part keeps too few points.
pub fn partial_with_view(sample: &Sample, view: &View) -> Result<Option<Sample>, SynthError> {
    let labels = sample.cloud.require_labels()?;
    let k = sample.cloud.num_parts();
    let visible = visible_points(sample.cloud.points(), view);
    let mut total = vec![0usize; k];
    let mut kept = vec![0usize; k];
    for &l in labels {
        total[l] += 1;
    }
    for &i in &visible {
        kept[labels[i]] += 1;
    }
    if (0..k).any(|p| (kept[p] as f64) < MIN_VISIBLE_FRACTION * total[p] as f64) {
        return Ok(None);
    }
    Ok(Some(Sample {
        cloud: sample.cloud.subset(&visible)?,
        view: Some(view.direction.normalize()),
        visible: Some(visible),
        ..sample.clone()
    }))
}

/// Adds i.i.d. `N(0, σ²)` offsets to every coordinate; labels are kept.
pub fn add_noise(sample: &Sample, sigma: f64, seed: u64) -> Sample {
    if sigma <= 0.0 {
        return sample.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<Vec3> = (0..sample.cloud.len())
        .map(|_| Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    let cloud = sample.cloud.map_points(|i, p| p + offsets[i]);
    Sample { cloud, ..sample.clone() }
}
