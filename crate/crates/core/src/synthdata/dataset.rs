use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate, GenSettings, Sample, ShapeKind, ShapeTemplate, SynthError, TemplateOptions};
use crate::cloud::{read_apc_file, write_apc_file};
use crate::kinematics::{load_model, save_model, ArticulatedModel, ArticulatedPose};
use crate::losses::{reg_loss, RegSettings};
use crate::se3::{RigidTransform, Vec3};

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: ShapeKind,
    pub template: TemplateOptions,
    pub settings: GenSettings,
    /// Articulation range `[lo, hi)` of every non-root joint.
    pub limits: [f64; 2],
    /// Largest joint regularizer over the ground-truth poses.
    pub reg_threshold: f64,
    /// Sample stems relative to `samples/`.
    pub samples: Vec<String>,
}

/// `samples/<stem>.gt.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pose: ArticulatedPose,
    pub per_part: Vec<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<Vec<usize>>,
}

impl GroundTruth {
    pub fn of(sample: &Sample) -> Self {
        GroundTruth {
            pose: sample.gt_pose.clone(),
            per_part: sample.part_poses.clone(),
            view: sample.view.map(Into::into),
            visible: sample.visible.clone(),
        }
    }
}

/// A dataset loaded from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub model: ArticulatedModel,
    pub samples: Vec<Sample>,
    pub root: PathBuf,
}

impl Dataset {
    /// The template the dataset was generated from.
    pub fn template(&self) -> ShapeTemplate {
        ShapeTemplate::new(self.manifest.kind, self.manifest.template)
    }

    pub fn sample_path(&self, i: usize) -> PathBuf {
        self.root.join("samples").join(format!("{}.apc", self.manifest.samples[i]))
    }

    pub fn gt_path(&self, i: usize) -> PathBuf {
        self.root.join("samples").join(format!("{}.gt.json", self.manifest.samples[i]))
    }
}

/// Generates a dataset and writes it to `dir`; returns the manifest.
pub fn write_dataset(template: &ShapeTemplate, settings: &GenSettings, dir: impl AsRef<Path>) -> Result<DatasetManifest, SynthError> {
    let samples = generate(template, settings)?;
    write_samples(template, settings, &samples, dir)
}

/// Writes already generated samples.
pub fn write_samples(
    template: &ShapeTemplate,
    settings: &GenSettings,
    samples: &[Sample],
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest, SynthError> {
    let dir = dir.as_ref();
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir)?;
    save_model(&template.model, dir.join("model"))?;
    let reg = RegSettings::for_model(&template.model);
    let mut reg_threshold = 0.0f64;
    let mut stems = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("sample_{i:04}");
        write_apc_file(&s.cloud, sample_dir.join(format!("{stem}.apc")))?;
        fs::write(sample_dir.join(format!("{stem}.gt.json")), serde_json::to_string_pretty(&GroundTruth::of(s))?)?;
        reg_threshold = reg_threshold.max(reg_loss(&template.model, &s.gt_pose, reg)?);
        stems.push(stem);
    }
    let manifest = DatasetManifest {
        kind: template.kind,
        template: template.options,
        settings: *settings,
        limits: template.kind.limits(),
        reg_threshold,
        samples: stems,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth, SynthError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Reads a directory written by [`write_dataset`].
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, SynthError> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let model = load_model(dir.join("model"))?;
    let samples = manifest
        .samples
        .iter()
        .map(|stem| {
            let cloud = read_apc_file(dir.join("samples").join(format!("{stem}.apc")))?;
            let gt = read_ground_truth(dir.join("samples").join(format!("{stem}.gt.json")))?;
            if gt.per_part.len() != model.num_parts() || cloud.num_parts() != model.num_parts() {
                return Err(SynthError::Malformed(format!("{stem}: part count differs from the model")));
            }
            Ok(Sample {
                cloud,
                gt_pose: gt.pose,
                part_poses: gt.per_part,
                view: gt.view.map(Vec3::from),
                visible: gt.visible,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(Dataset {
        manifest,
        model,
        samples,
        root: dir.to_path_buf(),
    })
}
