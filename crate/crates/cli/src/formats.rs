use std::fs;
use std::path::{Path, PathBuf};

use apc_core::kinematics::Joint;
use apc_core::losses::LossReport;
use apc_core::se3::RigidTransform;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// `predictions.json`: per-sample part poses, observed-frame joints and
/// segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub method: String,
    /// Dataset directory the predictions were made on.
    pub dataset: PathBuf,
    pub samples: Vec<SamplePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub stem: String,
    /// Maps each canonical model part to the observation.
    pub per_part: Vec<RigidTransform>,
    pub joints: Vec<Joint>,
    pub segmentation: Vec<usize>,
    /// Base rotation `[w, x, y, z]` of the estimated articulated pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_quaternion: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_states: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossReport>,
    /// Inlier RMSE of every part's winning registration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_rmse: Option<Vec<f64>>,
    /// Model directory of the registered template when it is not the
    /// dataset's own model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
}

impl PredictionSet {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Summary printed by `verify`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub group: apc_core::rotgroup::GroupKind,
    pub tol: f64,
    pub precision: apc_core::checks::Precision,
    pub passed: bool,
    pub checks: Vec<apc_core::checks::Check>,
}
