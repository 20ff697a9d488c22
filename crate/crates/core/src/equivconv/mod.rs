//! Group-anchored point convolution, its pose-aware part-level variant,
//! invariant pooling and numerical checks of part-level equivariance.
//!
//! Conventions used throughout:
//!
//! * a feature value `F(x, g)` is stored at `values[(n·C + c)·|G| + g]`;
//! * rotating the input cloud by `a ∈ G` permutes features as
//!   `F'(a·x, g) = F(x, g ∘ a)`, which is [`EquivariantFeature::act`];
//! * the kernel sees relative coordinates only, so translating the cloud
//!   leaves features unchanged.

mod conv;
mod feature;
mod verify;

pub use conv::{
    epn_conv, pose_aware_conv, ConvStack, KernelSpec, PerPointPose, DEFAULT_KERNEL_POINTS, DEFAULT_RADIUS,
    DEFAULT_WIDTHS,
};
pub use feature::{act_on_feature_axis, EquivariantFeature, Real};
pub use verify::{verify_part_level, InvarianceRotations, PoseFeed, VerifyConfig, VerifyReport};

use thiserror::Error;

use crate::cloud::CloudError;
use crate::rotgroup::GroupKind;

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no pose supplied for entry {0}")]
    PoseMissing(usize),
    #[error("feature built for {found:?}, expected {expected:?}")]
    GroupMismatch { expected: GroupKind, found: GroupKind },
    #[error("invalid kernel: {0}")]
    BadKernel(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("verification needs part labels")]
    MissingLabels,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Attention,
}

/// Rotation-invariant `N × C` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature<S: Real = f64> {
    pub points: usize,
    pub channels: usize,
    pub values: Vec<S>,
}

impl<S: Real> PooledFeature<S> {
    pub fn get(&self, n: usize, c: usize) -> S {
        self.values[n * self.channels + c]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Pools the group axis away.
///
/// `Max` takes the entry-wise maximum. `Attention` scores each group element
/// by the dot product of its channel vector with the per-channel mean, and
/// returns the softmax-weighted sum.
pub fn pool_invariant<S: Real>(f: &EquivariantFeature<S>, mode: PoolMode) -> PooledFeature<S> {
    let order = f.group_order();
    let channels = f.channels();
    let mut values = Vec::with_capacity(f.points() * channels);
    for n in 0..f.points() {
        let row = f.row(n);
        match mode {
            PoolMode::Max => {
                for c in 0..channels {
                    let block = &row[c * order..(c + 1) * order];
                    values.push(block.iter().copied().fold(S::neg_infinity(), S::max));
                }
            }
            PoolMode::Attention => {
                let mean: Vec<f64> = (0..channels)
                    .map(|c| row[c * order..(c + 1) * order].iter().map(|v| v.as_f64()).sum::<f64>() / order as f64)
                    .collect();
                let scores: Vec<f64> = (0..order)
                    .map(|k| (0..channels).map(|c| row[c * order + k].as_f64() * mean[c]).sum())
                    .collect();
                let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let total: f64 = weights.iter().sum();
                for c in 0..channels {
                    let v: f64 = (0..order).map(|k| weights[k] * row[c * order + k].as_f64()).sum();
                    values.push(S::of(v / total));
                }
            }
        }
    }
    PooledFeature {
        points: f.points(),
        channels,
        values,
    }
}
