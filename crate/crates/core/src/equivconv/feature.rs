use std::fmt::Debug;
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConvError;
use crate::rotgroup::{GroupElementId, RotationGroup};

/// Floating-point type the convolution runs in.
pub trait Real: num_traits::Float + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Per-point, per-channel, per-group-element feature block (`N × C × |G|`,
/// row-major with the group axis fastest).
#[derive(Debug, Clone)]
pub struct EquivariantFeature<S: Real = f64> {
    group: Arc<RotationGroup>,
    points: usize,
    channels: usize,
    values: Vec<S>,
}

impl<S: Real> PartialEq for EquivariantFeature<S> {
    fn eq(&self, other: &Self) -> bool {
        self.group.kind() == other.group.kind()
            && self.points == other.points
            && self.channels == other.channels
            && self.values == other.values
    }
}

impl<S: Real> EquivariantFeature<S> {
    pub fn zeros(group: Arc<RotationGroup>, points: usize, channels: usize) -> Self {
        let len = points * channels * group.order();
        EquivariantFeature {
            group,
            points,
            channels,
            values: vec![S::zero(); len],
        }
    }

    pub fn from_values(group: Arc<RotationGroup>, points: usize, channels: usize, values: Vec<S>) -> Result<Self, ConvError> {
        let expected = points * channels * group.order();
        if values.len() != expected {
            return Err(ConvError::ShapeMismatch(format!(
                "feature payload has {} values, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ConvError::NonFinite);
        }
        Ok(EquivariantFeature {
            group,
            points,
            channels,
            values,
        })
    }

    /// Feature that is constant along the group axis: `per_point[n * C + c]`.
    pub fn group_constant(group: Arc<RotationGroup>, points: usize, channels: usize, per_point: &[S]) -> Result<Self, ConvError> {
        if per_point.len() != points * channels {
            return Err(ConvError::ShapeMismatch(format!(
                "{} invariant values for {points}×{channels}",
                per_point.len()
            )));
        }
        let g = group.order();
        let values = per_point.iter().flat_map(|&v| std::iter::repeat_n(v, g)).collect();
        Self::from_values(group, points, channels, values)
    }

    pub fn ones(group: Arc<RotationGroup>, points: usize) -> Self {
        let per_point = vec![S::one(); points];
        Self::group_constant(group, points, 1, &per_point).expect("shape is consistent")
    }

    /// Uniform values in `[-1, 1)`.
    pub fn random(group: Arc<RotationGroup>, points: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = points * channels * group.order();
        let values = (0..len).map(|_| S::of(rng.random_range(-1.0..1.0))).collect();
        EquivariantFeature {
            group,
            points,
            channels,
            values,
        }
    }

    pub fn group(&self) -> &Arc<RotationGroup> {
        &self.group
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn group_order(&self) -> usize {
        self.group.order()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, k: usize) -> S {
        let g = self.group.order();
        self.values[(n * self.channels + c) * g + k]
    }

    /// All `C × |G|` values of point `n`.
    pub fn row(&self, n: usize) -> &[S] {
        let w = self.channels * self.group.order();
        &self.values[n * w..(n + 1) * w]
    }

    /// Group action on the feature axis:
    /// `out[n][c][k] = F[n][c][k ∘ g]`.
    ///
    /// This matches rotating the input cloud by `g`; it is a homomorphism,
    /// `act(a, act(b, F)) = act(a ∘ b, F)`.
    pub fn act(&self, g: GroupElementId) -> Self {
        let order = self.group.order();
        let perm: Vec<usize> = (0..order).map(|k| self.group.compose_index(k, g.index())).collect();
        let mut values = Vec::with_capacity(self.values.len());
        for block in self.values.chunks_exact(order) {
            values.extend(perm.iter().map(|&src| block[src]));
        }
        EquivariantFeature {
            group: self.group.clone(),
            points: self.points,
            channels: self.channels,
            values,
        }
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.values {
            *v = v.max(S::zero());
        }
        self
    }

    /// Largest absolute entry-wise difference (∞ on shape mismatch).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.values.len() != other.values.len() {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest absolute difference restricted to the points in `indices`.
    pub fn max_abs_diff_at(&self, other: &Self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .flat_map(|&n| self.row(n).iter().zip(other.row(n)))
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    pub fn to_f64(&self) -> EquivariantFeature<f64> {
        EquivariantFeature {
            group: self.group.clone(),
            points: self.points,
            channels: self.channels,
            values: self.values.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Little-endian `u64` header `(N, C, |G|)` followed by the `f64` payload
    /// in row-major order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for dim in [self.points, self.channels, self.group.order()] {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }
}

impl EquivariantFeature<f64> {
    pub fn read_binary<R: Read>(group: Arc<RotationGroup>, mut input: R) -> Result<Self, ConvError> {
        let mut word = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            input.read_exact(&mut word)?;
            *d = u64::from_le_bytes(word) as usize;
        }
        if dims[2] != group.order() {
            return Err(ConvError::ShapeMismatch(format!(
                "dump has group axis {}, group has order {}",
                dims[2],
                group.order()
            )));
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for _ in 0..dims[0] * dims[1] * dims[2] {
            input.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::from_values(group, dims[0], dims[1], values)
    }
}

/// Applies `g` to the group axis of `f` after checking that `f` was built on
/// a group of the same kind.
pub fn act_on_feature_axis<S: Real>(group: &RotationGroup, g: GroupElementId, f: &EquivariantFeature<S>) -> Result<EquivariantFeature<S>, ConvError> {
    if f.group.kind() != group.kind() {
        return Err(ConvError::GroupMismatch {
            expected: group.kind(),
            found: f.group.kind(),
        });
    }
    if g.index() >= group.order() {
        return Err(ConvError::ShapeMismatch(format!("element {} outside group of order {}", g.index(), group.order())));
    }
    Ok(f.act(g))
}
