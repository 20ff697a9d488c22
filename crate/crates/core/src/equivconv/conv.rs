use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ConvError, EquivariantFeature, Real};
use crate::cloud::{NeighborIndex, PointCloud};
use crate::rotgroup::RotationGroup;
use crate::se3::{RigidTransform, Vec3};

/// Number of kernel points in the default layout.
pub const DEFAULT_KERNEL_POINTS: usize = 15;
/// Neighbourhood radius on clouds scaled to unit diameter.
pub const DEFAULT_RADIUS: f64 = 0.4;
/// Channel widths of the three stacked blocks.
pub const DEFAULT_WIDTHS: [usize; 3] = [64, 128, 512];

/// Kernel-point correlation kernel `h(d) = Σ_m max(0, 1 − ‖d − κ_m‖ / σ) W_m`.
#[derive(Debug, Clone)]
pub struct KernelSpec<S: Real = f64> {
    /// Kernel points inside the unit ball; scaled by `radius` when used.
    points: Vec<Vec3>,
    /// `M × C_in × C_out`, row-major.
    weights: Vec<S>,
    c_in: usize,
    c_out: usize,
    radius: f64,
    influence: f64,
}

/// Center, the 12 icosahedron vertices at 0.7, and two seeded interior
/// points at radius 0.35.
fn default_layout(seed: u64) -> Vec<Vec3> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pts = vec![Vec3::zeros()];
    for (a, b) in [(1.0, phi), (-1.0, phi), (1.0, -phi), (-1.0, -phi)] {
        pts.push(Vec3::new(0.0, a, b));
        pts.push(Vec3::new(a, b, 0.0));
        pts.push(Vec3::new(b, 0.0, a));
    }
    let scale = 0.7 / (1.0 + phi * phi).sqrt();
    for p in pts.iter_mut().skip(1) {
        *p *= scale;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_726e);
    while pts.len() < DEFAULT_KERNEL_POINTS {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            pts.push(v.normalize() * 0.35);
        }
    }
    pts
}

impl<S: Real> KernelSpec<S> {
    pub fn new(points: Vec<Vec3>, weights: Vec<S>, c_in: usize, c_out: usize, radius: f64, influence: f64) -> Result<Self, ConvError> {
        if points.is_empty() {
            return Err(ConvError::BadKernel("no kernel points".into()));
        }
        if radius <= 0.0 || influence <= 0.0 {
            return Err(ConvError::BadKernel(format!("radius {radius} and influence {influence} must be positive")));
        }
        if points.iter().any(|p| p.norm() > 1.0 + 1e-12) {
            return Err(ConvError::BadKernel("kernel point outside the unit ball".into()));
        }
        if weights.len() != points.len() * c_in * c_out {
            return Err(ConvError::BadKernel(format!(
                "{} weights for {}×{c_in}×{c_out}",
                weights.len(),
                points.len()
            )));
        }
        Ok(KernelSpec {
            points,
            weights,
            c_in,
            c_out,
            radius,
            influence,
        })
    }

    /// Default layout with uniform `(−a, a)` weights, `a = 1/√(M·C_in)`,
    /// and `influence = radius / 2`.
    pub fn seeded(c_in: usize, c_out: usize, radius: f64, seed: u64) -> Self {
        let points = default_layout(seed);
        let a = 1.0 / ((points.len() * c_in) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..points.len() * c_in * c_out)
            .map(|_| S::of(rng.random_range(-a..a)))
            .collect();
        KernelSpec::new(points, weights, c_in, c_out, radius, radius / 2.0).expect("default kernel is valid")
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn influence(&self) -> f64 {
        self.influence
    }

    pub fn kernel_points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// Evaluates `h(d)` as a `C_in × C_out` matrix (row-major).
    pub fn evaluate(&self, d: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.c_in * self.c_out];
        for (m, kp) in self.points.iter().enumerate() {
            let w = 1.0 - (d - kp * self.radius).norm() / self.influence;
            if w > 0.0 {
                let block = &self.weights[m * self.c_in * self.c_out..(m + 1) * self.c_in * self.c_out];
                for (o, v) in out.iter_mut().zip(block) {
                    *o += w * v.as_f64();
                }
            }
        }
        out
    }
}

/// Rigid pose of every point (its parent part's pose from the canonical
/// object space to the observed space).
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointPose {
    pub poses: Vec<RigidTransform>,
}

impl PerPointPose {
    pub fn identity(n: usize) -> Self {
        PerPointPose {
            poses: vec![RigidTransform::identity(); n],
        }
    }

    /// Broadcasts part poses through a label vector.
    pub fn from_parts(labels: &[usize], part_poses: &[RigidTransform]) -> Result<Self, ConvError> {
        labels
            .iter()
            .map(|&l| part_poses.get(l).copied().ok_or(ConvError::PoseMissing(l)))
            .collect::<Result<Vec<_>, _>>()
            .map(|poses| PerPointPose { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

struct Prepared<S> {
    rotations: Vec<[[S; 3]; 3]>,
    kernel_points: Vec<[S; 3]>,
    inv_influence: S,
}

impl<S: Real> Prepared<S> {
    fn new(group: &RotationGroup, kernel: &KernelSpec<S>) -> Self {
        let rotations = group
            .rotations()
            .iter()
            .map(|r| {
                let m = r.matrix();
                std::array::from_fn(|i| std::array::from_fn(|j| S::of(m[(i, j)])))
            })
            .collect();
        let kernel_points = kernel
            .points
            .iter()
            .map(|p| {
                let q = p * kernel.radius;
                [S::of(q.x), S::of(q.y), S::of(q.z)]
            })
            .collect();
        Prepared {
            rotations,
            kernel_points,
            inv_influence: S::one() / S::of(kernel.influence),
        }
    }
}

fn check_shapes<S: Real>(x: &PointCloud, fin: &EquivariantFeature<S>, kernel: &KernelSpec<S>, r_neigh: f64) -> Result<(), ConvError> {
    if fin.points() != x.len() {
        return Err(ConvError::ShapeMismatch(format!("{} feature rows for {} points", fin.points(), x.len())));
    }
    if fin.channels() != kernel.c_in {
        return Err(ConvError::ShapeMismatch(format!(
            "{} input channels, kernel expects {}",
            fin.channels(),
            kernel.c_in
        )));
    }
    if r_neigh.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(ConvError::BadKernel(format!("neighbourhood radius {r_neigh} must be positive")));
    }
    Ok(())
}

/// Shared inner loop. For every point `i`, neighbour `j` and element `g`:
/// `out(i, g) += Fin(j, g ∘ rel(i, j)) · h(R_g · disp(i, j))`.
fn convolve<S, D, K>(fin: &EquivariantFeature<S>, kernel: &KernelSpec<S>, neighbors: &[Vec<usize>], disp: D, rel: K) -> EquivariantFeature<S>
where
    S: Real,
    D: Fn(usize, usize) -> Vec3 + Sync,
    K: Fn(usize, usize) -> usize + Sync,
{
    let group: &Arc<RotationGroup> = fin.group();
    let prep = Prepared::new(group, kernel);
    let order = group.order();
    let m_count = kernel.points.len();
    let c_in = kernel.c_in;
    let c_out = kernel.c_out;
    let fin_values = fin.values();
    let rows: Vec<Vec<S>> = neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut acc = vec![S::zero(); order * m_count * c_in];
            let mut gathered = vec![S::zero(); c_in];
            for &j in nbrs {
                let d = disp(i, j);
                let d = [S::of(d.x), S::of(d.y), S::of(d.z)];
                let r = rel(i, j);
                let fin_j = &fin_values[j * c_in * order..(j + 1) * c_in * order];
                for g in 0..order {
                    let rot = &prep.rotations[g];
                    let dg: [S; 3] = std::array::from_fn(|a| rot[a][0] * d[0] + rot[a][1] * d[1] + rot[a][2] * d[2]);
                    let k = group.compose_index(g, r);
                    for (c, slot) in gathered.iter_mut().enumerate() {
                        *slot = fin_j[c * order + k];
                    }
                    for (m, kp) in prep.kernel_points.iter().enumerate() {
                        let e = [dg[0] - kp[0], dg[1] - kp[1], dg[2] - kp[2]];
                        let dist = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
                        let w = S::one() - dist * prep.inv_influence;
                        if w > S::zero() {
                            let a = &mut acc[(g * m_count + m) * c_in..(g * m_count + m + 1) * c_in];
                            for (slot, &f) in a.iter_mut().zip(&gathered) {
                                *slot = *slot + w * f;
                            }
                        }
                    }
                }
            }
            let mut row = vec![S::zero(); c_out * order];
            for g in 0..order {
                for m in 0..m_count {
                    let a = &acc[(g * m_count + m) * c_in..(g * m_count + m + 1) * c_in];
                    for (cin, &av) in a.iter().enumerate() {
                        if av == S::zero() {
                            continue;
                        }
                        let w = &kernel.weights[(m * c_in + cin) * c_out..(m * c_in + cin + 1) * c_out];
                        for (cout, &wv) in w.iter().enumerate() {
                            let slot = &mut row[cout * order + g];
                            *slot = *slot + av * wv;
                        }
                    }
                }
            }
            row
        })
        .collect();
    let values = rows.into_iter().flatten().collect();
    EquivariantFeature::from_values(group.clone(), fin.points(), c_out, values).expect("output shape is consistent")
}

/// Group-anchored point convolution on relative coordinates.
///
/// `Fout(x_i, g) = Σ_{x_j ∈ N(x_i)} Fin(x_j, g) · h(g (x_i − x_j))`; each point
/// is its own neighbour.
pub fn epn_conv<S: Real>(x: &PointCloud, fin: &EquivariantFeature<S>, kernel: &KernelSpec<S>, r_neigh: f64) -> Result<EquivariantFeature<S>, ConvError> {
    check_shapes(x, fin, kernel, r_neigh)?;
    let pts = x.points();
    let index = NeighborIndex::build(pts);
    let neighbors: Vec<Vec<usize>> = pts.iter().map(|p| index.radius_neighbors(p, r_neigh)).collect();
    Ok(convolve(fin, kernel, &neighbors, |i, j| pts[i] - pts[j], |_, _| 0))
}

/// Pose-aware convolution:
/// `Fout(x_i, g) = Σ_j Fin(x_j, g R_i R_j⁻¹) · h(g (x_i − P_i P_j⁻¹ x_j))`.
///
/// Neighbourhoods are taken in canonical coordinates (`‖P_i⁻¹x_i − P_j⁻¹x_j‖ ≤ r`).
/// `R_i R_j⁻¹` is quantized to its nearest group element `q`, and the group
/// index becomes `g ∘ q` (left-invariance of the geodesic metric makes this the
/// nearest element to `g R_i R_j⁻¹`). With identity poses the output is
/// bit-identical to [`epn_conv`].
pub fn pose_aware_conv<S: Real>(
    x: &PointCloud,
    fin: &EquivariantFeature<S>,
    poses: &PerPointPose,
    kernel: &KernelSpec<S>,
    r_neigh: f64,
) -> Result<EquivariantFeature<S>, ConvError> {
    check_shapes(x, fin, kernel, r_neigh)?;
    if poses.len() != x.len() {
        return Err(ConvError::PoseMissing(poses.len().min(x.len())));
    }
    let pts = x.points();
    let canonical: Vec<Vec3> = pts
        .iter()
        .zip(&poses.poses)
        .map(|(p, pose)| pose.inverse().apply(p))
        .collect();
    let index = NeighborIndex::build(&canonical);
    let neighbors: Vec<Vec<usize>> = canonical.iter().map(|c| index.radius_neighbors(c, r_neigh)).collect();
    let group = fin.group().clone();
    let rel: Vec<Vec<usize>> = neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let ri = poses.poses[i].rotation;
            nbrs.iter()
                .map(|&j| {
                    let rj = poses.poses[j].rotation;
                    if ri == rj {
                        0
                    } else {
                        group.nearest_rotation(&(ri * rj.inverse())).index()
                    }
                })
                .collect()
        })
        .collect();
    // Map (i, j) to the neighbour slot of j in i's sorted list.
    let rel_lookup = |i: usize, j: usize| {
        let slot = neighbors[i].binary_search(&j).expect("j is a neighbour of i");
        rel[i][slot]
    };
    Ok(convolve(
        fin,
        kernel,
        &neighbors,
        |i, j| pts[i] - poses.poses[i].apply(&canonical[j]),
        rel_lookup,
    ))
}

/// Blocks of convolutions with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct ConvStack<S: Real = f64> {
    pub blocks: Vec<KernelSpec<S>>,
    pub radius: f64,
}

impl<S: Real> ConvStack<S> {
    /// `widths[0]` is the input width; one block per following width.
    pub fn seeded(widths: &[usize], radius: f64, seed: u64) -> Self {
        let blocks = widths
            .windows(2)
            .enumerate()
            .map(|(b, w)| KernelSpec::seeded(w[0], w[1], radius, seed.wrapping_add(b as u64 * 0x9e37_79b9)))
            .collect();
        ConvStack { blocks, radius }
    }

    /// Single-channel input followed by the 64/128/512 blocks.
    pub fn default_widths(seed: u64) -> Self {
        let mut widths = vec![1];
        widths.extend(DEFAULT_WIDTHS);
        Self::seeded(&widths, DEFAULT_RADIUS, seed)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn input_channels(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.c_in)
    }

    /// Runs every block; `poses = None` selects the plain group convolution.
    pub fn forward(&self, x: &PointCloud, fin: &EquivariantFeature<S>, poses: Option<&PerPointPose>) -> Result<EquivariantFeature<S>, ConvError> {
        let mut feat = fin.clone();
        for (b, kernel) in self.blocks.iter().enumerate() {
            feat = match poses {
                Some(p) => pose_aware_conv(x, &feat, p, kernel, self.radius)?,
                None => epn_conv(x, &feat, kernel, self.radius)?,
            };
            if b + 1 < self.blocks.len() {
                feat = feat.relu();
            }
        }
        Ok(feat)
    }
}
