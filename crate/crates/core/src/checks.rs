//! Property suite: each check compares a library routine against an
//! independent oracle or a structural law and reports the worst deviation.

use std::str::FromStr;
use std::sync::Arc;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{chamfer_points, miou, ChamferMode, ChamferNorm, PointCloud};
use crate::equivconv::{
    epn_conv, verify_part_level, ConvStack, EquivariantFeature, InvarianceRotations, KernelSpec, PerPointPose, PoseFeed, Real, VerifyConfig,
};
use crate::kinematics::{line_distance, maximum_spanning_tree, ArticulatedPose, KinematicTree};
use crate::losses::{rec_loss, Objective, PoseState, RegSettings};
use crate::rotgroup::{GroupElementId, GroupKind, RotationGroup};
use crate::se3::{exp_so3, geodesic_deg, random_rotation, rotation_about_line, RigidTransform, Vec3};
use crate::synthdata::{generate, GenSettings, ShapeKind, ShapeTemplate};

/// Floating-point type of the convolution checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Float32,
    Float64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float32" | "f32" | "single" => Ok(Precision::Float32),
            "float64" | "f64" | "double" => Ok(Precision::Float64),
            other => Err(format!("unknown precision {other:?} (expected float32 or float64)")),
        }
    }
}

/// Outcome of one check. `value` is compared against `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
            detail,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed: value >= threshold,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub group: GroupKind,
    /// Tolerance of the equivariance checks.
    pub tol: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            group: GroupKind::Octahedral,
            tol: 1e-4,
            precision: Precision::Float64,
            seed: 0,
        }
    }
}

/// Every check at its default size.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<Check> {
    vec![
        group_laws(cfg.group),
        quantize_oracle(cfg.group, 1000, cfg.seed),
        global_equivariance(cfg.group, cfg.precision, 128, cfg.tol, cfg.seed),
        part_invariance(cfg.group, 20, cfg.tol, cfg.seed),
        part_equivariance(cfg.group, cfg.tol, cfg.seed),
        negative_control(cfg.group, cfg.tol, cfg.seed),
        min_of_n(10, cfg.seed),
        gradient_fd(20, 1e-4, cfg.seed),
        mst_oracle(200, cfg.seed),
        line_distance_oracle(200, cfg.seed),
        miou_oracle(200, cfg.seed),
    ]
}

/// Identity, inverses, Latin-square rows, associativity (exhaustive) and
/// agreement of the integer table with quaternion products.
pub fn group_laws(kind: GroupKind) -> Check {
    let g = RotationGroup::new(kind);
    let n = g.order();
    let mut violations = 0usize;
    for a in 0..n {
        violations += usize::from(g.compose_index(0, a) != a || g.compose_index(a, 0) != a);
        violations += usize::from(g.compose_index(a, g.inverse(GroupElementId(a)).index()) != 0);
        let mut row = g.cayley_row(GroupElementId(a)).to_vec();
        row.sort_unstable();
        violations += usize::from(row != (0..n).collect::<Vec<_>>());
        for b in 0..n {
            let ab = g.compose_index(a, b);
            let product = g.rotation(GroupElementId(a)) * g.rotation(GroupElementId(b));
            violations += usize::from(geodesic_deg(&product, g.rotation(GroupElementId(ab))) > 1e-6);
            for c in 0..n {
                violations += usize::from(g.compose_index(ab, c) != g.compose_index(a, g.compose_index(b, c)));
            }
        }
    }
    Check::at_most("group_laws", violations as f64, 0.0, format!("{kind}, |G| = {n}"))
}

/// `quantize` against a brute-force argmin of the geodesic distance.
pub fn quantize_oracle(kind: GroupKind, samples: usize, seed: u64) -> Check {
    let g = RotationGroup::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let r = random_rotation(&mut rng);
        let best = g.rotations().iter().map(|e| geodesic_deg(e, &r)).fold(f64::INFINITY, f64::min);
        worst = match g.quantize(&r) {
            Ok((id, _)) => worst.max(geodesic_deg(g.rotation(id), &r) - best),
            Err(_) => f64::INFINITY,
        };
    }
    Check::at_most("quantize_oracle", worst, 1e-9, format!("{samples} random rotations, degrees above the optimum"))
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        .collect();
    PointCloud::new(pts).expect("non-empty")
}

fn equivariance_deviation<S: Real>(group: Arc<RotationGroup>, n: usize, seed: u64) -> f64 {
    let x = random_cloud(n, seed);
    let kernel = KernelSpec::<S>::seeded(2, 3, 0.4, seed ^ 0x5eed);
    let fin = EquivariantFeature::<S>::random(group.clone(), n, 2, seed ^ 0xfeed);
    let base = epn_conv(&x, &fin, &kernel, 0.4).expect("consistent shapes");
    group
        .ids()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&a| {
            let xr = x.transformed(&RigidTransform::from_rotation(*group.rotation(a)));
            let out = epn_conv(&xr, &fin.act(a), &kernel, 0.4).expect("consistent shapes");
            out.max_abs_diff(&base.act(a))
        })
        .reduce(|| 0.0, f64::max)
}

/// Rotating the input by any group element permutes the group axis of the
/// plain group convolution's output.
pub fn global_equivariance(kind: GroupKind, precision: Precision, points: usize, tol: f64, seed: u64) -> Check {
    let group = Arc::new(RotationGroup::new(kind));
    let dev = match precision {
        Precision::Float64 => equivariance_deviation::<f64>(group, points, seed),
        Precision::Float32 => equivariance_deviation::<f32>(group, points, seed),
    };
    Check::at_most("global_equivariance", dev, tol, format!("{kind}, {points} points, {precision:?}, max |F(gx) - g·F(x)|"))
}

/// Two slabs hinged 30° about z, under a random base pose.
fn hinged_pair(n_per_part: usize, seed: u64) -> (PointCloud, Vec<RigidTransform>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slab = |x0: f64| -> Vec<Vec3> {
        (0..n_per_part)
            .map(|_| Vec3::new(x0 + rng.random_range(0.0..0.5), rng.random_range(-0.3..0.3), rng.random_range(-0.05..0.05)))
            .collect()
    };
    let a = slab(-0.5);
    let b = slab(0.0);
    let hinge = rotation_about_line(&Vec3::z(), &Vec3::zeros(), 30f64.to_radians()).expect("unit axis");
    let base = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.1, -0.2, 0.3));
    let poses = vec![base, base.compose(&hinge)];
    let cloud = PointCloud::from_parts([poses[0].apply_all(&a).as_slice(), poses[1].apply_all(&b).as_slice()]).expect("labeled parts");
    (cloud, poses)
}

/// With exact per-point poses, arbitrary rigid motions of one part leave
/// the other part's features unchanged.
pub fn part_invariance(kind: GroupKind, trials: usize, tol: f64, seed: u64) -> Check {
    let (x, poses) = hinged_pair(60, seed);
    let stack = ConvStack::<f64>::seeded(&[1, 4], 0.4, seed ^ 0xc0de);
    let cfg = VerifyConfig {
        trials,
        tol,
        seed,
        invariance_rotations: InvarianceRotations::Arbitrary,
        ..VerifyConfig::default()
    };
    match verify_part_level(&x, &poses, Arc::new(RotationGroup::new(kind)), &stack, &cfg) {
        Ok(r) => Check::at_most("part_invariance", r.max_invariance_violation, tol, format!("{trials} random SE(3) motions")),
        Err(e) => Check::at_most("part_invariance", f64::INFINITY, tol, e.to_string()),
    }
}

/// Moving one part by every group element permutes that part's features
/// and leaves the other part unchanged.
pub fn part_equivariance(kind: GroupKind, tol: f64, seed: u64) -> Check {
    let group = Arc::new(RotationGroup::new(kind));
    let (x, poses) = hinged_pair(50, seed);
    let labels = x.labels().expect("labeled").to_vec();
    let stack = ConvStack::<f64>::seeded(&[1, 3, 3], 0.4, seed ^ 0xbeef);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_point: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fin = EquivariantFeature::group_constant(group.clone(), x.len(), 1, &per_point).expect("shapes");
    let feed = |p: &[RigidTransform]| PerPointPose::from_parts(&labels, p).expect("labels match");
    let base = stack.forward(&x, &fin, Some(&feed(&poses))).expect("shapes");
    let shifts: Vec<Vec3> = (0..group.order())
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let worst = (0..group.order() * 2)
        .into_par_iter()
        .map(|t| {
            let (a, part) = (GroupElementId(t / 2), t % 2);
            let motion = RigidTransform::new(*group.rotation(a), shifts[a.index()]);
            let cloud = x.map_points(|i, p| if labels[i] == part { motion.apply(p) } else { *p });
            let mut moved = poses.clone();
            moved[part] = motion.compose(&moved[part]);
            let out = stack.forward(&cloud, &fin, Some(&feed(&moved))).expect("shapes");
            let inside: Vec<usize> = (0..x.len()).filter(|&i| labels[i] == part).collect();
            let outside: Vec<usize> = (0..x.len()).filter(|&i| labels[i] != part).collect();
            base.act(a).max_abs_diff_at(&out, &inside).max(base.max_abs_diff_at(&out, &outside))
        })
        .reduce(|| 0.0, f64::max);
    Check::at_most("part_equivariance", worst, tol, format!("{kind}, every element on every part, 2-block stack"))
}

/// Feeding identity poses while a part really moves must break invariance
/// by at least three orders of magnitude over `tol`.
pub fn negative_control(kind: GroupKind, tol: f64, seed: u64) -> Check {
    let (x, poses) = hinged_pair(60, seed);
    let stack = ConvStack::<f64>::seeded(&[1, 4], 0.4, seed ^ 0xc0de);
    let cfg = VerifyConfig {
        tol,
        seed,
        feed: PoseFeed::Identity,
        translation_scale: 0.05,
        ..VerifyConfig::default()
    };
    let ratio = match verify_part_level(&x, &poses, Arc::new(RotationGroup::new(kind)), &stack, &cfg) {
        Ok(r) => r.max_invariance_violation / tol,
        Err(_) => 0.0,
    };
    Check::at_least("negative_control", ratio, 1e3, "violation / tol with identity poses under motion".into())
}

fn random_pose(model: &crate::kinematics::ArticulatedModel, rng: &mut ChaCha8Rng) -> ArticulatedPose {
    let states = (0..model.num_parts())
        .map(|p| match model.joint(p).and_then(|j| j.limits) {
            Some([lo, hi]) => rng.random_range(lo..hi),
            None => 0.0,
        })
        .collect();
    ArticulatedPose::new(
        RigidTransform::new(random_rotation(rng), Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0)),
        states,
    )
}

/// The reported reconstruction loss is the minimum over hypotheses, each
/// recomputed directly from its reconstruction.
pub fn min_of_n(calls: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for call in 0..calls {
        let kind = ShapeKind::ALL[call % ShapeKind::ALL.len()];
        let model = ShapeTemplate::standard(kind).model;
        let (_, x) = model.posed(&random_pose(&model, &mut rng)).expect("valid pose");
        let hyps: Vec<ArticulatedPose> = (0..12).map(|_| random_pose(&model, &mut rng)).collect();
        let mode = if call % 2 == 0 { ChamferMode::Bi } else { ChamferMode::Uni };
        let report = rec_loss(&x, &model, &hyps, mode, 1.0, RegSettings::for_model(&model)).expect("valid hypotheses");
        for (h, hyp) in hyps.iter().enumerate() {
            let (_, y) = model.posed(hyp).expect("valid pose");
            let direct = chamfer_points(x.points(), y.points(), mode, ChamferNorm::L2Sq).expect("non-empty");
            violations += usize::from(report.l_rec > direct || (report.per_g_loss[h] - direct).abs() > 1e-12);
        }
        violations += usize::from(report.l_rec != report.per_g_loss[report.g0.index()]);
    }
    Check::at_most("min_of_n", violations as f64, 0.0, format!("{calls} calls of 12 hypotheses"))
}

/// Analytic gradient of the frozen-correspondence objective against
/// central differences, over base rotation, translation, joint states and
/// assembly translations.
pub fn gradient_fd(instances: usize, tol: f64, seed: u64) -> Check {
    let templates: Vec<ShapeTemplate> = ShapeKind::ALL.iter().map(|&k| ShapeTemplate::standard(k)).collect();
    let worst = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let model = &templates[i % templates.len()].model;
            let truth = random_pose(model, &mut rng);
            let (_, x) = model.posed(&truth).expect("valid pose");
            let mode = if i % 2 == 0 { ChamferMode::Bi } else { ChamferMode::Uni };
            let objective = Objective::new(&x, model, mode, 1.0, RegSettings::for_model(model));
            let mut pose = truth.clone();
            pose.base.rotation = exp_so3(&Vec3::new(0.05, -0.03, 0.04)) * pose.base.rotation;
            pose.base.translation += Vec3::new(0.02, 0.01, -0.03);
            for s in pose.joint_states.iter_mut().skip(1) {
                *s += rng.random_range(-0.1..0.1);
            }
            let mut state = PoseState::new(pose, model.assembly().to_vec());
            for p in &mut state.assembly {
                *p += Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            }
            let surrogate = objective.freeze(&state).expect("valid state");
            let analytic = surrogate.gradient(&state).expect("valid state").to_vec();
            let h = 1e-5;
            let numeric: Vec<f64> = (0..state.num_params())
                .map(|j| (surrogate.value(&state.nudge(j, h)).expect("valid") - surrogate.value(&state.nudge(j, -h)).expect("valid")) / (2.0 * h))
                .collect();
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
            diff / scale.max(1e-12)
        })
        .reduce(|| 0.0, f64::max);
    Check::at_most("gradient_fd", worst, tol, format!("{instances} instances, worst relative error"))
}

/// Maximum spanning trees against exhaustive enumeration of every edge
/// subset on random complete graphs of 2 to 5 nodes.
pub fn mst_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for c in 0..cases {
        let k = 2 + c % 4;
        let mut w = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                w[i][j] = rng.random_range(0.0..1.0);
                w[j][i] = w[i][j];
            }
        }
        let all: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
        let best = all
            .iter()
            .copied()
            .combinations(k - 1)
            .filter(|edges| KinematicTree::from_edges(k, 0, edges).is_ok())
            .max_by(|a, b| {
                let sa: f64 = a.iter().map(|&(i, j)| w[i][j]).sum();
                let sb: f64 = b.iter().map(|&(i, j)| w[i][j]).sum();
                sa.total_cmp(&sb)
            })
            .expect("complete graphs have spanning trees");
        let mut got = maximum_spanning_tree(&w);
        got.sort_unstable();
        mismatches += usize::from(got != best);
    }
    Check::at_most("mst_oracle", mismatches as f64, 0.0, format!("{cases} graphs with 2 to 5 nodes"))
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    random_rotation(rng) * Vec3::x()
}

/// Line distances against lines built around a known common perpendicular,
/// plus parallel pairs at a known offset.
pub fn line_distance_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..cases {
        let u1 = unit(&mut rng);
        let n = u1.cross(&unit(&mut rng)).normalize();
        let d = rng.random_range(0.0..2.0);
        let p1 = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let u2 = if c % 5 == 0 {
            -u1
        } else {
            exp_so3(&(n * rng.random_range(0.2..3.0))) * u1
        };
        let p2 = p1 + n * d + u1 * rng.random_range(-1.0..1.0) + u2 * rng.random_range(-1.0..1.0);
        let got = line_distance(&u1, &p1, &u2, &p2);
        worst = worst.max((got - d).abs()).max((line_distance(&u2, &p2, &u1, &p1) - d).abs());
    }
    Check::at_most("line_distance_oracle", worst, 1e-9, format!("{cases} constructed line pairs"))
}

/// Reference MIoU by explicit set intersection over every relabeling.
fn reference_miou(pred: &[usize], gt: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    permutations(k)
        .into_iter()
        .map(|perm| {
            (0..k)
                .map(|g| {
                    let a: std::collections::BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == perm[g]).collect();
                    let b: std::collections::BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == g).collect();
                    let union = a.union(&b).count();
                    if union == 0 {
                        1.0
                    } else {
                        a.intersection(&b).count() as f64 / union as f64
                    }
                })
                .sum::<f64>()
                / k as f64
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn miou_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..cases {
        let k = 1 + c % 4;
        let n = rng.random_range(1..60);
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = gt.iter().map(|&g| if rng.random_bool(0.3) { rng.random_range(0..k) } else { (g + c) % k }).collect();
        let got = miou(&pred, &gt, k).unwrap_or(f64::NAN);
        let diff = (got - reference_miou(&pred, &gt, k)).abs();
        worst = if diff.is_nan() { f64::INFINITY } else { worst.max(diff) };
    }
    Check::at_most("miou_oracle", worst, 1e-12, format!("{cases} random labelings"))
}

/// Articulation ranges of the synthetic categories, in degrees (scene units
/// for the drawer).
pub const CATEGORY_RANGES: [(ShapeKind, f64, f64); 4] = [
    (ShapeKind::Laptop, 9.0, 99.0),
    (ShapeKind::OvenLid, 45.0, 135.0),
    (ShapeKind::Eyeglasses, 0.0, 81.0),
    (ShapeKind::Drawer, 0.0, 0.4),
];

/// Fraction of generated articulation states inside their category range.
pub fn articulation_ranges(n_states: usize, seed: u64) -> Check {
    let mut inside = 0usize;
    let mut total = 0usize;
    for (kind, lo, hi) in CATEGORY_RANGES {
        let settings = GenSettings {
            n_states,
            n_rots: 1,
            ..GenSettings::desk(seed)
        };
        let samples = generate(&ShapeTemplate::standard(kind), &settings).unwrap_or_default();
        for s in &samples {
            for &state in &s.gt_pose.joint_states[1..] {
                let v = if kind == ShapeKind::Drawer { state } else { state.to_degrees() };
                inside += usize::from(v >= lo && v < hi);
                total += 1;
            }
        }
    }
    let fraction = if total == 0 { 0.0 } else { inside as f64 / total as f64 };
    Check::at_least("articulation_ranges", fraction, 1.0, format!("{total} joint states over 4 categories"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for check in [
            group_laws(GroupKind::Tetrahedral),
            quantize_oracle(GroupKind::Octahedral, 200, 1),
            global_equivariance(GroupKind::Tetrahedral, Precision::Float64, 64, 1e-10, 2),
            global_equivariance(GroupKind::Tetrahedral, Precision::Float32, 64, 1e-5, 2),
            part_invariance(GroupKind::Octahedral, 4, 1e-10, 3),
            negative_control(GroupKind::Octahedral, 1e-4, 3),
            min_of_n(2, 4),
            gradient_fd(2, 1e-4, 5),
            mst_oracle(40, 6),
            line_distance_oracle(40, 7),
            miou_oracle(40, 8),
            articulation_ranges(5, 9),
        ] {
            assert!(check.passed, "{check:?}");
        }
    }

    #[test]
    fn reference_miou_agrees_on_known_cases() {
        assert_eq!(reference_miou(&[1, 1, 0, 0], &[0, 0, 1, 1], 2), 1.0);
        assert_eq!(reference_miou(&[0, 0, 0, 0], &[0, 0, 1, 1], 2), 0.25);
    }

    #[test]
    fn precision_parsing() {
        assert_eq!("float32".parse::<Precision>().unwrap(), Precision::Float32);
        assert_eq!("f64".parse::<Precision>().unwrap(), Precision::Float64);
        assert!("half".parse::<Precision>().is_err());
    }

    #[test]
    fn failing_checks_report_failure() {
        let c = Check::at_most("x", 2.0, 1.0, String::new());
        assert!(!c.passed);
        let c = Check::at_least("x", 2.0, 1.0, String::new());
        assert!(c.passed);
    }
}
