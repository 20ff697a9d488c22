use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::kinematics::{ArticulatedModel, Joint, KinematicTree};
use crate::se3::Vec3;

/// Minimum number of points per part.
pub const MIN_PART_POINTS: usize = 128;
/// Default lattice spacing in scene units.
pub const DEFAULT_SPACING: f64 = 0.035;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Laptop,
    OvenLid,
    Eyeglasses,
    Drawer,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Laptop, ShapeKind::OvenLid, ShapeKind::Eyeglasses, ShapeKind::Drawer];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Laptop => "laptop",
            ShapeKind::OvenLid => "oven_lid",
            ShapeKind::Eyeglasses => "eyeglasses",
            ShapeKind::Drawer => "drawer",
        }
    }

    /// Half-open articulation range `[lo, hi)` (radians, or scene units for
    /// the drawer).
    pub fn limits(self) -> [f64; 2] {
        match self {
            ShapeKind::Laptop => [9f64.to_radians(), 99f64.to_radians()],
            ShapeKind::OvenLid => [45f64.to_radians(), 135f64.to_radians()],
            ShapeKind::Eyeglasses => [0.0, 81f64.to_radians()],
            ShapeKind::Drawer => [0.0, 0.4],
        }
    }

    /// Direction (object frame, pointing toward the camera) from which every
    /// part is visible over the whole articulation range.
    pub fn front(self) -> Vec3 {
        match self {
            ShapeKind::Laptop => Vec3::new(0.48, 0.13, 0.87),
            ShapeKind::OvenLid => Vec3::new(0.0, 1.0, 1.0),
            ShapeKind::Eyeglasses => Vec3::new(0.93, -0.25, 0.26),
            ShapeKind::Drawer => Vec3::new(0.93, -0.25, 0.26),
        }
        .normalize()
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "laptop" => Ok(ShapeKind::Laptop),
            "oven" | "oven_lid" => Ok(ShapeKind::OvenLid),
            "eyeglasses" => Ok(ShapeKind::Eyeglasses),
            "drawer" => Ok(ShapeKind::Drawer),
            _ => Err(format!("unknown shape kind '{s}' (expected laptop|oven|eyeglasses|drawer)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    /// Drop the asymmetry bumps so every part is a plain box.
    pub symmetric: bool,
    pub spacing: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            symmetric: false,
            spacing: DEFAULT_SPACING,
        }
    }
}

/// Articulated template with its front direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTemplate {
    pub kind: ShapeKind,
    pub options: TemplateOptions,
    pub model: ArticulatedModel,
}

/// Which faces of a box lattice to keep.
#[derive(Debug, Clone, Copy)]
struct Faces {
    open_max_x: bool,
}

const CLOSED: Faces = Faces { open_max_x: false };

/// Points of an axis-aligned box lattice at `center` that lie on its
/// surface.
fn box_lattice(center: Vec3, extent: Vec3, spacing: f64, faces: Faces) -> Vec<Vec3> {
    let n: [usize; 3] = std::array::from_fn(|a| ((extent[a] / spacing).round() as usize + 1).max(2));
    let mut pts = Vec::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let idx = [i, j, k];
                let on = |a: usize| idx[a] == 0 || idx[a] == n[a] - 1;
                let keep = if faces.open_max_x { i == 0 || on(1) || on(2) } else { on(0) || on(1) || on(2) };
                if keep {
                    let p: [f64; 3] = std::array::from_fn(|a| center[a] + extent[a] * (idx[a] as f64 / (n[a] - 1) as f64 - 0.5));
                    pts.push(Vec3::from(p));
                }
            }
        }
    }
    pts
}

/// Uniform random points on the faces of a box, about one per
/// `spacing²` of area.
fn box_random(center: Vec3, extent: Vec3, spacing: f64, faces: Faces, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let count = ((extent[u] * extent[v] / (spacing * spacing)).ceil() as usize).max(4);
        for side in [-0.5, 0.5] {
            if faces.open_max_x && axis == 0 && side > 0.0 {
                continue;
            }
            for _ in 0..count {
                let mut p = center;
                p[axis] += side * extent[axis];
                p[u] += extent[u] * rng.random_range(-0.5..0.5);
                p[v] += extent[v] * rng.random_range(-0.5..0.5);
                pts.push(p);
            }
        }
    }
    pts
}

/// Accumulates box surfaces of one part.
struct PartBuilder {
    spacing: f64,
    rng: Option<ChaCha8Rng>,
    points: Vec<Vec3>,
}

impl PartBuilder {
    fn add(&mut self, center: Vec3, extent: Vec3, faces: Faces) {
        let pts = match &mut self.rng {
            Some(rng) => box_random(center, extent, self.spacing, faces, rng),
            None => box_lattice(center, extent, self.spacing, faces),
        };
        self.points.extend(pts);
    }
}

/// Builds a part (in object coordinates) and refines the spacing until it
/// has at least [`MIN_PART_POINTS`] points. Symmetric templates use exact
/// lattices, so their symmetries map the point set onto itself; the others
/// sample faces at random, which avoids the aliasing minima a regular
/// lattice gives the Chamfer distance.
fn part(options: &TemplateOptions, seed: u64, build: impl Fn(&mut PartBuilder)) -> Vec<Vec3> {
    let mut spacing = options.spacing;
    loop {
        let mut b = PartBuilder {
            spacing,
            rng: (!options.symmetric).then(|| ChaCha8Rng::seed_from_u64(seed)),
            points: Vec::new(),
        };
        build(&mut b);
        if b.points.len() >= MIN_PART_POINTS {
            return b.points;
        }
        spacing *= 0.8;
    }
}

impl ShapeTemplate {
    /// Object-space parts and joints, then recentred into part spaces.
    pub fn new(kind: ShapeKind, options: TemplateOptions) -> ShapeTemplate {
        let bumps = !options.symmetric;
                let [lo, hi] = kind.limits();
        let (parts, edges, joints): (Vec<Vec<Vec3>>, Vec<(usize, usize)>, Vec<Joint>) = match kind {
            // Base below z = 0, lid resting on it; hinge along y at x = 0.
            ShapeKind::Laptop => {
                let base = part(&options, 1, |p| {
                    p.add(Vec3::new(-0.3, 0.0, -0.015), Vec3::new(0.6, 0.4, 0.03), CLOSED);
                    if bumps {
                        p.add(Vec3::new(-0.45, 0.12, -0.045), Vec3::new(0.12, 0.1, 0.03), CLOSED);
                    }
                });
                let lid = part(&options, 2, |p| {
                    p.add(Vec3::new(-0.3, 0.0, 0.01), Vec3::new(0.6, 0.4, 0.02), CLOSED);
                    if bumps {
                        p.add(Vec3::new(-0.15, -0.1, 0.035), Vec3::new(0.1, 0.14, 0.03), CLOSED);
                    }
                });
                let hinge = Joint::revolute(0, 1, Vec3::y(), Vec3::zeros()).expect("unit axis").with_limits(lo, hi);
                (vec![base, lid], vec![(0, 1)], vec![hinge])
            }
            // Box body with the door closing its +x face; hinge on the
            // door's bottom edge.
            ShapeKind::OvenLid => {
                let body = part(&options, 3, |p| {
                    p.add(Vec3::zeros(), Vec3::new(0.6, 0.6, 0.5), CLOSED);
                    if bumps {
                        p.add(Vec3::new(-0.15, 0.2, 0.28), Vec3::new(0.2, 0.12, 0.06), CLOSED);
                    }
                });
                let door = part(&options, 4, |p| {
                    p.add(Vec3::new(0.315, 0.0, 0.0), Vec3::new(0.03, 0.6, 0.5), CLOSED);
                    if bumps {
                        p.add(Vec3::new(0.35, 0.12, 0.18), Vec3::new(0.04, 0.24, 0.04), CLOSED);
                    }
                });
                let hinge = Joint::revolute(0, 1, Vec3::y(), Vec3::new(0.3, 0.0, -0.25))
                    .expect("unit axis")
                    .with_limits(lo, hi);
                (vec![body, door], vec![(0, 1)], vec![hinge])
            }
            // Frame in y ∈ [0, 0.03]; legs folded behind it at rest.
            ShapeKind::Eyeglasses => {
                let frame = part(&options, 5, |p| {
                    p.add(Vec3::new(0.0, 0.015, 0.0), Vec3::new(0.9, 0.03, 0.24), CLOSED);
                    if bumps {
                        p.add(Vec3::new(0.0, 0.05, 0.06), Vec3::new(0.12, 0.04, 0.05), CLOSED);
                    }
                });
                let leg = |sign: f64| {
                    part(&options, if sign < 0.0 { 6 } else { 7 }, |p| {
                        p.add(Vec3::new(sign * 0.25, -0.02, 0.0), Vec3::new(0.4, 0.04, 0.06), CLOSED);
                        if bumps {
                            p.add(Vec3::new(sign * 0.1, -0.05, 0.0), Vec3::new(0.08, 0.03, 0.04), CLOSED);
                        }
                    })
                };
                let left = Joint::revolute(0, 1, -Vec3::z(), Vec3::new(-0.45, 0.0, 0.0))
                    .expect("unit axis")
                    .with_limits(lo, hi);
                let right = Joint::revolute(0, 2, Vec3::z(), Vec3::new(0.45, 0.0, 0.0))
                    .expect("unit axis")
                    .with_limits(lo, hi);
                (vec![frame, leg(-1.0), leg(1.0)], vec![(0, 1), (0, 2)], vec![left, right])
            }
            // Open-front cabinet with a drawer resting on its floor, sliding along +x.
            ShapeKind::Drawer => {
                let cabinet = part(&options, 9, |p| {
                    p.add(Vec3::zeros(), Vec3::new(0.6, 0.5, 0.4), Faces { open_max_x: true });
                    if bumps {
                        p.add(Vec3::new(-0.1, 0.12, 0.23), Vec3::new(0.15, 0.1, 0.06), CLOSED);
                    }
                });
                let drawer = part(&options, 10, |p| {
                    p.add(Vec3::new(0.05, 0.0, -0.1), Vec3::new(0.5, 0.4, 0.2), CLOSED);
                    if bumps {
                        p.add(Vec3::new(0.32, 0.08, -0.08), Vec3::new(0.04, 0.16, 0.04), CLOSED);
                    }
                });
                let slide = Joint::prismatic(0, 1, Vec3::x()).expect("unit axis").with_limits(lo, hi);
                (vec![cabinet, drawer], vec![(0, 1)], vec![slide])
            }
        };
        let mut clouds = Vec::with_capacity(parts.len());
        let mut assembly = Vec::with_capacity(parts.len());
        for pts in &parts {
            let center = crate::cloud::bbox_center(pts).expect("parts are non-empty");
            clouds.push(PointCloud::new(pts.iter().map(|p| p - center).collect()).expect("finite lattice"));
            assembly.push(center);
        }
        let tree = KinematicTree::from_edges(parts.len(), 0, &edges).expect("templates are trees");
        let model = ArticulatedModel::new(clouds, assembly, tree, joints).expect("templates are consistent");
        ShapeTemplate { kind, options, model }
    }

    pub fn standard(kind: ShapeKind) -> ShapeTemplate {
        Self::new(kind, TemplateOptions::default())
    }
}
