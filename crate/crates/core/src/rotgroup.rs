//! Finite rotation groups with exact multiplication tables.
//!
//! Elements are unit quaternions in a canonical sign (scalar part `≥ 0`; when
//! it is zero the first nonzero vector component is positive), so element
//! indices are stable across runs. Element 0 is always the identity.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{validate_rotation, Se3Error};

/// Angular tolerance (radians) when matching products back to elements.
pub const MATCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("invalid rotation: {0}")]
    InvalidRotation(#[from] Se3Error),
    #[error("element list is not closed: product {0}·{1} matches no element")]
    NotClosed(usize, usize),
    #[error("product {0}·{1} matches several elements")]
    Ambiguous(usize, usize),
    #[error("element 0 must be the identity")]
    MissingIdentity,
    #[error("elements {0} and {1} coincide")]
    Duplicate(usize, usize),
    #[error("feature group axis built for {found:?}, expected {expected:?}")]
    GroupMismatch { expected: GroupKind, found: GroupKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Tetrahedral,
    Octahedral,
    Icosahedral,
}

impl GroupKind {
    pub fn order(self) -> usize {
        match self {
            GroupKind::Tetrahedral => 12,
            GroupKind::Octahedral => 24,
            GroupKind::Icosahedral => 60,
        }
    }

    /// Largest possible geodesic distance (degrees) from any rotation to its
    /// nearest group element. Found by multi-start minimax search over S³.
    pub fn covering_radius_deg(self) -> f64 {
        match self {
            GroupKind::Tetrahedral => 90.0,
            GroupKind::Octahedral => 62.7995,
            GroupKind::Icosahedral => 44.4776,
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupKind::Tetrahedral => "tetrahedral",
            GroupKind::Octahedral => "octahedral",
            GroupKind::Icosahedral => "icosahedral",
        };
        f.write_str(s)
    }
}

impl FromStr for GroupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tetrahedral" | "t" | "12" => Ok(GroupKind::Tetrahedral),
            "octahedral" | "o" | "24" => Ok(GroupKind::Octahedral),
            "icosahedral" | "i" | "60" => Ok(GroupKind::Icosahedral),
            other => Err(format!("unknown rotation group '{other}'")),
        }
    }
}

/// Index of an element inside a [`RotationGroup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupElementId(pub usize);

impl GroupElementId {
    pub const IDENTITY: GroupElementId = GroupElementId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct RotationGroup {
    kind: GroupKind,
    elements: Vec<UnitQuaternion<f64>>,
    rotations: Vec<Rotation3<f64>>,
    /// Row-major `|G| × |G|`, `cayley[a * n + b] = a ∘ b`.
    cayley: Vec<usize>,
    inverse: Vec<usize>,
}

fn canonical_sign(q: Quaternion<f64>) -> Quaternion<f64> {
    let c = [q.w, q.i, q.j, q.k];
    const EPS: f64 = 1e-12;
    let first = c.iter().copied().find(|v| v.abs() > EPS).unwrap_or(1.0);
    if first < 0.0 {
        -q
    } else {
        q
    }
}

/// Geodesic angle (radians) between two unit quaternions, sign-agnostic.
fn quat_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let d = a.coords.dot(&b.coords).abs().min(1.0);
    2.0 * d.acos()
}

fn generate(kind: GroupKind) -> Vec<Quaternion<f64>> {
    let mut out = Vec::new();
    // Units ±1, ±i, ±j, ±k (one per sign class).
    for axis in 0..4 {
        let mut c = [0.0; 4];
        c[axis] = 1.0;
        out.push(c);
    }
    // (±1 ± i ± j ± k) / 2
    for signs in 0..16u32 {
        let c: [f64; 4] = std::array::from_fn(|b| if signs >> b & 1 == 1 { -0.5 } else { 0.5 });
        out.push(c);
    }
    match kind {
        GroupKind::Tetrahedral => {}
        GroupKind::Octahedral => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            for a in 0..4 {
                for b in a + 1..4 {
                    for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut c = [0.0; 4];
                        c[a] = sa * h;
                        c[b] = sb * h;
                        out.push(c);
                    }
                }
            }
        }
        GroupKind::Icosahedral => {
            // Even permutations of ½(0, ±1, ±φ⁻¹, ±φ).
            let phi = (1.0 + 5f64.sqrt()) / 2.0;
            let base = [0.0, 1.0, 1.0 / phi, phi];
            for perm in even_permutations() {
                for signs in 0..8u32 {
                    let mut c = [0.0; 4];
                    for (slot, &target) in perm.iter().enumerate() {
                        let s = if slot > 0 && signs >> (slot - 1) & 1 == 1 { -1.0 } else { 1.0 };
                        c[target] = s * base[slot] / 2.0;
                    }
                    out.push(c);
                }
            }
        }
    }
    out.into_iter()
        .map(|c| Quaternion::new(c[0], c[1], c[2], c[3]))
        .collect()
}

fn even_permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let distinct = (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j]));
                    if !distinct {
                        continue;
                    }
                    let inversions = (0..4)
                        .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
                        .filter(|&(i, j)| p[i] > p[j])
                        .count();
                    if inversions % 2 == 0 {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

impl RotationGroup {
    /// Builds one of the three supported groups.
    ///
    /// Panics if the generated table is inconsistent, which would indicate a
    /// construction bug rather than a recoverable condition.
    pub fn new(kind: GroupKind) -> RotationGroup {
        let mut quats: Vec<Quaternion<f64>> = Vec::new();
        for q in generate(kind) {
            let q = canonical_sign(q);
            let uq = UnitQuaternion::from_quaternion(q);
            if !quats
                .iter()
                .any(|p| quat_angle(&UnitQuaternion::from_quaternion(*p), &uq) < MATCH_TOLERANCE)
            {
                quats.push(q);
            }
        }
        let group = RotationGroup::from_quaternions(kind, &quats)
            .unwrap_or_else(|e| panic!("{kind} group construction failed: {e}"));
        assert_eq!(group.order(), kind.order(), "{kind} group has wrong order");
        group
    }

    /// Builds a group from an explicit element list (identity first).
    pub fn from_quaternions(kind: GroupKind, quats: &[Quaternion<f64>]) -> Result<RotationGroup, GroupError> {
        let elements: Vec<UnitQuaternion<f64>> = quats
            .iter()
            .map(|q| UnitQuaternion::new_unchecked(canonical_sign(q.normalize())))
            .collect();
        if elements.is_empty() || quat_angle(&elements[0], &UnitQuaternion::identity()) > MATCH_TOLERANCE {
            return Err(GroupError::MissingIdentity);
        }
        let n = elements.len();
        for a in 0..n {
            for b in a + 1..n {
                if quat_angle(&elements[a], &elements[b]) <= MATCH_TOLERANCE {
                    return Err(GroupError::Duplicate(a, b));
                }
            }
        }
        let mut cayley = vec![0usize; n * n];
        for a in 0..n {
            for b in 0..n {
                let prod = elements[a] * elements[b];
                let mut found = None;
                for (k, e) in elements.iter().enumerate() {
                    if quat_angle(&prod, e) <= MATCH_TOLERANCE {
                        if found.is_some() {
                            return Err(GroupError::Ambiguous(a, b));
                        }
                        found = Some(k);
                    }
                }
                cayley[a * n + b] = found.ok_or(GroupError::NotClosed(a, b))?;
            }
        }
        let mut inverse = vec![usize::MAX; n];
        for a in 0..n {
            inverse[a] = (0..n)
                .find(|&b| cayley[a * n + b] == 0)
                .ok_or(GroupError::NotClosed(a, a))?;
        }
        let rotations = elements.iter().map(|q| q.to_rotation_matrix()).collect();
        Ok(RotationGroup {
            kind,
            elements,
            rotations,
            cayley,
            inverse,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = GroupElementId> {
        (0..self.order()).map(GroupElementId)
    }

    pub fn quaternion(&self, g: GroupElementId) -> &UnitQuaternion<f64> {
        &self.elements[g.0]
    }

    pub fn rotation(&self, g: GroupElementId) -> &Rotation3<f64> {
        &self.rotations[g.0]
    }

    pub fn rotations(&self) -> &[Rotation3<f64>] {
        &self.rotations
    }

    /// `a ∘ b`.
    #[inline]
    pub fn compose(&self, a: GroupElementId, b: GroupElementId) -> GroupElementId {
        GroupElementId(self.cayley[a.0 * self.order() + b.0])
    }

    #[inline]
    pub fn compose_index(&self, a: usize, b: usize) -> usize {
        self.cayley[a * self.order() + b]
    }

    pub fn inverse(&self, g: GroupElementId) -> GroupElementId {
        GroupElementId(self.inverse[g.0])
    }

    pub fn cayley_row(&self, a: GroupElementId) -> &[usize] {
        let n = self.order();
        &self.cayley[a.0 * n..(a.0 + 1) * n]
    }

    /// Nearest element by geodesic distance (lowest index on ties) and the
    /// residual `g⁻¹ ∘ R`.
    pub fn quantize(&self, r: &Rotation3<f64>) -> Result<(GroupElementId, Rotation3<f64>), GroupError> {
        let r = validate_rotation(r.matrix())?;
        let g = self.nearest(&UnitQuaternion::from_rotation_matrix(&r));
        Ok((g, self.rotations[g.0].inverse() * r))
    }

    /// Unvalidated nearest-element lookup used on hot paths.
    pub fn nearest(&self, q: &UnitQuaternion<f64>) -> GroupElementId {
        let mut best = 0;
        let mut best_dot = -1.0;
        for (k, e) in self.elements.iter().enumerate() {
            let d = e.coords.dot(&q.coords).abs();
            if d > best_dot {
                best_dot = d;
                best = k;
            }
        }
        GroupElementId(best)
    }

    pub fn nearest_rotation(&self, r: &Rotation3<f64>) -> GroupElementId {
        self.nearest(&UnitQuaternion::from_rotation_matrix(r))
    }

    /// One row per element: `index w x y z`.
    pub fn dump_tables<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, q) in self.elements.iter().enumerate() {
            writeln!(out, "{k} {:.17e} {:.17e} {:.17e} {:.17e}", q.w, q.i, q.j, q.k)?;
        }
        Ok(())
    }
}
