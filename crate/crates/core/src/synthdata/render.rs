use crate::se3::Vec3;

/// Orthographic camera: `direction` points from the object toward the
/// camera; the image is `resolution × resolution` pixels over the square
/// bounding the projected cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub direction: Vec3,
    pub resolution: usize,
}

/// Image-plane basis `(e1, e2)` completing `d` to a right-handed frame.
fn image_basis(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = helper.cross(d).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Row-major pixel index of every point.
pub(crate) fn pixels(points: &[Vec3], view: &View) -> Vec<usize> {
    let d = view.direction.normalize();
    let (e1, e2) = image_basis(&d);
    let uv: Vec<(f64, f64)> = points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
    let (mut umin, mut vmin, mut umax, mut vmax) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(u, v) in &uv {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let side = (umax - umin).max(vmax - vmin).max(1e-12);
    let r = view.resolution;
    let cell = |x: f64, lo: f64| (((x - lo) / side * r as f64).floor() as usize).min(r - 1);
    uv.iter().map(|&(u, v)| cell(v, vmin) * r + cell(u, umin)).collect()
}

/// Indices (ascending) of the front-most point in every occupied pixel.
/// Depth ties go to the lower index.
pub fn visible_points(points: &[Vec3], view: &View) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let d = view.direction.normalize();
    let pix = pixels(points, view);
    let mut best: Vec<Option<usize>> = vec![None; view.resolution * view.resolution];
    for (i, &px) in pix.iter().enumerate() {
        let depth = points[i].dot(&d);
        match best[px] {
            Some(j) if points[j].dot(&d) >= depth => {}
            _ => best[px] = Some(i),
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().collect();
    keep.sort_unstable();
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate(z: f64, n: usize, size: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vec3::new(size * i as f64 / (n - 1) as f64, size * j as f64 / (n - 1) as f64, z));
            }
        }
        pts
    }

    #[test]
    fn flat_plate_facing_camera_fully_visible() {
        let pts = plate(0.0, 16, 1.0);
        let view = View {
            direction: Vec3::z(),
            resolution: 32,
        };
        assert_eq!(visible_points(&pts, &view).len(), pts.len());
    }

    #[test]
    fn near_plate_hides_far_plate() {
        let mut pts = plate(1.0, 16, 1.0);
        pts.extend(plate(0.0, 16, 1.0));
        let view = View {
            direction: Vec3::z(),
            resolution: 32,
        };
        let vis = visible_points(&pts, &view);
        assert!(vis.iter().all(|&i| i < 256));
        let view = View {
            direction: -Vec3::z(),
            resolution: 32,
        };
        assert!(visible_points(&pts, &view).iter().all(|&i| i >= 256));
    }

    #[test]
    fn matches_per_pixel_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let view = View {
            direction: Vec3::new(0.3, -0.5, 0.8),
            resolution: 64,
        };
        let fast = visible_points(&pts, &view);
        // Oracle: for each pixel scan every point.
        let pix = pixels(&pts, &view);
        let d = view.direction.normalize();
        let mut oracle = Vec::new();
        for px in 0..64 * 64 {
            let members: Vec<usize> = (0..pts.len()).filter(|&i| pix[i] == px).collect();
            if let Some(&top) = members.iter().max_by(|&&a, &&b| pts[a].dot(&d).total_cmp(&pts[b].dot(&d)).then(b.cmp(&a))) {
                oracle.push(top);
            }
        }
        oracle.sort_unstable();
        assert_eq!(fast, oracle);
    }
}
