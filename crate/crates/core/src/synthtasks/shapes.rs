//! Procedural objects sampled uniformly by area over their surfaces.
//!
//! Every object is built from flat, cylindrical and toroidal patches in its
//! own model frame. Colors blend a per-part base color with a gradient over
//! the object's model-frame bounding box, so a point's color identifies where
//! on the object it lies regardless of the object's pose.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::error::{Error, Result};
use crate::pointcloud::{seeded_rng, PointCloud, Vec3};

pub const MIN_OBJECT_POINTS: usize = 500;
pub const MAX_OBJECT_POINTS: usize = 5000;

/// Weight of the part color against the position gradient.
const PART_COLOR_WEIGHT: f64 = 0.3;

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.7, 0.25],
    [0.2, 0.35, 0.85],
    [0.9, 0.75, 0.15],
    [0.65, 0.25, 0.75],
    [0.15, 0.75, 0.75],
];

/// Object geometry in meters, expressed in the object's model frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectShape {
    /// Axis-aligned box centered at the origin.
    Box { size: [f64; 3] },
    /// Vertical post of footprint `post × post` standing on the origin, total
    /// height `height`, with an arm reaching `arm` past the post along +x at
    /// the top.
    LShape { post: f64, height: f64, arm: f64 },
    /// Cylinder along z centered at the origin, capped at both ends.
    Peg { radius: f64, length: f64 },
    /// Torus in the xy-plane.
    Ring { major: f64, minor: f64 },
    /// Open cylinder along z standing on the origin, with an optional
    /// half-torus handle on the +x side.
    Cup { radius: f64, height: f64, handle: bool },
    /// Box slab centered at the origin with a rectangular through-slot along z.
    SlotSlab { size: [f64; 3], slot: [f64; 2] },
}

impl ObjectShape {
    pub fn kind(&self) -> &'static str {
        match self {
            ObjectShape::Box { .. } => "box",
            ObjectShape::LShape { .. } => "lshape",
            ObjectShape::Peg { .. } => "peg",
            ObjectShape::Ring { .. } => "ring",
            ObjectShape::Cup { .. } => "cup",
            ObjectShape::SlotSlab { .. } => "slab-with-slot",
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match self {
            ObjectShape::Box { size } => size.to_vec(),
            ObjectShape::LShape { post, height, arm } => vec![*post, *height, *arm],
            ObjectShape::Peg { radius, length } => vec![*radius, *length],
            ObjectShape::Ring { major, minor } => vec![*major, *minor],
            ObjectShape::Cup { radius, height, .. } => vec![*radius, *height],
            ObjectShape::SlotSlab { size, slot } => size.iter().chain(slot).copied().collect(),
        };
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument(format!("{} dimensions must be positive: {dims:?}", self.kind())));
        }
        match self {
            ObjectShape::Ring { major, minor } if minor >= major => {
                Err(Error::InvalidArgument("ring tube radius must be below the ring radius".into()))
            }
            ObjectShape::LShape { post, height, .. } if post >= height => {
                Err(Error::InvalidArgument("post must be taller than it is wide".into()))
            }
            ObjectShape::SlotSlab { size, slot } if slot[0] >= size[0] || slot[1] >= size[1] => {
                Err(Error::InvalidArgument("slot must be smaller than the slab".into()))
            }
            _ => Ok(()),
        }
    }

    /// Model-frame bounding box, also used to normalize the color gradient.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match *self {
            ObjectShape::Box { size } | ObjectShape::SlotSlab { size, .. } => {
                let h = Vec3::from(size) * 0.5;
                (-h, h)
            }
            ObjectShape::LShape { post, height, arm } => (
                Vec3::new(-post / 2.0, -post / 2.0, 0.0),
                Vec3::new(post / 2.0 + arm, post / 2.0, height),
            ),
            ObjectShape::Peg { radius, length } => (
                Vec3::new(-radius, -radius, -length / 2.0),
                Vec3::new(radius, radius, length / 2.0),
            ),
            ObjectShape::Ring { major, minor } => {
                let r = major + minor;
                (Vec3::new(-r, -r, -minor), Vec3::new(r, r, minor))
            }
            ObjectShape::Cup { radius, height, handle } => {
                let (major, minor) = cup_handle(radius, height);
                let x = if handle { radius + major + minor } else { radius };
                (Vec3::new(-radius, -radius, 0.0), Vec3::new(x, radius, height))
            }
        }
    }

    fn patches(&self) -> Vec<Patch> {
        let ex = Vec3::x();
        let ey = Vec3::y();
        let ez = Vec3::z();
        match *self {
            ObjectShape::Box { size } => box_patches(Vec3::zeros(), Vec3::from(size), 0),
            ObjectShape::LShape { post, height, arm } => {
                // post without its top face, then the arm without the part of
                // its bottom face resting on the post
                let post_box = box_patches(
                    Vec3::new(0.0, 0.0, (height - post) / 2.0),
                    Vec3::new(post, post, height - post),
                    0,
                );
                let arm_box = box_patches(
                    Vec3::new(arm / 2.0, 0.0, height - post / 2.0),
                    Vec3::new(arm + post, post, post),
                    1,
                );
                let mut p: Vec<Patch> = post_box
                    .into_iter()
                    .enumerate()
                    .filter_map(|(i, f)| (i != 1).then_some(f))
                    .collect();
                p.extend(arm_box.into_iter().skip(1));
                p.push(Patch::rect(Vec3::new(post / 2.0, -post / 2.0, height - post), ex * arm, ey * post, 1));
                p
            }
            ObjectShape::Peg { radius, length } => vec![
                Patch::cylinder(Vec3::new(0.0, 0.0, -length / 2.0), ex, ey, ez, radius, length, 0),
                Patch::annulus(Vec3::new(0.0, 0.0, length / 2.0), ex, ey, 0.0, radius, 1),
                Patch::annulus(Vec3::new(0.0, 0.0, -length / 2.0), ex, ey, 0.0, radius, 2),
            ],
            ObjectShape::Ring { major, minor } => vec![
                Patch::torus(Vec3::zeros(), ex, ey, ez, major, minor, 0.0, PI, 0),
                Patch::torus(Vec3::zeros(), ex, ey, ez, major, minor, PI, TAU, 1),
            ],
            ObjectShape::Cup { radius, height, handle } => {
                let mut p = vec![
                    Patch::cylinder(Vec3::zeros(), ex, ey, ez, radius, height, 0),
                    Patch::annulus(Vec3::zeros(), ex, ey, 0.0, radius, 1),
                ];
                if handle {
                    let (major, minor) = cup_handle(radius, height);
                    // half torus in the xz-plane bulging toward +x
                    let center = Vec3::new(radius, 0.0, height / 2.0);
                    p.push(Patch::torus(center, ex, ez, ey, major, minor, -PI / 2.0, PI / 2.0, 2));
                }
                p
            }
            ObjectShape::SlotSlab { size, slot } => {
                let h = Vec3::from(size) * 0.5;
                let (sx, sy) = (slot[0] / 2.0, slot[1] / 2.0);
                let mut p = Vec::new();
                // top and bottom faces, each as four rectangles framing the slot
                for (z, part) in [(h.z, 0), (-h.z, 1)] {
                    p.push(Patch::rect(Vec3::new(-h.x, -h.y, z), ex * 2.0 * h.x, ey * (h.y - sy), part));
                    p.push(Patch::rect(Vec3::new(-h.x, sy, z), ex * 2.0 * h.x, ey * (h.y - sy), part));
                    p.push(Patch::rect(Vec3::new(-h.x, -sy, z), ex * (h.x - sx), ey * 2.0 * sy, part));
                    p.push(Patch::rect(Vec3::new(sx, -sy, z), ex * (h.x - sx), ey * 2.0 * sy, part));
                }
                // outer sides
                p.push(Patch::rect(Vec3::new(-h.x, -h.y, -h.z), ex * 2.0 * h.x, ez * 2.0 * h.z, 2));
                p.push(Patch::rect(Vec3::new(-h.x, h.y, -h.z), ex * 2.0 * h.x, ez * 2.0 * h.z, 2));
                p.push(Patch::rect(Vec3::new(-h.x, -h.y, -h.z), ey * 2.0 * h.y, ez * 2.0 * h.z, 2));
                p.push(Patch::rect(Vec3::new(h.x, -h.y, -h.z), ey * 2.0 * h.y, ez * 2.0 * h.z, 2));
                // slot walls
                p.push(Patch::rect(Vec3::new(-sx, -sy, -h.z), ex * 2.0 * sx, ez * 2.0 * h.z, 3));
                p.push(Patch::rect(Vec3::new(-sx, sy, -h.z), ex * 2.0 * sx, ez * 2.0 * h.z, 3));
                p.push(Patch::rect(Vec3::new(-sx, -sy, -h.z), ey * 2.0 * sy, ez * 2.0 * h.z, 3));
                p.push(Patch::rect(Vec3::new(sx, -sy, -h.z), ey * 2.0 * sy, ez * 2.0 * h.z, 3));
                p
            }
        }
    }
}

/// Handle torus radii `(major, minor)` for a cup.
pub(crate) fn cup_handle(radius: f64, height: f64) -> (f64, f64) {
    let major = (0.3 * height).min(0.8 * radius);
    (major, 0.2 * major)
}

#[derive(Debug, Clone)]
enum Surface {
    /// `origin + a·u + b·v`, `a, b ∈ [0, 1]`.
    Rect { origin: Vec3, u: Vec3, v: Vec3 },
    /// Annulus in the plane spanned by unit `e1`, `e2`.
    Annulus { center: Vec3, e1: Vec3, e2: Vec3, r_in: f64, r_out: f64 },
    /// Side of a cylinder whose base circle is centered at `base`.
    Cylinder { base: Vec3, e1: Vec3, e2: Vec3, axis: Vec3, radius: f64, height: f64 },
    /// Torus patch over major angles `[phi0, phi1)`; the tube circle spans
    /// the radial direction and `axis`.
    Torus { center: Vec3, e1: Vec3, e2: Vec3, axis: Vec3, major: f64, minor: f64, phi0: f64, phi1: f64 },
}

#[derive(Debug, Clone)]
struct Patch {
    surface: Surface,
    part: usize,
}

impl Patch {
    fn rect(origin: Vec3, u: Vec3, v: Vec3, part: usize) -> Self {
        Self { surface: Surface::Rect { origin, u, v }, part }
    }

    fn annulus(center: Vec3, e1: Vec3, e2: Vec3, r_in: f64, r_out: f64, part: usize) -> Self {
        Self { surface: Surface::Annulus { center, e1, e2, r_in, r_out }, part }
    }

    fn cylinder(base: Vec3, e1: Vec3, e2: Vec3, axis: Vec3, radius: f64, height: f64, part: usize) -> Self {
        Self { surface: Surface::Cylinder { base, e1, e2, axis, radius, height }, part }
    }

    #[allow(clippy::too_many_arguments)]
    fn torus(center: Vec3, e1: Vec3, e2: Vec3, axis: Vec3, major: f64, minor: f64, phi0: f64, phi1: f64, part: usize) -> Self {
        Self { surface: Surface::Torus { center, e1, e2, axis, major, minor, phi0, phi1 }, part }
    }

    fn area(&self) -> f64 {
        match &self.surface {
            Surface::Rect { u, v, .. } => u.cross(v).norm(),
            Surface::Annulus { r_in, r_out, .. } => PI * (r_out * r_out - r_in * r_in),
            Surface::Cylinder { radius, height, .. } => TAU * radius * height,
            Surface::Torus { major, minor, phi0, phi1, .. } => (phi1 - phi0) * TAU * minor * major,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match &self.surface {
            Surface::Rect { origin, u, v } => origin + u * rng.random::<f64>() + v * rng.random::<f64>(),
            Surface::Annulus { center, e1, e2, r_in, r_out } => {
                let r = rng.random_range(r_in * r_in..=r_out * r_out).sqrt();
                let a = rng.random_range(0.0..TAU);
                center + (e1 * a.cos() + e2 * a.sin()) * r
            }
            Surface::Cylinder { base, e1, e2, axis, radius, height } => {
                let a = rng.random_range(0.0..TAU);
                base + (e1 * a.cos() + e2 * a.sin()) * *radius + axis * (rng.random::<f64>() * height)
            }
            Surface::Torus { center, e1, e2, axis, major, minor, phi0, phi1 } => {
                let phi = rng.random_range(*phi0..*phi1);
                // area element is proportional to (major + minor·cos θ)
                let theta = loop {
                    let th = rng.random_range(0.0..TAU);
                    if rng.random::<f64>() * (major + minor) <= major + minor * th.cos() {
                        break th;
                    }
                };
                let radial = e1 * phi.cos() + e2 * phi.sin();
                center + radial * (major + minor * theta.cos()) + axis * (minor * theta.sin())
            }
        }
    }
}

/// Faces in the order bottom, top, -y, +y, -x, +x.
fn box_patches(center: Vec3, size: Vec3, part: usize) -> Vec<Patch> {
    let lo = center - size * 0.5;
    let (ux, uy, uz) = (Vec3::x() * size.x, Vec3::y() * size.y, Vec3::z() * size.z);
    [
        (lo, ux, uy),
        (lo + uz, ux, uy),
        (lo, ux, uz),
        (lo + uy, ux, uz),
        (lo, uy, uz),
        (lo + ux, uy, uz),
    ]
    .into_iter()
    .map(|(origin, u, v)| Patch::rect(origin, u, v, part))
    .collect()
}

fn check_count(what: &str, count: usize) -> Result<()> {
    if (MIN_OBJECT_POINTS..=MAX_OBJECT_POINTS).contains(&count) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} point count {count} outside [{MIN_OBJECT_POINTS}, {MAX_OBJECT_POINTS}]"
        )))
    }
}

/// Samples `count` surface points of `shape` with area-uniform density.
pub fn make_object(shape: &ObjectShape, count: usize, seed: u64) -> Result<PointCloud> {
    shape.validate()?;
    check_count("object", count)?;
    let (lo, hi) = shape.bounds();
    sample_patches(&shape.patches(), lo, hi, count, seed)
}

/// Parallel-jaw gripper: a palm slab and two finger slabs. The tool frame
/// sits between the fingertips at the origin, the approach direction is +z
/// and the fingers open along ±y.
pub fn canonical_gripper(count: usize, seed: u64) -> Result<PointCloud> {
    check_count("gripper", count)?;
    let mut patches = box_patches(Vec3::new(0.0, 0.0, -0.07), Vec3::new(0.02, 0.11, 0.02), 0);
    patches.extend(box_patches(Vec3::new(0.0, 0.045, -0.03), Vec3::new(0.02, 0.01, 0.06), 1));
    patches.extend(box_patches(Vec3::new(0.0, -0.045, -0.03), Vec3::new(0.02, 0.01, 0.06), 2));
    sample_patches(&patches, Vec3::new(-0.01, -0.055, -0.08), Vec3::new(0.01, 0.055, 0.0), count, seed)
}

fn sample_patches(patches: &[Patch], lo: Vec3, hi: Vec3, count: usize, seed: u64) -> Result<PointCloud> {
    let total: f64 = patches.iter().map(Patch::area).sum();
    let extent = (hi - lo).map(|e| e.max(1e-9));
    let mut rng = seeded_rng(seed);
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.random::<f64>() * total;
        let patch = patches
            .iter()
            .find(|p| {
                pick -= p.area();
                pick <= 0.0
            })
            .unwrap_or(&patches[patches.len() - 1]);
        let p = patch.sample(&mut rng);
        let base = Vec3::from(PALETTE[patch.part % PALETTE.len()]);
        let gradient = (p - lo).component_div(&extent).map(|v| v.clamp(0.0, 1.0));
        colors.push(base * PART_COLOR_WEIGHT + gradient * (1.0 - PART_COLOR_WEIGHT));
        points.push(p);
    }
    PointCloud::with_colors(points, colors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_points_lie_on_the_surface() {
        let h = 0.02;
        let cloud = make_object(&ObjectShape::Box { size: [0.04; 3] }, 2000, 1).unwrap();
        for p in cloud.points() {
            assert!(p.iter().all(|v| v.abs() <= h + 1e-9));
            assert!(p.iter().any(|v| (v.abs() - h).abs() <= 1e-9), "{p:?} is interior");
        }
    }

    #[test]
    fn ring_has_an_empty_hole() {
        let (major, minor) = (0.04, 0.01);
        let cloud = make_object(&ObjectShape::Ring { major, minor }, 3000, 2).unwrap();
        for p in cloud.points() {
            let radial = (p.x * p.x + p.y * p.y).sqrt();
            assert!(radial >= major - minor - 1e-9);
            let tube = ((radial - major).powi(2) + p.z * p.z).sqrt();
            assert!((tube - minor).abs() <= 1e-9);
        }
    }

    #[test]
    fn box_faces_are_area_uniform() {
        let cloud = make_object(&ObjectShape::Box { size: [0.08, 0.04, 0.02] }, 5000, 3).unwrap();
        // the two 8 × 4 cm faces carry 64 / 112 of the area
        let top_bottom = cloud.points().iter().filter(|p| (p.z.abs() - 0.01).abs() <= 1e-9).count();
        let frac = top_bottom as f64 / 5000.0;
        assert!((frac - 64.0 / 112.0).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn slot_interior_is_empty() {
        let shape = ObjectShape::SlotSlab { size: [0.12, 0.08, 0.03], slot: [0.024, 0.024] };
        let cloud = make_object(&shape, 3000, 4).unwrap();
        for p in cloud.points() {
            assert!(!(p.x.abs() < 0.012 - 1e-9 && p.y.abs() < 0.012 - 1e-9), "point {p:?} inside slot");
        }
    }

    #[test]
    fn lshape_has_no_points_inside_the_union() {
        let cloud = make_object(&ObjectShape::LShape { post: 0.02, height: 0.12, arm: 0.06 }, 3000, 5).unwrap();
        let inside = |p: &Vec3, lo: [f64; 3], hi: [f64; 3]| (0..3).all(|k| p[k] > lo[k] + 1e-9 && p[k] < hi[k] - 1e-9);
        for p in cloud.points() {
            assert!(!inside(p, [-0.01, -0.01, 0.0], [0.01, 0.01, 0.12]), "{p:?} inside the post");
            assert!(!inside(p, [-0.01, -0.01, 0.10], [0.07, 0.01, 0.12]), "{p:?} inside the arm");
        }
    }

    #[test]
    fn cup_handle_sticks_out() {
        let shape = ObjectShape::Cup { radius: 0.04, height: 0.09, handle: true };
        let cloud = make_object(&shape, 3000, 6).unwrap();
        let max_x = cloud.points().iter().map(|p| p.x).fold(f64::MIN, f64::max);
        assert!(max_x > 0.05);
        let (lo, hi) = shape.bounds();
        for p in cloud.points() {
            assert!((0..3).all(|k| p[k] >= lo[k] - 1e-9 && p[k] <= hi[k] + 1e-9));
        }
    }

    #[test]
    fn deterministic_and_colored() {
        let shape = ObjectShape::Peg { radius: 0.01, length: 0.08 };
        let a = make_object(&shape, 800, 7).unwrap();
        assert_eq!(a, make_object(&shape, 800, 7).unwrap());
        assert_ne!(a, make_object(&shape, 800, 8).unwrap());
        assert_eq!(a.len(), 800);
        assert!(a.colors().is_some());
    }

    #[test]
    fn gripper_fingers_straddle_the_tool_center() {
        let g = canonical_gripper(1000, 0).unwrap();
        assert!(g.points().iter().all(|p| p.z <= 1e-12 && p.z >= -0.08 - 1e-12));
        assert!(g.points().iter().any(|p| p.y > 0.04 && p.z > -0.01));
        assert!(g.points().iter().any(|p| p.y < -0.04 && p.z > -0.01));
        // nothing between the fingers
        assert!(!g.points().iter().any(|p| p.y.abs() < 0.04 - 1e-9 && p.z > -0.06 + 1e-9));
    }

    #[test]
    fn invalid_dimensions_and_counts() {
        assert!(make_object(&ObjectShape::Box { size: [0.04, 0.0, 0.04] }, 1000, 0).is_err());
        assert!(make_object(&ObjectShape::Ring { major: 0.01, minor: 0.02 }, 1000, 0).is_err());
        assert!(make_object(&ObjectShape::Box { size: [0.04; 3] }, 100, 0).is_err());
    }
}
