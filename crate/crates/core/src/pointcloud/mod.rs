//! Point clouds, rigid transforms, and the preprocessing primitives
//! (centering, voxel downsampling, resampling, Haar rotation sampling).
//!
//! Point order is meaningful everywhere in this crate: index `i` is the
//! identity of a point and is what correspondence-based fitting relies on.

mod io;
mod transform;

use std::collections::HashSet;

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use io::{format_cloud, parse_cloud, read_cloud, write_cloud};
pub use transform::{rotation_angle, RigidTransform, ROTATION_TOLERANCE};

pub type Vec3 = Vector3<f64>;

/// Default voxel cell edge, meters.
pub const DEFAULT_VOXEL_CELL: f64 = 0.004;
/// Default point count after resampling.
pub const DEFAULT_POINTS: usize = 2048;
/// Color used for points of clouds that carry no color channel.
pub const NEUTRAL_COLOR: f64 = 0.5;

/// Seeded RNG used throughout the crate. ChaCha keeps streams identical
/// across platforms and `rand` releases.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            colors: None,
        })
    }

    pub fn with_colors(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self> {
        check_finite(&points)?;
        if colors.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for {} points",
                colors.len(),
                points.len()
            )));
        }
        if colors
            .iter()
            .flat_map(|c| c.iter())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidArgument(
                "color channels must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            points,
            colors: Some(colors),
        })
    }

    pub fn from_parts(points: Vec<Vec3>, colors: Option<Vec<Vec3>>) -> Result<Self> {
        match colors {
            Some(c) => Self::with_colors(points, c),
            None => Self::new(points),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    /// Color of point `i`, or the neutral gray when the cloud has none.
    pub fn color(&self, i: usize) -> Vec3 {
        match &self.colors {
            Some(c) => c[i],
            None => Vec3::repeat(NEUTRAL_COLOR),
        }
    }

    pub fn centroid(&self) -> Result<Vec3> {
        if self.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let sum: Vec3 = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }

    /// Same colors, new positions. Positions must be finite and the count must match.
    pub fn with_points(&self, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} replacement points for a cloud of {}",
                points.len(),
                self.points.len()
            )));
        }
        check_finite(&points)?;
        Ok(Self {
            points,
            colors: self.colors.clone(),
        })
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            points: self.points.iter().map(|p| p + offset).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Concatenates `other` after `self`. Colors survive only if both carry them.
    pub fn concat(&self, other: &PointCloud) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self { points, colors }
    }

    /// Largest distance from the centroid.
    pub fn radius(&self) -> Result<f64> {
        let c = self.centroid()?;
        Ok(self
            .points
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max))
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> Result<f64> {
        let first = *self.points.first().ok_or(Error::EmptyCloud)?;
        let (lo, hi) = self
            .points
            .iter()
            .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Ok((hi - lo).norm())
    }
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument(format!("point {i} is not finite")));
    }
    Ok(())
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| t.apply_point(p)).collect(),
        colors: cloud.colors.clone(),
    })
}

/// `t2 ∘ t1`.
pub fn compose(t2: &RigidTransform, t1: &RigidTransform) -> RigidTransform {
    t2.compose(t1)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Subtracts the centroid. Returns the centered cloud and the centroid.
pub fn center(cloud: &PointCloud) -> Result<(PointCloud, Vec3)> {
    let c = cloud.centroid()?;
    Ok((cloud.translated(&-c), c))
}

/// Keeps the first point (in input order) of every occupied cell of a
/// world-origin grid with edge `cell`.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel cell must be positive, got {cell}"
        )));
    }
    let mut seen = HashSet::with_capacity(cloud.len());
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let key = (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            );
            seen.insert(key)
        })
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

/// Exactly `n` points: a uniform subset without replacement (kept in input
/// order) when the cloud is large enough, otherwise every point followed by
/// uniformly drawn duplicates.
pub fn resample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    resample_with(cloud, n, &mut seeded_rng(seed))
}

pub fn resample_with<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("resample count must be ≥ 1".into()));
    }
    let len = cloud.len();
    let indices: Vec<usize> = if len >= n {
        let mut idx = index::sample(rng, len, n).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..len)
            .chain((len..n).map(|_| rng.random_range(0..len)))
            .collect()
    };
    Ok(cloud.select(&indices))
}

/// Haar-uniform rotation from a normalized 4D Gaussian quaternion.
pub fn random_rotation(seed: u64) -> RigidTransform {
    random_rotation_with(&mut seeded_rng(seed))
}

pub fn random_rotation_with<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    loop {
        let q = Vector4::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = q.norm();
        if n > 1e-12 {
            let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
            let unit = UnitQuaternion::from_quaternion(q);
            return RigidTransform::from_quaternion(unit, Vec3::zeros());
        }
    }
}
