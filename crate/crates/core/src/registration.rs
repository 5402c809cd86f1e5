//! Corresponded rigid fitting and the pick/place action algebra.
//!
//! `kabsch_fit` solves `min Σ |R·srcᵢ + t − tgtᵢ|²` over SE(3) for clouds
//! whose point `i` correspond. Actions are then composed from the fitted
//! transforms of each object into its generated configuration.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, RigidTransform};

/// Singular-value ratio below which the source geometry counts as degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    WellPosed,
    NearDegenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub transform: RigidTransform,
    /// Root-mean-square distance between the fitted source and the target, meters.
    pub rms_residual: f64,
    pub condition: Conditioning,
}

impl FitReport {
    /// A report wrapping a known transform, for composing actions by hand.
    pub fn exact(transform: RigidTransform) -> Self {
        Self {
            transform,
            rms_residual: 0.0,
            condition: Conditioning::WellPosed,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.condition == Conditioning::NearDegenerate
    }
}

/// Least-squares rigid alignment of `src` onto `tgt` by SVD of the
/// cross-covariance, with the determinant sign folded into the direction of
/// the smallest singular value so the result is always a proper rotation.
///
/// Collinear or coincident sources still return a fit, flagged
/// [`Conditioning::NearDegenerate`].
pub fn kabsch_fit(src: &PointCloud, tgt: &PointCloud) -> Result<FitReport> {
    if src.len() != tgt.len() {
        return Err(Error::ShapeMismatch(format!(
            "source has {} points, target {}",
            src.len(),
            tgt.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rigid fit needs at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let cs = src.centroid()?;
    let ct = tgt.centroid()?;

    let mut h = Matrix3::<f64>::zeros();
    for (s, t) in src.points().iter().zip(tgt.points()) {
        h += (s - cs) * (t - ct).transpose();
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("3x3 SVD with U requested");
    let v_t = svd.v_t.expect("3x3 SVD with Vᵀ requested");
    let sv = svd.singular_values;

    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let condition = if sorted[1] <= DEGENERACY_RATIO * sorted[0] || sorted[0] == 0.0 {
        Conditioning::NearDegenerate
    } else {
        Conditioning::WellPosed
    };

    let v = v_t.transpose();
    let ut = u.transpose();
    let d = (v * ut).determinant().signum();
    let smallest = (0..3)
        .min_by(|&a, &b| sv[a].total_cmp(&sv[b]))
        .expect("three singular values");
    let mut diag = Vector3::repeat(1.0);
    diag[smallest] = if d == 0.0 { 1.0 } else { d };
    let rotation = v * Matrix3::from_diagonal(&diag) * ut;
    let translation = ct - rotation * cs;
    let transform = RigidTransform::from_parts_unchecked(rotation, translation);

    let sq: f64 = src
        .points()
        .iter()
        .zip(tgt.points())
        .map(|(s, t)| (transform.apply_point(s) - t).norm_squared())
        .sum();
    let rms_residual = (sq / src.len() as f64).sqrt();

    Ok(FitReport {
        transform,
        rms_residual,
        condition,
    })
}

/// `T̂_a⁻¹ · T̂_b`: moves object b into its goal pose relative to object a.
pub fn place_action(fit_a: &FitReport, fit_b: &FitReport) -> RigidTransform {
    fit_a.transform.inverse().compose(&fit_b.transform)
}

/// `T̂_b⁻¹`: gripper pose for a canonical gripper.
pub fn pick_action(fit_b: &FitReport) -> RigidTransform {
    fit_b.transform.inverse()
}

/// `T̂_b⁻¹ · T̂_a`: gripper pose when the gripper itself was also fitted.
pub fn pick_action_general(fit_b: &FitReport, fit_a: &FitReport) -> RigidTransform {
    fit_b.transform.inverse().compose(&fit_a.transform)
}
