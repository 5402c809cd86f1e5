//! Rectified-flow generation of assembled point clouds.
//!
//! Rows of every state are ordered with all points of object `a` first and
//! all points of object `b` after them. The pair variant moves every row;
//! the single variant holds the leading `a` rows (a canonical gripper) fixed
//! and only generates `b`.

mod model;

pub use model::{ModelDims, ModelSettings, VelocityModel};

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::netcore::FeatureMatrix;
use crate::pointcloud::{PointCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Both objects are generated (placing).
    Pair,
    /// Object `a` is a fixed gripper, only `b` is generated (picking).
    Single,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pair => "pair",
            Variant::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pair" => Some(Variant::Pair),
            "single" => Some(Variant::Single),
            _ => None,
        }
    }
}

/// Everything the velocity field is conditioned on apart from position and time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub features_a: FeatureMatrix,
    pub features_b: FeatureMatrix,
    pub instruction: usize,
    pub instruction_embedding: Vec<f64>,
    /// Membership embeddings for rows of `a` and rows of `b`.
    pub mask_embeddings: [Vec<f64>; 2],
    pub time_dim: usize,
}

impl ConditionBundle {
    pub fn rows(&self) -> usize {
        self.features_a.nrows() + self.features_b.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub positions: Array2<f64>,
    pub time: f64,
    pub variant: Variant,
    /// Leading rows held fixed by the sampler (single variant), else 0.
    pub clamp_count: usize,
}

impl FlowState {
    pub fn new(positions: Array2<f64>, time: f64, variant: Variant, clamp_count: usize) -> Result<Self> {
        if positions.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!("state needs 3 columns, got {}", positions.ncols())));
        }
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::InvalidArgument(format!("time {time} outside [0, 1]")));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state holds non-finite positions".into()));
        }
        if clamp_count > positions.nrows() || (variant == Variant::Pair && clamp_count != 0) {
            return Err(Error::InvalidArgument(format!("invalid clamp count {clamp_count}")));
        }
        Ok(Self {
            positions,
            time,
            variant,
            clamp_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub state: FlowState,
    /// Target drift for the rows in `loss_rows`, in order.
    pub target_drift: Array2<f64>,
    pub loss_rows: Range<usize>,
}

impl TrainingPair {
    pub fn loss_mask(&self) -> Vec<bool> {
        (0..self.state.positions.nrows()).map(|r| self.loss_rows.contains(&r)).collect()
    }
}

/// I.i.d. isotropic Gaussian rows with standard deviation `sigma` per axis.
pub fn sample_noise<R: Rng + ?Sized>(count: usize, sigma: f64, rng: &mut R) -> Result<Array2<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise scale must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    Ok(Array2::from_shape_simple_fn((count, 3), || normal.sample(rng)))
}

pub fn cloud_rows(cloud: &PointCloud) -> Array2<f64> {
    let mut out = Array2::zeros((cloud.len(), 3));
    for (mut row, p) in out.rows_mut().into_iter().zip(cloud.points()) {
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
    }
    out
}

pub fn rows_to_points(rows: &ArrayView2<'_, f64>) -> Vec<Vec3> {
    rows.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

/// Interpolated state at time `t` between noise `x0` and the assembled
/// target `[T_a·P_a ; T_b·P_b]`, with the straight-line target drift.
pub fn make_training_pair(
    p_a: &PointCloud,
    p_b: &PointCloud,
    t_a: &RigidTransform,
    t_b: &RigidTransform,
    t: f64,
    x0: &Array2<f64>,
    variant: Variant,
) -> Result<TrainingPair> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    let (n, m) = (p_a.len(), p_b.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyCloud);
    }
    if x0.dim() != (n + m, 3) {
        return Err(Error::ShapeMismatch(format!(
            "noise has shape {:?}, expected ({}, 3)",
            x0.dim(),
            n + m
        )));
    }
    let mut target = Array2::zeros((n + m, 3));
    for (i, p) in p_a.points().iter().enumerate() {
        let q = t_a.apply_point(p);
        target.row_mut(i).assign(&ndarray::arr1(&[q.x, q.y, q.z]));
    }
    for (i, p) in p_b.points().iter().enumerate() {
        let q = t_b.apply_point(p);
        target.row_mut(n + i).assign(&ndarray::arr1(&[q.x, q.y, q.z]));
    }
    let (loss_rows, clamp) = match variant {
        Variant::Pair => (0..n + m, 0),
        Variant::Single => {
            let a_rows = cloud_rows(p_a);
            if x0.slice(s![..n, ..]) != a_rows {
                return Err(Error::InvalidArgument(
                    "single variant requires the leading noise rows to equal the gripper cloud".into(),
                ));
            }
            (n..n + m, n)
        }
    };
    let mut positions = x0.clone();
    let mut rows = positions.slice_mut(s![loss_rows.clone(), ..]);
    rows.zip_mut_with(&target.slice(s![loss_rows.clone(), ..]), |x, &y| *x = t * y + (1.0 - t) * *x);
    let target_drift = &target.slice(s![loss_rows.clone(), ..]) - &x0.slice(s![loss_rows.clone(), ..]);
    Ok(TrainingPair {
        state: FlowState::new(positions, t, variant, clamp)?,
        target_drift,
        loss_rows,
    })
}

/// Mean over masked rows and the three axes of the squared drift error.
pub fn flow_loss(drift: &Array2<f64>, pair: &TrainingPair) -> Result<f64> {
    let diff = masked_diff(drift, pair)?;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// `∂ flow_loss / ∂ drift` over all rows (zero outside the mask).
pub(crate) fn flow_loss_grad(drift: &Array2<f64>, pair: &TrainingPair) -> Result<Array2<f64>> {
    let diff = masked_diff(drift, pair)?;
    let mut g = Array2::zeros(drift.dim());
    let scale = 2.0 / diff.len() as f64;
    g.slice_mut(s![pair.loss_rows.clone(), ..]).assign(&(diff * scale));
    Ok(g)
}

fn masked_diff(drift: &Array2<f64>, pair: &TrainingPair) -> Result<Array2<f64>> {
    if pair.loss_rows.is_empty() {
        return Err(Error::InvalidArgument("empty loss mask".into()));
    }
    if drift.ncols() != 3 || drift.nrows() < pair.loss_rows.end || pair.target_drift.nrows() != pair.loss_rows.len() {
        return Err(Error::ShapeMismatch(format!(
            "drift {:?} does not cover loss rows {:?}",
            drift.dim(),
            pair.loss_rows
        )));
    }
    Ok(&drift.slice(s![pair.loss_rows.clone(), ..]) - &pair.target_drift)
}

/// Anything that yields a drift for a full state at time `t`.
pub trait VelocityField {
    fn drift(&self, positions: &ArrayView2<'_, f64>, time: f64) -> Result<Array2<f64>>;
}

/// A velocity model bound to one conditioning bundle.
pub struct ConditionedField<'a> {
    pub model: &'a VelocityModel,
    pub cond: &'a ConditionBundle,
}

impl VelocityField for ConditionedField<'_> {
    fn drift(&self, positions: &ArrayView2<'_, f64>, time: f64) -> Result<Array2<f64>> {
        self.model.velocity_at(positions, time, self.cond)
    }
}

/// Forward Euler integration from `x0` over `[0, 1]` with `steps` uniform
/// steps. With `clamp = Some(rows)` the leading rows are reset to `rows`
/// after every step.
pub fn euler_sample(
    field: &dyn VelocityField,
    x0: &Array2<f64>,
    steps: usize,
    clamp: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    euler_sample_observed(field, x0, steps, clamp, |_, _, _| {})
}

/// As [`euler_sample`], calling `observe(step, positions_after, drift)` after
/// every step.
pub fn euler_sample_observed<F>(
    field: &dyn VelocityField,
    x0: &Array2<f64>,
    steps: usize,
    clamp: Option<&Array2<f64>>,
    mut observe: F,
) -> Result<Array2<f64>>
where
    F: FnMut(usize, &Array2<f64>, &Array2<f64>),
{
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one integration step is required".into()));
    }
    if x0.ncols() != 3 {
        return Err(Error::ShapeMismatch(format!("state needs 3 columns, got {}", x0.ncols())));
    }
    if let Some(c) = clamp {
        if c.ncols() != 3 || c.nrows() > x0.nrows() {
            return Err(Error::ShapeMismatch("clamped rows do not fit the state".into()));
        }
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0.clone();
    for step in 0..steps {
        let t = step as f64 * dt;
        let v = field.drift(&x.view(), t)?;
        if v.dim() != x.dim() {
            return Err(Error::ShapeMismatch(format!("drift {:?} vs state {:?}", v.dim(), x.dim())));
        }
        x.scaled_add(dt, &v);
        if let Some(c) = clamp {
            x.slice_mut(s![..c.nrows(), ..]).assign(c);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        observe(step, &x, &v);
    }
    Ok(x)
}
