//! Error metrics, the rotated-input evaluation protocol, equivariance
//! certificates, grasp-mode separation and report files.

mod report;

pub use report::{emit_report, read_report_csv, ReportFormat, ReportRow};

use nalgebra::Matrix3;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::flowgen::VelocityModel;
use crate::pointcloud::{apply_transform, rotation_angle, random_rotation_with, seeded_rng, PointCloud, RigidTransform, Vec3};
use crate::policy::{
    derive_seed, f_pick, f_place, preprocess, DemonstrationRecord, FlowGenerator, Generator, Phase, Preprocessing,
};

/// Rotation tolerance of the synthetic success proxy, degrees.
pub const SUCCESS_ROTATION_DEG: f64 = 5.0;
/// Translation tolerance of the synthetic success proxy, centimeters.
pub const SUCCESS_TRANSLATION_CM: f64 = 1.0;

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    rotation_angle(&(r_gt.transpose() * r_est)).to_degrees()
}

pub fn translation_error_cm(t_est: &Vec3, t_gt: &Vec3) -> f64 {
    (t_est - t_gt).norm() * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunError {
    pub rotation_deg: f64,
    pub translation_cm: f64,
}

/// Errors of one estimated action. Pick actions are gripper poses and are
/// compared directly. Place actions are motions of object b, so their
/// translation is compared where they move `pivot` (the centroid of b);
/// comparing raw translation parts would mix in the rotation error times
/// the distance of b from the world origin.
pub fn action_error(phase: Phase, est: &RigidTransform, gt: &RigidTransform, pivot: &Vec3) -> RunError {
    let rotation_deg = rotation_error_deg(est.rotation(), gt.rotation());
    let translation_cm = match phase {
        Phase::Pick => translation_error_cm(est.translation(), gt.translation()),
        Phase::Preplace | Phase::Place => translation_error_cm(&est.apply_point(pivot), &gt.apply_point(pivot)),
    };
    RunError {
        rotation_deg,
        translation_cm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Standard error of the mean (0 for a single sample).
    pub std_err: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot summarize zero samples".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std_err = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        // Rounding can put the mean a hair outside the range.
        Ok(Self {
            min,
            mean: mean.clamp(min, max),
            max,
            std_err,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub label: String,
    pub rotation: Summary,
    pub translation: Summary,
    pub samples: Vec<RunError>,
}

impl ErrorStats {
    pub fn from_samples(label: impl Into<String>, samples: Vec<RunError>) -> Result<Self> {
        let rot: Vec<f64> = samples.iter().map(|s| s.rotation_deg).collect();
        let tr: Vec<f64> = samples.iter().map(|s| s.translation_cm).collect();
        Ok(Self {
            label: label.into(),
            rotation: Summary::of(&rot)?,
            translation: Summary::of(&tr)?,
            samples,
        })
    }

    pub fn runs(&self) -> usize {
        self.samples.len()
    }

    /// Fraction of runs within the success proxy tolerances.
    pub fn success_rate(&self) -> f64 {
        let ok = self
            .samples
            .iter()
            .filter(|s| s.rotation_deg <= SUCCESS_ROTATION_DEG && s.translation_cm <= SUCCESS_TRANSLATION_CM)
            .count();
        ok as f64 / self.samples.len() as f64
    }
}

/// The record as observed after rotating object a by `g_a` and object b by
/// `g_b` (world transforms). Transforms are conjugated so the goal
/// configuration is unchanged.
pub fn rotated_record(record: &DemonstrationRecord, g_a: &RigidTransform, g_b: &RigidTransform) -> Result<DemonstrationRecord> {
    Ok(DemonstrationRecord {
        cloud_a: apply_transform(g_a, &record.cloud_a)?,
        cloud_b: apply_transform(g_b, &record.cloud_b)?,
        transform_a: record.transform_a.compose(&g_a.inverse()),
        transform_b: record.transform_b.compose(&g_b.inverse()),
        ..record.clone()
    })
}

/// Builds the generator for one (rotated) evaluation record. Learned
/// policies ignore the record; plumbing oracles read its ground truth.
pub type GeneratorFactory<'a> = dyn Fn(&DemonstrationRecord) -> Result<Box<dyn Generator + 'a>> + 'a;

#[derive(Debug, Clone, Copy)]
pub struct ProtocolSettings {
    /// Runs per evaluation record.
    pub runs: usize,
    pub seed: u64,
    pub pre: Preprocessing,
}

/// Rotated-input protocol: every run rotates object b (and object a for
/// place records) by fresh uniform rotations about their centroids, uses a
/// fresh resampling and noise seed, and compares the estimated action with
/// the correspondingly transformed ground truth.
pub fn table2_protocol(
    label: &str,
    eval_set: &[&DemonstrationRecord],
    make_generator: &GeneratorFactory<'_>,
    gripper: Option<&PointCloud>,
    settings: ProtocolSettings,
) -> Result<ErrorStats> {
    if eval_set.is_empty() || settings.runs == 0 {
        return Err(Error::InvalidArgument("protocol needs at least one record and one run".into()));
    }
    let mut samples = Vec::with_capacity(eval_set.len() * settings.runs);
    for (i, record) in eval_set.iter().enumerate() {
        for run in 0..settings.runs {
            let mut rng = seeded_rng(derive_seed(settings.seed, (i * settings.runs + run) as u64));
            let cb = record.cloud_b.centroid()?;
            let g_b = RigidTransform::rotation_about(&random_rotation_with(&mut rng), &cb);
            let g_a = match record.phase {
                Phase::Pick => RigidTransform::identity(),
                _ => RigidTransform::rotation_about(&random_rotation_with(&mut rng), &record.cloud_a.centroid()?),
            };
            let observed = rotated_record(record, &g_a, &g_b)?;
            let generator = make_generator(&observed)?;
            let run_seed = rng.next_u64();
            let result = match record.phase {
                Phase::Pick => {
                    let gripper = gripper.ok_or_else(|| Error::InvalidArgument("pick evaluation needs the gripper".into()))?;
                    f_pick(generator.as_ref(), gripper, &observed.cloud_b, observed.instruction_id, run_seed, settings.pre)?
                }
                _ => f_place(
                    generator.as_ref(),
                    &observed.cloud_a,
                    &observed.cloud_b,
                    observed.instruction_id,
                    run_seed,
                    settings.pre,
                )?,
            };
            samples.push(action_error(record.phase, &result.action_world, &observed.ground_truth_action(), &cb));
        }
    }
    ErrorStats::from_samples(label, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateMode {
    /// Encoders see fixed canonical clouds, so generation is exactly
    /// invariant and the check exercises only the pipeline algebra.
    ForcedInvariant,
    /// Encoders see the rotated clouds; measures learned invariance.
    Learned,
}

impl CertificateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forced" | "forced-invariant" => Ok(Self::ForcedInvariant),
            "learned" => Ok(Self::Learned),
            other => Err(Error::InvalidArgument(format!("unknown certificate mode `{other}` (forced or learned)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ForcedInvariant => "forced",
            Self::Learned => "learned",
        }
    }
}

/// Deviation from exact equivariance over sampled group elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub mode: CertificateMode,
    pub samples: usize,
    pub max_rotation_deg: f64,
    pub mean_rotation_deg: f64,
    /// Meters, measured at the centroid of b for place actions.
    pub max_translation_m: f64,
    pub mean_translation_m: f64,
}

impl Certificate {
    /// Tolerances for forced-invariant mode.
    pub const ROTATION_TOL_DEG: f64 = 1e-5;
    pub const TRANSLATION_TOL_M: f64 = 1e-7;

    pub fn passes(&self) -> bool {
        self.max_rotation_deg <= Self::ROTATION_TOL_DEG && self.max_translation_m <= Self::TRANSLATION_TOL_M
    }
}

/// What the certificate needs besides the scene.
#[derive(Debug, Clone, Copy)]
pub struct CertificateSettings<'a> {
    pub steps: usize,
    pub points: usize,
    /// Voxel edge used once to build the base scene.
    pub cell: f64,
    /// Canonical gripper, required for pick models.
    pub gripper: Option<&'a PointCloud>,
}

/// Runs the policy on `g·scene` for `n` sampled group elements and measures
/// how far the action is from the equivariant prediction: `g_a·a·g_b⁻¹` for
/// place models and `g_b·a` for pick models.
///
/// The scene is preprocessed once and every run then uses identity
/// preprocessing (no voxel grid, all points kept), so rotated runs see
/// exactly the rotated points. With a world-aligned voxel grid the kept
/// subset itself would change under rotation.
pub fn equivariance_certificate(
    model: &VelocityModel,
    scene: &DemonstrationRecord,
    n: usize,
    mode: CertificateMode,
    settings: CertificateSettings<'_>,
    seed: u64,
) -> Result<Certificate> {
    if n == 0 {
        return Err(Error::InvalidArgument("certificate needs at least one group sample".into()));
    }
    let is_pick = model.variant() == crate::flowgen::Variant::Single;
    let gripper = match (is_pick, settings.gripper) {
        (true, None) => return Err(Error::InvalidArgument("pick certificate needs the gripper".into())),
        (_, g) => g,
    };
    let (pb, cb) = preprocess(&scene.cloud_b, settings.points, settings.cell, derive_seed(seed, 1))?;
    let world_b = pb.translated(&cb);
    let (pa, ca) = if is_pick {
        (gripper.expect("checked").clone(), Vec3::zeros())
    } else {
        preprocess(&scene.cloud_a, settings.points, settings.cell, derive_seed(seed, 2))?
    };
    let world_a = pa.translated(&ca);
    let pre = Preprocessing {
        points: settings.points,
        cell: 0.0,
    };

    let generator = match mode {
        CertificateMode::Learned => FlowGenerator::new(model, settings.steps),
        CertificateMode::ForcedInvariant => {
            let ref_b = crate::pointcloud::center(&world_b)?.0;
            let ref_a = if is_pick { pa.clone() } else { crate::pointcloud::center(&world_a)?.0 };
            FlowGenerator::forced(model, settings.steps, ref_a, ref_b)
        }
    };
    let run_seed = derive_seed(seed, 3);
    let act = |a: &PointCloud, b: &PointCloud| -> Result<RigidTransform> {
        Ok(if is_pick {
            f_pick(&generator, gripper.expect("checked"), b, scene.instruction_id, run_seed, pre)?.action_world
        } else {
            f_place(&generator, a, b, scene.instruction_id, run_seed, pre)?.action_world
        })
    };
    let base = act(&world_a, &world_b)?;
    let pivot_b = world_b.centroid()?;
    let pivot_a = world_a.centroid()?;
    let mut rng = seeded_rng(derive_seed(seed, 4));
    let (mut rot, mut tr) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let g_b = RigidTransform::rotation_about(&random_rotation_with(&mut rng), &pivot_b);
        let (moved, expected, phase) = if is_pick {
            let moved = act(&world_a, &apply_transform(&g_b, &world_b)?)?;
            (moved, g_b.compose(&base), Phase::Pick)
        } else {
            let g_a = RigidTransform::rotation_about(&random_rotation_with(&mut rng), &pivot_a);
            let moved = act(&apply_transform(&g_a, &world_a)?, &apply_transform(&g_b, &world_b)?)?;
            (moved, g_a.compose(&base).compose(&g_b.inverse()), Phase::Place)
        };
        let e = action_error(phase, &moved, &expected, &pivot_b);
        rot.push(e.rotation_deg);
        tr.push(e.translation_cm / 100.0);
    }
    let (r, t) = (Summary::of(&rot)?, Summary::of(&tr)?);
    Ok(Certificate {
        mode,
        samples: n,
        max_rotation_deg: r.max,
        mean_rotation_deg: r.mean,
        max_translation_m: t.max,
        mean_translation_m: t.mean,
    })
}

/// Distances between the grasp positions produced for two instructions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSeparation {
    /// One distance (meters) per sample.
    pub distances: Vec<f64>,
    /// Radius of the grasped object (largest distance from its centroid).
    pub object_radius: f64,
}

impl ModeSeparation {
    /// Fraction of samples whose grasps are more than `factor × radius` apart.
    pub fn fraction_separated(&self, factor: f64) -> f64 {
        let threshold = factor * self.object_radius;
        self.distances.iter().filter(|&&d| d >= threshold).count() as f64 / self.distances.len() as f64
    }
}

/// For each sample seed, generates one grasp per instruction on the same
/// object observation and records how far apart the grasp positions are.
pub fn mode_separation(
    generator: &dyn Generator,
    gripper: &PointCloud,
    object: &PointCloud,
    instructions: [usize; 2],
    samples: usize,
    seed: u64,
    pre: Preprocessing,
) -> Result<ModeSeparation> {
    if samples == 0 {
        return Err(Error::InvalidArgument("mode separation needs at least one sample".into()));
    }
    let distances = (0..samples as u64)
        .map(|k| {
            let s = derive_seed(seed, k);
            let first = f_pick(generator, gripper, object, instructions[0], derive_seed(s, 1), pre)?;
            let second = f_pick(generator, gripper, object, instructions[1], derive_seed(s, 2), pre)?;
            Ok((first.action_world.translation() - second.action_world.translation()).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSeparation {
        distances,
        object_radius: object.radius()?,
    })
}
