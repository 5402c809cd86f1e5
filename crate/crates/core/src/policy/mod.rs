//! End-to-end pick and place actions: preprocess, generate the goal
//! configuration, fit rigid transforms, and map them back to the world.

mod bundle;
mod record;
mod train;

use std::cell::RefCell;

use ndarray::Array2;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub use bundle::{PolicyBundle, BUNDLE_VERSION};
pub use record::{DemonstrationRecord, Phase};
pub use train::{train, LossEntry, TrainOutcome};

use crate::error::{Error, Result};
use crate::flowgen::{cloud_rows, euler_sample, rows_to_points, sample_noise, ConditionedField, Variant, VelocityModel};
use crate::pointcloud::{apply_transform, center, resample, seeded_rng, voxel_downsample, PointCloud, RigidTransform, Vec3};
use crate::registration::{kabsch_fit, place_action, FitReport};
use crate::synthtasks::Vocabulary;

/// Point count and voxel edge used before generation. `cell = 0` skips
/// voxel downsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessing {
    pub points: usize,
    pub cell: f64,
}

impl Preprocessing {
    pub fn from_config(config: &crate::config::RunConfig) -> Self {
        Self {
            points: config.points,
            cell: config.voxel_cell,
        }
    }
}

/// Independent sub-seed for one consumer of a user seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

/// Centers, then voxel-downsamples, then resamples to exactly `n_points`.
/// Returns the cloud and the centering offset. The downsampled cloud is not
/// re-centered, so its centroid may sit up to one cell from the origin.
pub fn preprocess(raw: &PointCloud, n_points: usize, cell: f64, seed: u64) -> Result<(PointCloud, Vec3)> {
    let (voxelized, offset) = center_and_voxelize(raw, cell)?;
    Ok((resample(&voxelized, n_points, seed)?, offset))
}

pub(crate) fn center_and_voxelize(raw: &PointCloud, cell: f64) -> Result<(PointCloud, Vec3)> {
    let (centered, offset) = center(raw)?;
    let voxelized = if cell > 0.0 { voxel_downsample(&centered, cell)? } else { centered };
    Ok((voxelized, offset))
}

/// Canonical gripper as stored in a bundle: voxelized and resampled but
/// never centered, because its frame defines grasp poses.
pub fn prepare_gripper(raw: &PointCloud, n_points: usize, cell: f64, seed: u64) -> Result<PointCloud> {
    let voxelized = if cell > 0.0 { voxel_downsample(raw, cell)? } else { raw.clone() };
    resample(&voxelized, n_points, seed)
}

#[derive(Debug, Clone)]
pub struct ActionResult {
    pub action_world: RigidTransform,
    pub fit_a: FitReport,
    pub fit_b: FitReport,
    pub generated_a: PointCloud,
    pub generated_b: PointCloud,
}

impl ActionResult {
    pub fn is_degenerate(&self) -> bool {
        self.fit_a.is_degenerate() || self.fit_b.is_degenerate()
    }
}

/// What a generator sees: preprocessed clouds in their centered frames plus
/// the offsets that were removed.
#[derive(Debug, Clone, Copy)]
pub struct GenerationInput<'a> {
    pub variant: Variant,
    pub cloud_a: &'a PointCloud,
    pub cloud_b: &'a PointCloud,
    pub offset_a: Vec3,
    pub offset_b: Vec3,
    pub instruction: usize,
    pub noise_seed: u64,
}

/// Produces the imagined goal configuration `(P̂_a, P̂_b)`, row-aligned with
/// the input clouds.
pub trait Generator {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<(PointCloud, PointCloud)>;
}

/// The learned rectified-flow generator.
///
/// With `reference` set, the encoders see the reference clouds instead of
/// the observed ones. Feeding canonical clouds there makes generation
/// exactly invariant to input rotations, which isolates the algebra of the
/// rest of the pipeline. The sampled goal then depends only on the
/// instruction, the noise seed and any clamped rows, so the last result is
/// kept and reused for repeated requests.
pub struct FlowGenerator<'m> {
    pub model: &'m VelocityModel,
    pub steps: usize,
    pub reference: Option<(PointCloud, PointCloud)>,
    last_forced: RefCell<Option<(ForcedKey, Array2<f64>)>>,
}

#[derive(Debug, Clone, PartialEq)]
struct ForcedKey {
    instruction: usize,
    noise_seed: u64,
    clamp: Option<Array2<f64>>,
}

impl<'m> FlowGenerator<'m> {
    pub fn new(model: &'m VelocityModel, steps: usize) -> Self {
        Self {
            model,
            steps,
            reference: None,
            last_forced: RefCell::new(None),
        }
    }

    pub fn forced(model: &'m VelocityModel, steps: usize, reference_a: PointCloud, reference_b: PointCloud) -> Self {
        Self {
            model,
            steps,
            reference: Some((reference_a, reference_b)),
            last_forced: RefCell::new(None),
        }
    }
}

impl Generator for FlowGenerator<'_> {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<(PointCloud, PointCloud)> {
        if input.variant != self.model.variant() {
            return Err(Error::InvalidArgument(format!(
                "{} model cannot serve a {} request",
                self.model.variant().name(),
                input.variant.name()
            )));
        }
        let (na, nb) = (input.cloud_a.len(), input.cloud_b.len());
        let clamp = match input.variant {
            Variant::Single => Some(cloud_rows(input.cloud_a)),
            Variant::Pair => None,
        };
        let key = match &self.reference {
            Some((ra, rb)) => {
                if ra.len() != na || rb.len() != nb {
                    return Err(Error::ShapeMismatch(format!(
                        "reference clouds have {}+{} points, inputs {}+{}",
                        ra.len(),
                        rb.len(),
                        na,
                        nb
                    )));
                }
                Some(ForcedKey {
                    instruction: input.instruction,
                    noise_seed: input.noise_seed,
                    clamp: clamp.clone(),
                })
            }
            None => None,
        };
        let cached = match (&key, &*self.last_forced.borrow()) {
            (Some(k), Some((last, x1))) if k == last => Some(x1.clone()),
            _ => None,
        };
        let x1 = match cached {
            Some(x1) => x1,
            None => {
                let cond = match &self.reference {
                    Some((ra, rb)) => self.model.condition(ra, rb, input.instruction)?,
                    None => self.model.condition(input.cloud_a, input.cloud_b, input.instruction)?,
                };
                let mut rng = seeded_rng(input.noise_seed);
                let mut x0 = sample_noise(na + nb, self.model.settings.sigma, &mut rng)?;
                if let Some(rows) = &clamp {
                    x0.slice_mut(ndarray::s![..na, ..]).assign(rows);
                }
                let field = ConditionedField {
                    model: self.model,
                    cond: &cond,
                };
                let x1 = euler_sample(&field, &x0, self.steps, clamp.as_ref())?;
                if let Some(k) = key {
                    *self.last_forced.borrow_mut() = Some((k, x1.clone()));
                }
                x1
            }
        };
        let a = input.cloud_a.with_points(rows_to_points(&x1.slice(ndarray::s![..na, ..])))?;
        let b = input.cloud_b.with_points(rows_to_points(&x1.slice(ndarray::s![na.., ..])))?;
        Ok((a, b))
    }
}

/// Emits the ground-truth goal configuration `T_a·P_a ∪ T_b·P_b` for one
/// known scene. Used to check every stage other than learning.
#[derive(Debug, Clone)]
pub struct PlumbingOracle {
    pub transform_a: RigidTransform,
    pub transform_b: RigidTransform,
}

impl PlumbingOracle {
    pub fn for_record(record: &DemonstrationRecord) -> Self {
        Self {
            transform_a: record.transform_a,
            transform_b: record.transform_b,
        }
    }
}

impl Generator for PlumbingOracle {
    fn generate(&self, input: &GenerationInput<'_>) -> Result<(PointCloud, PointCloud)> {
        // Inputs are centered, targets are defined on raw world points.
        let ta = self.transform_a.compose(&RigidTransform::from_translation(input.offset_a));
        let tb = self.transform_b.compose(&RigidTransform::from_translation(input.offset_b));
        Ok((apply_transform(&ta, input.cloud_a)?, apply_transform(&tb, input.cloud_b)?))
    }
}

/// Place (or pre-place) action for world clouds `raw_a` (stays put) and
/// `raw_b` (moves). The returned world action maps object-b points to their
/// goal position.
pub fn f_place(
    generator: &dyn Generator,
    raw_a: &PointCloud,
    raw_b: &PointCloud,
    instruction: usize,
    seed: u64,
    pre: Preprocessing,
) -> Result<ActionResult> {
    let (pa, ca) = preprocess(raw_a, pre.points, pre.cell, derive_seed(seed, 1))?;
    let (pb, cb) = preprocess(raw_b, pre.points, pre.cell, derive_seed(seed, 2))?;
    place_from_preprocessed(generator, &pa, ca, &pb, cb, instruction, derive_seed(seed, 3))
}

pub(crate) fn place_from_preprocessed(
    generator: &dyn Generator,
    pa: &PointCloud,
    ca: Vec3,
    pb: &PointCloud,
    cb: Vec3,
    instruction: usize,
    noise_seed: u64,
) -> Result<ActionResult> {
    let (generated_a, generated_b) = generator.generate(&GenerationInput {
        variant: Variant::Pair,
        cloud_a: pa,
        cloud_b: pb,
        offset_a: ca,
        offset_b: cb,
        instruction,
        noise_seed,
    })?;
    let fit_a = kabsch_fit(pa, &generated_a)?;
    let fit_b = kabsch_fit(pb, &generated_b)?;
    let action_world = RigidTransform::from_translation(ca)
        .compose(&place_action(&fit_a, &fit_b))
        .compose(&RigidTransform::from_translation(-cb));
    Ok(ActionResult {
        action_world,
        fit_a,
        fit_b,
        generated_a,
        generated_b,
    })
}

/// World pose of the canonical gripper frame when grasping `raw_b`.
pub fn f_pick(
    generator: &dyn Generator,
    gripper: &PointCloud,
    raw_b: &PointCloud,
    instruction: usize,
    seed: u64,
    pre: Preprocessing,
) -> Result<ActionResult> {
    let (pb, cb) = preprocess(raw_b, pre.points, pre.cell, derive_seed(seed, 2))?;
    pick_from_preprocessed(generator, gripper, &pb, cb, instruction, derive_seed(seed, 3))
}

pub(crate) fn pick_from_preprocessed(
    generator: &dyn Generator,
    gripper: &PointCloud,
    pb: &PointCloud,
    cb: Vec3,
    instruction: usize,
    noise_seed: u64,
) -> Result<ActionResult> {
    let (generated_a, generated_b) = generator.generate(&GenerationInput {
        variant: Variant::Single,
        cloud_a: gripper,
        cloud_b: pb,
        offset_a: Vec3::zeros(),
        offset_b: cb,
        instruction,
        noise_seed,
    })?;
    let fit_a = kabsch_fit(gripper, &generated_a)?;
    let fit_b = kabsch_fit(pb, &generated_b)?;
    let action_world = RigidTransform::from_translation(cb).compose(&fit_b.transform.inverse());
    Ok(ActionResult {
        action_world,
        fit_a,
        fit_b,
        generated_a,
        generated_b,
    })
}

/// Segmented observation for a keyframe rollout.
#[derive(Debug, Clone)]
pub struct Scene {
    /// The object that stays put (the receiver).
    pub object_a: PointCloud,
    /// The object that is grasped and moved.
    pub object_b: PointCloud,
}

/// Generators for the three keyframes. A learned policy passes the same
/// place generator twice.
pub struct KeyframeGenerators<'g> {
    pub pick: &'g dyn Generator,
    pub preplace: &'g dyn Generator,
    pub place: &'g dyn Generator,
}

/// Pick, pre-place, and place actions from one observation. `instructions`
/// holds the vocabulary ids in that order.
pub fn keyframe_rollout(
    generators: &KeyframeGenerators<'_>,
    gripper: &PointCloud,
    scene: &Scene,
    instructions: [usize; 3],
    vocabulary: &Vocabulary,
    seed: u64,
    pre: Preprocessing,
) -> Result<[ActionResult; 3]> {
    for id in instructions {
        vocabulary.phrase(id)?;
    }
    let pick = f_pick(generators.pick, gripper, &scene.object_b, instructions[0], derive_seed(seed, 10), pre)?;
    let preplace = f_place(
        generators.preplace,
        &scene.object_a,
        &scene.object_b,
        instructions[1],
        derive_seed(seed, 11),
        pre,
    )?;
    let place = f_place(
        generators.place,
        &scene.object_a,
        &scene.object_b,
        instructions[2],
        derive_seed(seed, 12),
        pre,
    )?;
    Ok([pick, preplace, place])
}
