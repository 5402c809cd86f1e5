//! Procedural desk-scale pick-and-place tasks with exact ground truth.
//!
//! Each task pairs a placement object `a` with a manipulated object `b`,
//! poses both uniformly at random in a 0.5 m workspace, and emits pick,
//! pre-place and place demonstration records.

mod dataset;
mod shapes;
mod vocab;

pub use dataset::{read_dataset, write_dataset, Dataset, DATASET_FORMAT, DATASET_VERSION};
pub use shapes::{canonical_gripper, make_object, ObjectShape, MAX_OBJECT_POINTS, MIN_OBJECT_POINTS};
pub use vocab::Vocabulary;

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::{apply_transform, random_rotation_with, seeded_rng, PointCloud, RigidTransform, Vec3};
use crate::policy::{DemonstrationRecord, Phase};

/// Side of the cubic workspace objects are placed in, meters.
pub const WORKSPACE: f64 = 0.5;
/// Retreat distance between the pre-place and place poses, meters.
pub const PREPLACE_RETREAT: f64 = 0.05;
/// Relative jitter applied to every object dimension per seed.
pub const SHAPE_JITTER: f64 = 0.03;
pub const DEFAULT_OBJECT_POINTS: usize = 2000;
pub const DEFAULT_GRIPPER_POINTS: usize = 1000;
/// Seed of the one canonical gripper cloud shared by every task.
pub const GRIPPER_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    PegInSlot,
    HangOnHook,
    StackOnSlab,
    PourAnalog,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::PegInSlot, TaskId::HangOnHook, TaskId::StackOnSlab, TaskId::PourAnalog];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::PegInSlot => "peg-in-slot",
            TaskId::HangOnHook => "hang-on-hook",
            TaskId::StackOnSlab => "stack-on-slab",
            TaskId::PourAnalog => "pour-analog",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "peg-in-slot" => Ok(TaskId::PegInSlot),
            "hang-on-hook" => Ok(TaskId::HangOnHook),
            "stack-on-slab" => Ok(TaskId::StackOnSlab),
            "pour-analog" | "place-over" => Ok(TaskId::PourAnalog),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

/// A grasp of object `b`: the gripper tool frame in `b`'s model frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspLabel {
    pub frame: RigidTransform,
    pub instruction_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: TaskId,
    pub seed: u64,
    pub object_a: ObjectShape,
    pub object_b: ObjectShape,
    pub grasps: Vec<GraspLabel>,
    /// Goal pose of `b`'s model frame in `a`'s model frame.
    pub place_frame: RigidTransform,
    /// Pure retreat composed onto the place frame to get the pre-place frame.
    pub preplace_offset: RigidTransform,
    pub preplace_instruction: usize,
    pub place_instruction: usize,
    /// World poses of the two model frames.
    pub pose_a: RigidTransform,
    pub pose_b: RigidTransform,
}

impl TaskSpec {
    pub fn preplace_frame(&self) -> RigidTransform {
        self.preplace_offset.compose(&self.place_frame)
    }
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(tag);
    rng
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let rotation = random_rotation_with(rng);
    let half = WORKSPACE / 2.0;
    let t = Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half));
    RigidTransform::from_translation(t).compose(&rotation)
}

/// Rotation whose columns are the given model-frame axes.
fn frame(x: Vec3, y: Vec3, z: Vec3, origin: Vec3) -> RigidTransform {
    RigidTransform::new(nalgebra::Matrix3::from_columns(&[x, y, z]), origin).expect("axes form a right-handed frame")
}

/// Side grasp approaching along −x of the object, fingers closing along y.
fn side_grasp_from_plus_x(origin: Vec3) -> RigidTransform {
    frame(Vec3::z(), Vec3::y(), -Vec3::x(), origin)
}

/// Side grasp approaching along +x of the object, fingers closing along y.
fn side_grasp_from_minus_x(origin: Vec3) -> RigidTransform {
    frame(-Vec3::z(), Vec3::y(), Vec3::x(), origin)
}

fn phrase(vocab: &Vocabulary, text: &str) -> usize {
    vocab.id(text).expect("task phrases are part of the standard vocabulary")
}

/// Task geometry, grasps and goal frames for one seed, without clouds.
pub fn task_spec(task: TaskId, seed: u64) -> TaskSpec {
    let vocab = Vocabulary::standard();
    let mut rng = stream(seed, 1);
    let mut jitter = || 1.0 + rng.random_range(-SHAPE_JITTER..SHAPE_JITTER);
    let (ja, jb) = (jitter(), jitter());
    let up = |d: f64| RigidTransform::from_translation(Vec3::z() * d);
    let (object_a, object_b, grasps, place_frame, preplace_offset, phrases) = match task {
        TaskId::PegInSlot => {
            let (radius, length) = (0.01 * jb, 0.09 * jb);
            let thickness = 0.03 * ja;
            let slot = 2.0 * radius + 0.004;
            let a = ObjectShape::SlotSlab { size: [0.12 * ja, 0.08 * ja, thickness], slot: [slot, slot] };
            let b = ObjectShape::Peg { radius, length };
            // peg bottom flush with the slab bottom, axis along the slot
            let place = up(-thickness / 2.0 + length / 2.0);
            let grasp = GraspLabel {
                frame: side_grasp_from_plus_x(Vec3::new(0.0, 0.0, length / 4.0)),
                instruction_id: phrase(&vocab, "pick up the knife"),
            };
            (a, b, vec![grasp], place, up(PREPLACE_RETREAT), ["preplace the knife above the knife block", "place the knife inside the knife block"])
        }
        TaskId::HangOnHook => {
            let (post, height, arm) = (0.02 * ja, 0.16 * ja, 0.08 * ja);
            let (radius, cup_h) = (0.035 * jb, 0.08 * jb);
            let a = ObjectShape::LShape { post, height, arm };
            let b = ObjectShape::Cup { radius, height: cup_h, handle: true };
            let (major, minor) = shapes::cup_handle(radius, cup_h);
            // the handle hole (axis y in the cup frame) threads onto the arm (axis x)
            let turn = RigidTransform::from_axis_angle(Vec3::z(), -FRAC_PI_2);
            let hole = Vec3::new(radius + major / 2.0, 0.0, cup_h / 2.0);
            let hook = Vec3::new(post / 2.0 + 0.6 * arm, 0.0, height - post / 2.0);
            let place = RigidTransform::from_translation(hook - turn.apply_point(&hole)).compose(&turn);
            let handle = GraspLabel {
                frame: side_grasp_from_plus_x(Vec3::new(radius + major + minor, 0.0, cup_h / 2.0)),
                instruction_id: phrase(&vocab, "grasp the mug by the handle"),
            };
            let body = GraspLabel {
                frame: side_grasp_from_minus_x(Vec3::new(-radius, 0.0, 0.6 * cup_h)),
                instruction_id: phrase(&vocab, "grasp the mug by its body"),
            };
            let retreat = RigidTransform::from_translation(Vec3::x() * PREPLACE_RETREAT);
            (a, b, vec![handle, body], place, retreat, ["preplace the green mug near the tree", "place the green mug on the tree"])
        }
        TaskId::StackOnSlab => {
            let slab = [0.14 * ja, 0.10 * ja, 0.02 * ja];
            let (radius, length) = (0.012 * jb, 0.10 * jb);
            let a = ObjectShape::Box { size: slab };
            let b = ObjectShape::Peg { radius, length };
            // lying along x on top of the slab
            let place = up(slab[2] / 2.0 + radius).compose(&RigidTransform::from_axis_angle(Vec3::y(), FRAC_PI_2));
            let grasp = GraspLabel {
                frame: side_grasp_from_plus_x(Vec3::new(0.0, 0.0, 0.35 * length)),
                instruction_id: phrase(&vocab, "pick up the wine by the neck"),
            };
            (a, b, vec![grasp], place, up(PREPLACE_RETREAT), ["preplace the wine above the rack", "place the wine on the rack"])
        }
        TaskId::PourAnalog => {
            let (big_r, big_h) = (0.045 * ja, 0.10 * ja);
            let (radius, cup_h) = (0.025 * jb, 0.06 * jb);
            let a = ObjectShape::Cup { radius: big_r, height: big_h, handle: false };
            let b = ObjectShape::Cup { radius, height: cup_h, handle: true };
            let (major, minor) = shapes::cup_handle(radius, cup_h);
            // tilted over the rim of the big cup
            let tilt = RigidTransform::from_axis_angle(Vec3::y(), 110f64.to_radians());
            let place = RigidTransform::from_translation(Vec3::new(-0.02 * ja, 0.0, big_h + 0.06)).compose(&tilt);
            let grasp = GraspLabel {
                frame: side_grasp_from_plus_x(Vec3::new(radius + major + minor, 0.0, cup_h / 2.0)),
                instruction_id: phrase(&vocab, "pick up the small blue cup"),
            };
            (a, b, vec![grasp], place, up(PREPLACE_RETREAT), [
                "preplace the small blue cup near the green contrainer",
                "pour the ball into the green container",
            ])
        }
    };
    let mut pose_rng = stream(seed, 2);
    let pose_a = random_pose(&mut pose_rng);
    let pose_b = random_pose(&mut pose_rng);
    TaskSpec {
        task,
        seed,
        object_a,
        object_b,
        grasps,
        place_frame,
        preplace_offset,
        preplace_instruction: phrase(&vocab, phrases[0]),
        place_instruction: phrase(&vocab, phrases[1]),
        pose_a,
        pose_b,
    }
}

/// Minimum separation between any two grasps of the same object: more than
/// 30° apart or tool centers more than 0.3 object radii apart.
fn check_grasp_multimodality(spec: &TaskSpec) -> Result<()> {
    let (lo, hi) = spec.object_b.bounds();
    let radius = (hi - lo).norm() / 2.0;
    for (i, g) in spec.grasps.iter().enumerate() {
        for h in &spec.grasps[i + 1..] {
            let rel = g.frame.inverse().compose(&h.frame);
            let apart = (g.frame.translation() - h.frame.translation()).norm();
            if rel.angle().to_degrees() <= 30.0 && apart <= 0.3 * radius {
                return Err(Error::InvalidArgument(format!("grasps of {} are not distinct", spec.task.name())));
            }
        }
    }
    Ok(())
}

/// Builds the task for `seed` and its demonstration records: one pick per
/// labeled grasp, then pre-place and place.
pub fn make_task(task: TaskId, seed: u64) -> Result<(TaskSpec, Vec<DemonstrationRecord>)> {
    make_task_with(task, seed, 0, DEFAULT_OBJECT_POINTS)
}

pub fn make_task_with(task: TaskId, seed: u64, episode: usize, points: usize) -> Result<(TaskSpec, Vec<DemonstrationRecord>)> {
    let spec = task_spec(task, seed);
    check_grasp_multimodality(&spec)?;
    let model_a = make_object(&spec.object_a, points, stream_seed(seed, 3))?;
    let model_b = make_object(&spec.object_b, points, stream_seed(seed, 4))?;
    let gripper = canonical_gripper(DEFAULT_GRIPPER_POINTS, GRIPPER_SEED)?;
    let raw_a = apply_transform(&spec.pose_a, &model_a)?;
    let raw_b = apply_transform(&spec.pose_b, &model_b)?;
    let to_model_a = spec.pose_a.inverse();
    let to_model_b = spec.pose_b.inverse();

    let mut records = Vec::new();
    for g in &spec.grasps {
        records.push(DemonstrationRecord {
            episode,
            phase: Phase::Pick,
            instruction_id: g.instruction_id,
            cloud_a: gripper.clone(),
            cloud_b: raw_b.clone(),
            transform_a: RigidTransform::identity(),
            transform_b: g.frame.inverse().compose(&to_model_b),
        });
    }
    for (phase, goal, instruction) in [
        (Phase::Preplace, spec.preplace_frame(), spec.preplace_instruction),
        (Phase::Place, spec.place_frame, spec.place_instruction),
    ] {
        records.push(DemonstrationRecord {
            episode,
            phase,
            instruction_id: instruction,
            cloud_a: raw_a.clone(),
            cloud_b: raw_b.clone(),
            transform_a: to_model_a,
            transform_b: goal.compose(&to_model_b),
        });
    }
    Ok((spec, records))
}

fn stream_seed(seed: u64, tag: u64) -> u64 {
    stream(seed, tag).random()
}

/// `demos` episodes of one task; episode `k` uses seed `seed + k`.
pub fn synthesize(task: TaskId, demos: usize, seed: u64, points: usize) -> Result<Dataset> {
    if demos == 0 {
        return Err(Error::InvalidArgument("at least one demonstration is required".into()));
    }
    let mut records = Vec::new();
    for k in 0..demos {
        let (_, r) = make_task_with(task, seed.wrapping_add(k as u64), k, points)?;
        records.extend(r);
    }
    Ok(Dataset {
        task: task.name().to_string(),
        seed,
        records,
    })
}

/// The assembled goal cloud `T_a·P_a ∪ T_b·P_b` of a record.
pub fn assembled_cloud(record: &DemonstrationRecord) -> Result<PointCloud> {
    Ok(apply_transform(&record.transform_a, &record.cloud_a)?.concat(&apply_transform(&record.transform_b, &record.cloud_b)?))
}
