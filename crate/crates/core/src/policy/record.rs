use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Pick,
    Preplace,
    Place,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pick => "pick",
            Phase::Preplace => "preplace",
            Phase::Place => "place",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pick" => Ok(Phase::Pick),
            "preplace" => Ok(Phase::Preplace),
            "place" => Ok(Phase::Place),
            other => Err(Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

/// One training tuple: raw world clouds and the transforms that carry them
/// into the goal configuration, `P_ab = T_a·P_a ∪ T_b·P_b`.
///
/// For the pick phase `cloud_a` is the canonical gripper and `transform_a`
/// is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationRecord {
    /// Index of the demonstration episode the record belongs to.
    pub episode: usize,
    pub phase: Phase,
    pub instruction_id: usize,
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub transform_a: RigidTransform,
    pub transform_b: RigidTransform,
}

impl DemonstrationRecord {
    /// Ground-truth world action: the gripper pose for picks, the relative
    /// motion `T_a⁻¹·T_b` of object `b` for pre-place and place.
    pub fn ground_truth_action(&self) -> RigidTransform {
        match self.phase {
            Phase::Pick => self.transform_b.inverse(),
            Phase::Preplace | Phase::Place => self.transform_a.inverse().compose(&self.transform_b),
        }
    }
}
