//! Generate-then-register keyframe pick-and-place.
//!
//! A conditional rectified-flow model imagines the point cloud of two objects
//! in their goal configuration; corresponded rigid fitting then turns the
//! imagined cloud into SE(3) pick, pre-place and place actions.

pub mod config;
pub mod error;
pub mod evalharness;
pub mod flowgen;
pub mod netcore;
pub mod pointcloud;
pub mod policy;
pub mod registration;
pub mod synthtasks;

pub use error::{Error, Result};
