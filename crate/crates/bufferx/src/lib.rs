//! Zero-shot point cloud registration.
//!
//! Estimates the relative SE(3) pose between two partially overlapping point
//! clouds with no per-dataset parameter tuning: voxel size and search radii
//! are bootstrapped from the input pair, multi-scale patches around FPS
//! keypoints are described with a handcrafted SO(2)-equivariant cylindrical
//! descriptor, and pose candidates from mutual matches are filtered by
//! cross-scale consensus maximization before a final RANSAC solve.

pub mod bench;
pub mod bootstrap;
pub mod cloud;
pub mod consensus;
pub mod error;
pub mod io;
pub mod matching;
pub mod patch;
pub mod pipeline;
mod seed;
pub mod solver;
pub mod spatial;

pub use cloud::{farthest_point_sampling, pca, voxel_downsample, PcaFrame, PointCloud};
pub use error::{Error, Result};
pub use pipeline::{register, PipelineConfig, RegistrationReport, Status};
pub use solver::Pose;
pub use spatial::SpatialIndex;
