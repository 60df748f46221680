//! File formats: point clouds, pose files, pipeline configuration, pairs
//! manifests, and external descriptor records.

pub mod clouds;
pub mod config;
pub mod descriptors;
pub mod manifest;
pub mod poses;

pub use clouds::{detect_cloud_format, load_cloud, save_cloud, CloudFormat};
pub use config::{load_config, save_config};
pub use manifest::{load_manifest, ManifestEntry};
pub use poses::{load_poses, save_poses, PoseFormat};
