//! Feature front-end: frame I/O, patch extraction and the three-level
//! handcrafted hierarchy.

pub mod image;
pub mod patch;
pub mod pyramid;

pub use self::image::ImageFrame;
pub use crate::raft::{load_feature_file, save_feature_file};
pub use patch::{extract_patch, resample_square};
pub use pyramid::{compute_features, FeatureBackend, FeatureConfig, FeaturePyramid, LEVELS};
