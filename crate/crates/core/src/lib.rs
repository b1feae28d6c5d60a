//! Joint pose-graph and skeletal wind-turbine model fitting.
//!
//! The crate fits a seven-parameter turbine skeleton and a sequence of
//! world-to-camera key-frame poses to per-frame projection heatmaps by
//! Levenberg-Marquardt, with relative-pose measurements tying consecutive
//! frames together. A synthetic renderer and an evaluation harness generate
//! inspection scenes with drift and parameter noise.

pub mod correspondence;
pub mod error;
pub mod geometry;
pub mod heatmap;
pub mod hmp;
pub mod optimizer;
pub mod scene_io;
pub mod simeval;
pub mod turbine;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pose, PoseGraph, RelativePose};
pub use heatmap::{Channel, ImageGrid, ProjectionImageSet, RenderConfig};
pub use turbine::{ModelPointId, TurbineParams};
