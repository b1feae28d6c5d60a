//! On-disk scene directories.
//!
//! A scene directory holds `scene.json` and `frames/NNNNNN/*.hmp`. The JSON
//! document carries everything except the heatmaps:
//!
//! ```text
//! {
//!   "theta_gt":   {"c": [x, y], "h", "omega", "r", "phi", "b"},
//!   "theta_init": same layout, the noisy starting parameters,
//!   "intrinsics": {"fx", "fy", "cx", "cy"},
//!   "width", "height", "frame_count",
//!   "trajectory_gt", "trajectory_noisy": [{"q": [w, x, y, z], "t": [x, y, z]}, ...],
//!   "measurements": [{"t": [x, y, z], "q": [w, x, y, z]}, ...],
//!   "noise": {"pos_step_sigma", "rot_step_sigma", "theta_sigmas": [7], "seed"},
//!   "render": {"point_sigma", "line_sigma", "dropout_prob", "blur_sigma",
//!              "clutter_count", "noise_seed"},
//!   "seed"
//! }
//! ```
//!
//! Poses are world-to-camera. `trajectory_gt` may be empty for scenes whose
//! heatmaps come from elsewhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, PoseGraph, RelativePose};
use crate::heatmap::{ProjectionImageSet, RenderConfig};
use crate::hmp::{read_frame, write_atomic, write_frame};
use crate::simeval::{noisy_start, NoiseSpec, NoisyStart, Scene};
use crate::turbine::TurbineParams;

pub const SCENE_FILE: &str = "scene.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub theta_gt: TurbineParams,
    pub theta_init: TurbineParams,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    #[serde(default)]
    pub trajectory_gt: Vec<Pose>,
    pub trajectory_noisy: Vec<Pose>,
    pub measurements: Vec<RelativePose>,
    pub noise: NoiseSpec,
    pub render: RenderConfig,
    pub seed: u64,
}

impl SceneFile {
    pub fn new(scene: &Scene, start: &NoisyStart, noise: &NoiseSpec) -> Self {
        SceneFile {
            theta_gt: scene.theta_gt,
            theta_init: start.theta,
            intrinsics: scene.k,
            width: scene.dims.0,
            height: scene.dims.1,
            frame_count: scene.trajectory_gt.len(),
            trajectory_gt: scene.trajectory_gt.clone(),
            trajectory_noisy: start.graph.vertices.clone(),
            measurements: start.graph.measurements.clone(),
            noise: *noise,
            render: scene.render_cfg,
            seed: scene.seed,
        }
    }

    /// Initial pose graph: noisy poses and measured relative poses.
    pub fn initial_graph(&self) -> Result<PoseGraph> {
        PoseGraph::new(self.trajectory_noisy.clone(), self.measurements.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.trajectory_noisy.len() != self.frame_count {
            return Err(Error::invalid(format!(
                "frame_count {} but {} noisy poses",
                self.frame_count,
                self.trajectory_noisy.len()
            )));
        }
        if !self.trajectory_gt.is_empty() && self.trajectory_gt.len() != self.frame_count {
            return Err(Error::invalid(format!(
                "frame_count {} but {} ground-truth poses",
                self.frame_count,
                self.trajectory_gt.len()
            )));
        }
        self.initial_graph()?;
        Ok(())
    }
}

/// Generates the noisy start and heatmaps of a scene.
pub fn simulate(scene: &Scene, noise: &NoiseSpec) -> Result<(SceneFile, Vec<ProjectionImageSet>)> {
    let start = noisy_start(scene, noise)?;
    let heatmaps = scene.render()?;
    Ok((SceneFile::new(scene, &start, noise), heatmaps))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: PathBuf::new(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_scene(dir: &Path, scene: &SceneFile, heatmaps: &[ProjectionImageSet]) -> Result<()> {
    scene.validate()?;
    if heatmaps.len() != scene.frame_count {
        return Err(Error::invalid(format!(
            "{} heatmap sets for {} frames",
            heatmaps.len(),
            scene.frame_count
        )));
    }
    let frames = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for set in heatmaps {
        write_frame(&frames, set)?;
    }
    write_json(&dir.join(SCENE_FILE), scene)
}

pub fn load_scene(dir: &Path) -> Result<(SceneFile, Vec<ProjectionImageSet>)> {
    let scene: SceneFile = read_json(&dir.join(SCENE_FILE))?;
    scene.validate()?;
    let frames = dir.join(FRAMES_DIR);
    let heatmaps = (0..scene.frame_count)
        .map(|i| read_frame(&frames, i))
        .collect::<Result<Vec<_>>>()?;
    for set in &heatmaps {
        if set.dims() != (scene.width, scene.height) {
            return Err(Error::invalid(format!(
                "frame {} is {:?}, scene expects {}x{}",
                set.frame_index,
                set.dims(),
                scene.width,
                scene.height
            )));
        }
    }
    Ok((scene, heatmaps))
}

/// Final estimate written by the optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedFile {
    pub theta: TurbineParams,
    pub poses: Vec<Pose>,
}
