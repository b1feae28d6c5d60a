//! Synthetic inspection scenes, noise injection and the evaluation
//! experiments.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::SearchConfig;
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, CameraIntrinsics, Pose, PoseGraph, RelativePose};
use crate::heatmap::{render_synthetic, ProjectionImageSet, RenderConfig};
use crate::optimizer::{
    build_problem, solve, CostConfig, InformationMatrix, ProblemState, SolveReport, SolverConfig,
    UnaryMode,
};
use crate::turbine::{instantiate_points, TurbineParams, PARAM_DIM};

const POSE_NOISE_STREAM: u64 = 1;
const PARAM_NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Full circle at hub height around the tower.
    Orbit,
    /// Vertical lawnmower sweep in front of the rotor plane.
    Facade,
}

impl std::str::FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(Pattern::Orbit),
            "facade" => Ok(Pattern::Facade),
            _ => Err(Error::invalid(format!("unknown pattern '{s}'"))),
        }
    }
}

/// The turbine used by the default scenes.
pub fn default_turbine() -> TurbineParams {
    TurbineParams {
        c: [5.0, -3.0],
        h: 30.0,
        omega: 0.4,
        r: 4.0,
        phi: 0.3,
        b: 15.0,
    }
}

/// Camera poses looking at the hub.
pub fn generate_trajectory(
    theta: &TurbineParams,
    pattern: Pattern,
    frame_count: usize,
    standoff: f64,
) -> Result<Vec<Pose>> {
    theta.validate()?;
    if frame_count < 2 {
        return Err(Error::invalid(format!(
            "a trajectory needs at least 2 frames, got {frame_count}"
        )));
    }
    if !(standoff > theta.b) {
        return Err(Error::invalid(format!(
            "standoff {standoff} m must exceed blade length {} m",
            theta.b
        )));
    }
    let pts = instantiate_points(theta)?;
    let hub = pts.p_r;
    let up = Vector3::z();
    let axis = Vector3::new(theta.omega.cos(), theta.omega.sin(), 0.0);
    let lateral = Vector3::new(-theta.omega.sin(), theta.omega.cos(), 0.0);
    let eyes: Vec<Vector3<f64>> = match pattern {
        Pattern::Orbit => (0..frame_count)
            .map(|i| {
                let a = theta.omega + TAU * i as f64 / frame_count as f64;
                Vector3::new(
                    theta.c[0] + standoff * a.cos(),
                    theta.c[1] + standoff * a.sin(),
                    theta.h,
                )
            })
            .collect(),
        Pattern::Facade => {
            let cols = (frame_count as f64).sqrt().ceil() as usize;
            let rows = frame_count.div_ceil(cols);
            let span = 0.6 * theta.b;
            let offset = |i: usize, n: usize| {
                if n == 1 {
                    0.0
                } else {
                    -span + 2.0 * span * i as f64 / (n - 1) as f64
                }
            };
            (0..frame_count)
                .map(|i| {
                    let row = i / cols;
                    let col = if row % 2 == 0 { i % cols } else { cols - 1 - i % cols };
                    hub + axis * standoff
                        + lateral * offset(col, cols)
                        + up * offset(rows - 1 - row, rows)
                })
                .collect()
        }
    };
    eyes.iter().map(|eye| Pose::look_at(eye, &hub, &up)).collect()
}

/// Ground truth of one simulated inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub theta_gt: TurbineParams,
    pub trajectory_gt: Vec<Pose>,
    pub k: CameraIntrinsics,
    pub dims: (usize, usize),
    pub render_cfg: RenderConfig,
    pub seed: u64,
}

/// Recipe for a [`Scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub theta: TurbineParams,
    pub pattern: Pattern,
    pub frame_count: usize,
    pub standoff: f64,
    pub k: CameraIntrinsics,
    pub dims: (usize, usize),
    /// Pixel sizes refer to a 128-pixel-wide image and are rescaled.
    pub render: RenderConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            theta: default_turbine(),
            pattern: Pattern::Orbit,
            frame_count: 50,
            standoff: 25.0,
            k: CameraIntrinsics {
                fx: 80.0,
                fy: 80.0,
                cx: 64.0,
                cy: 64.0,
            },
            dims: (128, 128),
            render: RenderConfig::default(),
        }
    }
}

impl Scene {
    /// Builds the scene; `seed` drives the heatmap noise.
    pub fn generate(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
        cfg.k.validate()?;
        if cfg.dims.0 == 0 || cfg.dims.1 == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let trajectory_gt = generate_trajectory(&cfg.theta, cfg.pattern, cfg.frame_count, cfg.standoff)?;
        let mut render_cfg = cfg.render.scaled_for_width(cfg.dims.0);
        render_cfg.noise_seed = seed;
        render_cfg.validate()?;
        let scene = Scene {
            theta_gt: cfg.theta,
            trajectory_gt,
            k: cfg.k,
            dims: cfg.dims,
            render_cfg,
            seed,
        };
        scene.check_visibility()?;
        Ok(scene)
    }

    fn check_visibility(&self) -> Result<()> {
        let hub = instantiate_points(&self.theta_gt)?.p_r;
        let (w, h) = (self.dims.0 as f64, self.dims.1 as f64);
        let visible = self
            .trajectory_gt
            .iter()
            .filter(|pose| {
                crate::geometry::project(pose, &self.k, &hub)
                    .map(|px| px.x >= 0.0 && px.y >= 0.0 && px.x <= w - 1.0 && px.y <= h - 1.0)
                    .unwrap_or(false)
            })
            .count();
        if 2 * visible < self.trajectory_gt.len() {
            return Err(Error::invalid(format!(
                "turbine visible in only {visible} of {} frames",
                self.trajectory_gt.len()
            )));
        }
        Ok(())
    }

    /// Heatmaps of every frame, rendered in parallel.
    pub fn render(&self) -> Result<Vec<ProjectionImageSet>> {
        self.trajectory_gt
            .par_iter()
            .enumerate()
            .map(|(i, pose)| render_synthetic(&self.theta_gt, pose, &self.k, self.dims, &self.render_cfg, i))
            .collect()
    }
}

/// Drift and parameter noise. Rotation sigmas are in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pos_step_sigma: f64,
    pub rot_step_sigma: f64,
    /// `(c_x, c_y, h, omega, r, phi, b)`
    pub theta_sigmas: [f64; PARAM_DIM],
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            pos_step_sigma: 0.05,
            rot_step_sigma: 0.2f64.to_radians(),
            theta_sigmas: [1.0, 1.0, 1.0, 0.1, 0.5, 0.15, 1.0],
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            pos_step_sigma: 0.0,
            rot_step_sigma: 0.0,
            theta_sigmas: [0.0; PARAM_DIM],
            seed: 0,
        }
    }

    pub fn without_theta(mut self) -> Self {
        self.theta_sigmas = [0.0; PARAM_DIM];
        self
    }

    pub fn with_theta_scale(mut self, scale: f64) -> Self {
        for s in &mut self.theta_sigmas {
            *s *= scale;
        }
        self
    }

    /// Pairwise information `diag(1/pos^2, 1/rot^2)` matching the drift, if
    /// both step sigmas are positive.
    pub fn information(&self) -> Option<InformationMatrix> {
        if self.pos_step_sigma > 0.0 && self.rot_step_sigma > 0.0 {
            InformationMatrix::diagonal(
                self.pos_step_sigma.powi(-2),
                self.rot_step_sigma.powi(-2),
            )
            .ok()
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.pos_step_sigma >= 0.0
            && self.rot_step_sigma >= 0.0
            && self.theta_sigmas.iter().all(|s| *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("noise sigmas must be non-negative"))
        }
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative and finite")
}

/// Drifted trajectory and the measured relative poses it is consistent with.
///
/// Every measurement is the true relative pose perturbed by one step of
/// noise, and the drifted trajectory chains the measurements from the first
/// true pose.
pub fn add_pose_noise(trajectory: &[Pose], spec: &NoiseSpec) -> Result<(Vec<Pose>, Vec<RelativePose>)> {
    spec.validate()?;
    if trajectory.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let truth: Vec<RelativePose> = trajectory.windows(2).map(|w| relative_pose(&w[0], &w[1])).collect();
    if spec.pos_step_sigma == 0.0 && spec.rot_step_sigma == 0.0 {
        return Ok((trajectory.to_vec(), truth));
    }
    let mut rng = noise_rng(spec.seed, POSE_NOISE_STREAM);
    let pos = normal(spec.pos_step_sigma);
    let rot = normal(spec.rot_step_sigma);
    let measurements: Vec<RelativePose> = truth
        .iter()
        .map(|m| {
            let dt = Vector3::from_fn(|_, _| pos.sample(&mut rng));
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = rot.sample(&mut rng);
            let dq = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
            RelativePose {
                t_ij: m.t_ij + dt,
                q_ij: m.q_ij * dq,
            }
        })
        .collect();
    let noisy = PoseGraph {
        vertices: vec![trajectory[0]; trajectory.len()],
        measurements: measurements.clone(),
    }
    .chained();
    Ok((noisy, measurements))
}

/// Ground-truth parameters with independent Gaussian errors.
pub fn add_param_noise(theta: &TurbineParams, spec: &NoiseSpec) -> Result<TurbineParams> {
    spec.validate()?;
    let mut rng = noise_rng(spec.seed, PARAM_NOISE_STREAM);
    let mut v = theta.to_vector();
    for (i, sigma) in spec.theta_sigmas.iter().enumerate() {
        v[i] += normal(*sigma).sample(&mut rng);
    }
    Ok(TurbineParams::from_vector(&v))
}

/// Trajectory and model errors of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Errors {
    /// Mean camera-centre distance, metres.
    pub pos: f64,
    /// Mean geodesic rotation angle, radians.
    pub orient: f64,
    /// Mean model-point distance under the best blade labelling, metres.
    pub model: f64,
}

pub fn compute_metrics(
    est_poses: &[Pose],
    est_theta: &TurbineParams,
    gt_poses: &[Pose],
    gt_theta: &TurbineParams,
) -> Result<Errors> {
    if est_poses.len() != gt_poses.len() {
        return Err(Error::invalid(format!(
            "{} estimated poses for {} ground-truth poses",
            est_poses.len(),
            gt_poses.len()
        )));
    }
    let n = est_poses.len().max(1) as f64;
    let pos = est_poses
        .iter()
        .zip(gt_poses)
        .map(|(e, g)| (e.centre() - g.centre()).norm())
        .sum::<f64>()
        / n;
    let orient = est_poses
        .iter()
        .zip(gt_poses)
        .map(|(e, g)| geodesic_angle(&e.q, &g.q))
        .sum::<f64>()
        / n;
    Ok(Errors {
        pos,
        orient,
        model: model_point_error(est_theta, gt_theta)?,
    })
}

/// Rotation angle between two orientations, insensitive to the quaternion sign.
pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let (a, b) = (a.coords, b.coords);
    let diff = (a - b).norm();
    let sum = (a + b).norm();
    4.0 * diff.min(sum).atan2(diff.max(sum))
}

/// Mean distance over the six model points, minimised over the cyclic blade
/// relabellings.
pub fn model_point_error(est: &TurbineParams, gt: &TurbineParams) -> Result<f64> {
    let e = instantiate_points(est)?;
    let g = instantiate_points(gt)?;
    let fixed = (e.p_g - g.p_g).norm() + (e.p_t - g.p_t).norm() + (e.p_r - g.p_r).norm();
    let best = (0..3)
        .map(|s| (0..3).map(|i| (e.p_b[i] - g.p_b[(i + s) % 3]).norm()).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok((fixed + best) / 6.0)
}

/// Noisy starting point of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyStart {
    pub graph: PoseGraph,
    pub theta: TurbineParams,
}

pub fn noisy_start(scene: &Scene, spec: &NoiseSpec) -> Result<NoisyStart> {
    let (vertices, measurements) = add_pose_noise(&scene.trajectory_gt, spec)?;
    Ok(NoisyStart {
        graph: PoseGraph::new(vertices, measurements)?,
        theta: add_param_noise(&scene.theta_gt, spec)?,
    })
}

/// Builds and solves one problem.
pub fn fit(
    start: &NoisyStart,
    k: &CameraIntrinsics,
    heatmaps: Arc<[ProjectionImageSet]>,
    cost: &CostConfig,
    search: &SearchConfig,
    solver: &SolverConfig,
) -> Result<(ProblemState, SolveReport)> {
    let mut problem = build_problem(&start.graph, &start.theta, k, heatmaps, cost, search)?;
    let report = solve(&mut problem, solver)?;
    Ok((problem.state().clone(), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// The four point/line unary mode assignments, pose noise only.
    UnaryCompare,
    /// Joint fitting against pose-only fitting with parameter noise.
    CombinedVsPoseOnly,
    /// Parameter noise scale sweep.
    ParamRecovery,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::UnaryCompare => "unary_compare",
            ExperimentKind::CombinedVsPoseOnly => "combined_vs_pose_only",
            ExperimentKind::ParamRecovery => "param_recovery",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unary" | "unary_compare" => Ok(ExperimentKind::UnaryCompare),
            "combined" | "combined_vs_pose_only" => Ok(ExperimentKind::CombinedVsPoseOnly),
            "recovery" | "param_recovery" => Ok(ExperimentKind::ParamRecovery),
            _ => Err(Error::invalid(format!("unknown experiment '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub scene: SceneConfig,
    pub noise: NoiseSpec,
    /// Independent runs; run `i` uses seed `seed + i` for both the heatmaps
    /// and the noise.
    pub runs: usize,
    pub seed: u64,
    /// Base cost; the experiment overrides the compared settings.
    pub cost: CostConfig,
    /// Pixel sizes refer to a 128-pixel-wide image and are rescaled.
    pub search: SearchConfig,
    pub solver: SolverConfig,
    /// Parameter noise multipliers swept by the recovery experiment.
    pub theta_scales: Vec<f64>,
    /// Replace the pairwise information with the inverse variance of the
    /// injected per-step drift.
    pub match_information: bool,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            scene: SceneConfig::default(),
            noise: NoiseSpec::default(),
            runs: 20,
            seed: 0,
            cost: CostConfig::default(),
            search: SearchConfig::default(),
            solver: SolverConfig {
                rematch_rounds: 3,
                ..Default::default()
            },
            theta_scales: vec![0.5, 1.0, 2.0],
            match_information: true,
        }
    }

    /// `(label, cost, noise)` for every compared setting.
    fn variants(&self) -> Vec<(String, CostConfig, NoiseSpec)> {
        let mut base = self.cost;
        if self.match_information {
            if let Some(info) = self.noise.information() {
                base.information = info;
            }
        }
        match self.kind {
            ExperimentKind::UnaryCompare => {
                let modes = [UnaryMode::Correspondence, UnaryMode::Interpolation];
                let mut out = Vec::new();
                for p in modes {
                    for l in modes {
                        let cost = CostConfig {
                            unary_mode_p: p,
                            unary_mode_l: l,
                            ..base
                        };
                        out.push((cost.unary_label(), cost, self.noise.without_theta()));
                    }
                }
                out
            }
            ExperimentKind::CombinedVsPoseOnly => [("joint", true), ("pose_only", false)]
                .into_iter()
                .map(|(label, optimize_model)| {
                    let cost = CostConfig {
                        optimize_model,
                        ..base
                    };
                    (label.to_string(), cost, self.noise)
                })
                .collect(),
            ExperimentKind::ParamRecovery => self
                .theta_scales
                .iter()
                .map(|s| {
                    let cost = CostConfig {
                        optimize_model: true,
                        ..base
                    };
                    (format!("theta_scale={s}"), cost, self.noise.with_theta_scale(*s))
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("an experiment needs at least one run"));
        }
        if self.kind == ExperimentKind::ParamRecovery && self.theta_scales.is_empty() {
            return Err(Error::invalid("parameter recovery needs at least one noise scale"));
        }
        self.noise.validate()?;
        self.cost.validate()?;
        self.search.validate()?;
        self.solver.validate()
    }
}

/// One experiment run under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub scene: String,
    pub seed: u64,
    pub config: String,
    pub initial: Errors,
    pub fin: Errors,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

pub const CSV_HEADER: &str = "experiment,scene,seed,config,init_pos_err,final_pos_err,init_orient_err,final_orient_err,init_model_err,final_model_err,iterations,converged";

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.scene,
            r.seed,
            r.config,
            r.initial.pos,
            r.fin.pos,
            r.initial.orient,
            r.fin.orient,
            r.initial.model,
            r.fin.model,
            r.iterations,
            r.converged
        );
    }
    s
}

/// Per-config means in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub runs: usize,
    pub initial: Errors,
    pub fin: Errors,
    pub converged: usize,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<ConfigSummary> {
    let mut out: Vec<ConfigSummary> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|s| s.config == r.config) {
            Some(i) => i,
            None => {
                out.push(ConfigSummary {
                    config: r.config.clone(),
                    runs: 0,
                    initial: Errors::default(),
                    fin: Errors::default(),
                    converged: 0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.runs += 1;
        s.initial.pos += r.initial.pos;
        s.initial.orient += r.initial.orient;
        s.initial.model += r.initial.model;
        s.fin.pos += r.fin.pos;
        s.fin.orient += r.fin.orient;
        s.fin.model += r.fin.model;
        s.converged += r.converged as usize;
    }
    for s in &mut out {
        let n = s.runs as f64;
        for e in [&mut s.initial, &mut s.fin] {
            e.pos /= n;
            e.orient /= n;
            e.model /= n;
        }
    }
    out
}

/// Runs every (run, setting) pair. Runs execute in parallel; rows come back
/// in run-major, setting-minor order regardless of scheduling.
///
/// A solver failure in one run is recorded as an unconverged row holding the
/// initial errors; scene generation errors are fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let variants = cfg.variants();
    let search = cfg.search.scaled_for_width(cfg.scene.dims.0);
    let scene_label = format!(
        "{}-{}f",
        match cfg.scene.pattern {
            Pattern::Orbit => "orbit",
            Pattern::Facade => "facade",
        },
        cfg.scene.frame_count
    );
    let per_run: Vec<Result<Vec<MetricsRow>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let seed = cfg.seed.wrapping_add(run as u64);
            let scene = Scene::generate(&cfg.scene, seed)?;
            let heatmaps: Arc<[ProjectionImageSet]> = scene.render()?.into();
            let mut rows = Vec::with_capacity(variants.len());
            for (label, cost, noise) in &variants {
                let noise = NoiseSpec { seed, ..*noise };
                let start = noisy_start(&scene, &noise)?;
                let initial = compute_metrics(&start.graph.vertices, &start.theta, &scene.trajectory_gt, &scene.theta_gt)?;
                let row = match fit(&start, &scene.k, heatmaps.clone(), cost, &search, &cfg.solver) {
                    Ok((state, report)) => MetricsRow {
                        experiment: cfg.kind.label().to_string(),
                        scene: scene_label.clone(),
                        seed,
                        config: label.clone(),
                        initial,
                        fin: compute_metrics(&state.poses, &state.theta, &scene.trajectory_gt, &scene.theta_gt)?,
                        iterations: report.iterations,
                        converged: report.converged(),
                        initial_cost: report.initial_cost,
                        final_cost: report.final_cost,
                    },
                    Err(_) => MetricsRow {
                        experiment: cfg.kind.label().to_string(),
                        scene: scene_label.clone(),
                        seed,
                        config: label.clone(),
                        initial,
                        fin: initial,
                        iterations: 0,
                        converged: false,
                        initial_cost: f64::NAN,
                        final_cost: f64::NAN,
                    },
                };
                rows.push(row);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_run {
        rows.extend(r?);
    }
    Ok(rows)
}
