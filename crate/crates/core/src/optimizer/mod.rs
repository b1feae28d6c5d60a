//! Joint cost over the pose graph and turbine parameters.
//!
//! The total cost is
//! `lambda_P * E_P + lambda_L * E_L + lambda_pair * E_pairwise`, where the
//! two unary terms tie point-model points and split line points to the
//! heatmaps (either through fixed 2-D correspondences or by sampling the
//! heatmap directly) and the pairwise term keeps consecutive relative poses
//! close to their measurements. All terms are sums of squared residuals and
//! are minimised together with Levenberg-Marquardt in [`solve`].
//!
//! The first vertex is held fixed. When `optimize_model` is off the turbine
//! parameters are constants.

mod lm;
pub mod residuals;

use std::ops::AddAssign;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{build_selected, MatchSelection, SearchConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, PoseGraph, PoseTangent, RelativePose};
use crate::heatmap::{Channel, ProjectionImageSet};
use crate::turbine::{
    model_point, ModelPointId, ParamVector, TurbineParams, DEFAULT_SPLIT_COUNT, PARAM_DIM,
};

pub use lm::{solve, ConvergenceReason, RoundReport, SolveReport, SolverConfig, TraceRow};
pub use residuals::{
    interpolation_with_jacobian, pairwise_jacobians, project_model_point, relative_pose_error,
    residual_pairwise, residual_unary_correspondence, residual_unary_interpolation,
    InformationMatrix, ModelProjection,
};

/// How one unary term reads the heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryMode {
    /// Reprojection error against searched 2-D correspondences.
    #[serde(rename = "corr")]
    Correspondence,
    /// Negative log of the bicubically sampled heatmap.
    #[serde(rename = "interp")]
    Interpolation,
}

impl UnaryMode {
    pub fn label(self) -> &'static str {
        match self {
            UnaryMode::Correspondence => "corr",
            UnaryMode::Interpolation => "interp",
        }
    }
}

impl std::str::FromStr for UnaryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corr" | "correspondence" => Ok(UnaryMode::Correspondence),
            "interp" | "interpolation" => Ok(UnaryMode::Interpolation),
            other => Err(Error::invalid(format!("unknown unary mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub lambda_p: f64,
    pub lambda_l: f64,
    pub lambda_pair: f64,
    pub unary_mode_p: UnaryMode,
    pub unary_mode_l: UnaryMode,
    /// `false` holds the turbine parameters fixed (pose-only baseline).
    pub optimize_model: bool,
    /// Interior points per line.
    pub split_count: usize,
    pub information: InformationMatrix,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            lambda_p: 1.0,
            lambda_l: 0.1,
            lambda_pair: 1.0,
            unary_mode_p: UnaryMode::Correspondence,
            unary_mode_l: UnaryMode::Interpolation,
            optimize_model: true,
            split_count: DEFAULT_SPLIT_COUNT,
            information: InformationMatrix::default(),
        }
    }
}

impl CostConfig {
    /// Only the relative-pose term.
    pub fn pairwise_only() -> Self {
        CostConfig {
            lambda_p: 0.0,
            lambda_l: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_p, self.lambda_l, self.lambda_pair];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("cost weights must be finite and non-negative"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid("at least one cost weight must be positive"));
        }
        if self.split_count == 0 {
            return Err(Error::invalid("split count must be positive"));
        }
        Ok(())
    }

    /// Label such as `L-interp+P-corr`.
    pub fn unary_label(&self) -> String {
        format!("L-{}+P-{}", self.unary_mode_l.label(), self.unary_mode_p.label())
    }
}

/// One residual block of the cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualBlock {
    UnaryCorrespondence {
        frame: usize,
        model_id: ModelPointId,
        target: Vector2<f64>,
        lambda: f64,
    },
    UnaryInterpolation {
        frame: usize,
        model_id: ModelPointId,
        channel: Channel,
        lambda: f64,
    },
    Pairwise {
        edge: usize,
        lambda: f64,
    },
}

impl ResidualBlock {
    pub fn dim(&self) -> usize {
        match self {
            ResidualBlock::UnaryCorrespondence { .. } => 2,
            ResidualBlock::UnaryInterpolation { .. } => 1,
            ResidualBlock::Pairwise { .. } => 6,
        }
    }

    pub fn is_correspondence(&self) -> bool {
        matches!(self, ResidualBlock::UnaryCorrespondence { .. })
    }
}

/// Widest block Jacobian: turbine parameters plus two poses.
const LOCAL_COLS: usize = PARAM_DIM + 12;

/// Current estimate: turbine parameters and one pose per key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemState {
    pub theta: TurbineParams,
    pub poses: Vec<Pose>,
}

/// Residual and Jacobians of one block at one state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockEval {
    pub dim: usize,
    pub residual: SVector<f64, 6>,
    pub d_theta: SMatrix<f64, 6, PARAM_DIM>,
    pub poses: [Option<(usize, SMatrix<f64, 6, 6>)>; 2],
}

impl BlockEval {
    fn new(dim: usize) -> Self {
        BlockEval {
            dim,
            residual: SVector::zeros(),
            d_theta: SMatrix::zeros(),
            poses: [None, None],
        }
    }
}

/// Everything needed to evaluate and minimise the joint cost.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    k: CameraIntrinsics,
    heatmaps: Arc<[ProjectionImageSet]>,
    measurements: Vec<RelativePose>,
    cost: CostConfig,
    search: SearchConfig,
    blocks: Vec<ResidualBlock>,
    state: ProblemState,
}

/// Instantiates all residual blocks for the initial estimate.
///
/// Correspondence blocks are matched against the heatmaps at the initial
/// estimate; interpolation blocks are created for every model point that is
/// in front of its camera.
pub fn build_problem(
    graph: &PoseGraph,
    theta: &TurbineParams,
    k: &CameraIntrinsics,
    heatmaps: Arc<[ProjectionImageSet]>,
    cost_cfg: &CostConfig,
    search_cfg: &SearchConfig,
) -> Result<OptimizationProblem> {
    graph.validate()?;
    cost_cfg.validate()?;
    search_cfg.validate()?;
    k.validate()?;
    if !theta.is_finite() {
        return Err(Error::invalid("turbine parameters must be finite"));
    }
    if heatmaps.len() != graph.len() {
        return Err(Error::invalid(format!(
            "heatmaps missing: {} frames for {} vertices",
            heatmaps.len(),
            graph.len()
        )));
    }
    let mut problem = OptimizationProblem {
        k: *k,
        heatmaps,
        measurements: graph.measurements.clone(),
        cost: *cost_cfg,
        search: *search_cfg,
        blocks: Vec::new(),
        state: ProblemState {
            theta: *theta,
            poses: graph.vertices.clone(),
        },
    };
    problem.build_static_blocks();
    problem.rematch()?;
    Ok(problem)
}

impl OptimizationProblem {
    fn build_static_blocks(&mut self) {
        let cfg = self.cost;
        let mut blocks = Vec::new();
        if cfg.lambda_pair > 0.0 {
            blocks.extend((0..self.measurements.len()).map(|edge| ResidualBlock::Pairwise {
                edge,
                lambda: cfg.lambda_pair,
            }));
        }
        let mut interp_ids: Vec<(ModelPointId, f64)> = Vec::new();
        if cfg.lambda_p > 0.0 && cfg.unary_mode_p == UnaryMode::Interpolation {
            interp_ids.extend(ModelPointId::points().map(|id| (id, cfg.lambda_p)));
        }
        if cfg.lambda_l > 0.0 && cfg.unary_mode_l == UnaryMode::Interpolation {
            interp_ids.extend(ModelPointId::line_points(cfg.split_count).map(|id| (id, cfg.lambda_l)));
        }
        for (frame, pose) in self.state.poses.iter().enumerate() {
            for &(model_id, lambda) in &interp_ids {
                let p = pose.transform(&model_point(&self.state.theta, model_id));
                if p.z <= crate::geometry::MIN_DEPTH {
                    continue;
                }
                blocks.push(ResidualBlock::UnaryInterpolation {
                    frame,
                    model_id,
                    channel: Channel::for_model_point(model_id),
                    lambda,
                });
            }
        }
        self.blocks = blocks;
    }

    /// Rebuilds every correspondence block from the current estimate and
    /// returns how many were found.
    pub fn rematch(&mut self) -> Result<usize> {
        let cfg = self.cost;
        let select = MatchSelection {
            points: cfg.lambda_p > 0.0 && cfg.unary_mode_p == UnaryMode::Correspondence,
            lines: cfg.lambda_l > 0.0 && cfg.unary_mode_l == UnaryMode::Correspondence,
        };
        self.blocks.retain(|b| !b.is_correspondence());
        if !select.points && !select.lines {
            return Ok(0);
        }
        let corrs = build_selected(
            &self.state.poses,
            &self.state.theta,
            &self.k,
            &self.heatmaps,
            &self.search,
            cfg.split_count,
            select,
        )?;
        let n = corrs.len();
        self.blocks.extend(corrs.into_iter().map(|(frame, c)| {
            let lambda = match c.model_id {
                ModelPointId::Point(_) => cfg.lambda_p,
                ModelPointId::Line { .. } => cfg.lambda_l,
            };
            ResidualBlock::UnaryCorrespondence {
                frame,
                model_id: c.model_id,
                target: c.target,
                lambda,
            }
        }));
        Ok(n)
    }

    pub fn state(&self) -> &ProblemState {
        &self.state
    }

    pub fn theta(&self) -> &TurbineParams {
        &self.state.theta
    }

    pub fn poses(&self) -> &[Pose] {
        &self.state.poses
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn cost_config(&self) -> &CostConfig {
        &self.cost
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    pub fn heatmaps(&self) -> &[ProjectionImageSet] {
        &self.heatmaps
    }

    pub fn measurements(&self) -> &[RelativePose] {
        &self.measurements
    }

    /// Replaces the current estimate, e.g. to evaluate the cost elsewhere.
    pub fn set_state(&mut self, state: ProblemState) -> Result<()> {
        if state.poses.len() != self.state.poses.len() {
            return Err(Error::invalid("state has the wrong number of poses"));
        }
        self.state = state;
        Ok(())
    }

    pub fn correspondence_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_correspondence()).count()
    }

    /// Number of free scalar parameters.
    pub fn parameter_dim(&self) -> usize {
        let model = if self.cost.optimize_model { PARAM_DIM } else { 0 };
        model + 6 * (self.state.poses.len() - 1)
    }

    fn pose_offset(&self, vertex: usize) -> Option<usize> {
        if vertex == 0 {
            return None;
        }
        let model = if self.cost.optimize_model { PARAM_DIM } else { 0 };
        Some(model + 6 * (vertex - 1))
    }

    fn evaluate_block(&self, state: &ProblemState, block: &ResidualBlock) -> Option<BlockEval> {
        match *block {
            ResidualBlock::UnaryCorrespondence {
                frame,
                model_id,
                target,
                lambda,
            } => {
                let proj =
                    project_model_point(&state.poses[frame], &state.theta, &self.k, model_id).ok()?;
                let w = lambda.sqrt();
                let mut e = BlockEval::new(2);
                e.residual.fixed_rows_mut::<2>(0).copy_from(&((proj.pixel - target) * w));
                e.d_theta.fixed_rows_mut::<2>(0).copy_from(&(proj.d_theta * w));
                let mut jp = SMatrix::<f64, 6, 6>::zeros();
                jp.fixed_rows_mut::<2>(0).copy_from(&(proj.d_pose * w));
                e.poses[0] = Some((frame, jp));
                Some(e)
            }
            ResidualBlock::UnaryInterpolation {
                frame,
                model_id,
                channel,
                lambda,
            } => {
                let grid = self.heatmaps[frame].channel(channel);
                let (r, jp_row, jt_row) = interpolation_with_jacobian(
                    &state.poses[frame],
                    &state.theta,
                    &self.k,
                    grid,
                    model_id,
                    lambda,
                )
                .ok()?;
                let mut e = BlockEval::new(1);
                e.residual[0] = r;
                e.d_theta.fixed_rows_mut::<1>(0).copy_from(&jt_row);
                let mut jp = SMatrix::<f64, 6, 6>::zeros();
                jp.fixed_rows_mut::<1>(0).copy_from(&jp_row);
                e.poses[0] = Some((frame, jp));
                Some(e)
            }
            ResidualBlock::Pairwise { edge, lambda } => {
                let (pi, pj) = (&state.poses[edge], &state.poses[edge + 1]);
                let meas = &self.measurements[edge];
                let info = &self.cost.information;
                let w = lambda.sqrt();
                let (ji, jj) = pairwise_jacobians(pi, pj, meas, info);
                let mut e = BlockEval::new(6);
                e.residual = residual_pairwise(pi, pj, meas, info) * w;
                e.poses = [Some((edge, ji * w)), Some((edge + 1, jj * w))];
                Some(e)
            }
        }
    }

    /// Evaluates every block; `None` marks a block deactivated by cheirality.
    pub(crate) fn evaluate_all(&self, state: &ProblemState) -> Vec<Option<BlockEval>> {
        self.blocks
            .par_iter()
            .map(|b| self.evaluate_block(state, b))
            .collect()
    }

    /// Total cost and number of inactive blocks at `state`.
    pub fn cost_at(&self, state: &ProblemState) -> (f64, usize) {
        let evals = self.evaluate_all(state);
        let inactive = evals.iter().filter(|e| e.is_none()).count();
        let cost = evals
            .iter()
            .flatten()
            .map(|e| e.residual.rows(0, e.dim).norm_squared())
            .sum();
        (cost, inactive)
    }

    /// Total cost at the current estimate.
    pub fn cost(&self) -> f64 {
        self.cost_at(&self.state).0
    }

    /// Stacked residual vector at the current estimate (inactive blocks
    /// contribute zeros).
    pub fn residuals(&self) -> DVector<f64> {
        let evals = self.evaluate_all(&self.state);
        let total: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let mut out = DVector::zeros(total);
        let mut row = 0;
        for (b, e) in self.blocks.iter().zip(&evals) {
            if let Some(e) = e {
                out.rows_mut(row, e.dim).copy_from(&e.residual.rows(0, e.dim));
            }
            row += b.dim();
        }
        out
    }

    /// Dense Jacobian of [`Self::residuals`] w.r.t. the free parameters.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let evals = self.evaluate_all(&self.state);
        let total: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let mut j = DMatrix::zeros(total, self.parameter_dim());
        let mut row = 0;
        for (b, e) in self.blocks.iter().zip(&evals) {
            if let Some(e) = e {
                if self.cost.optimize_model {
                    j.view_mut((row, 0), (e.dim, PARAM_DIM))
                        .copy_from(&e.d_theta.rows(0, e.dim));
                }
                for (vertex, jp) in e.poses.iter().flatten() {
                    if let Some(off) = self.pose_offset(*vertex) {
                        j.view_mut((row, off), (e.dim, 6)).copy_from(&jp.rows(0, e.dim));
                    }
                }
            }
            row += b.dim();
        }
        j
    }

    /// Gradient of the total cost (sum of squared residuals) w.r.t. the free
    /// parameters.
    pub fn gradient(&self) -> DVector<f64> {
        let (_, g, _, _) = self.normal_equations(&self.state);
        g * 2.0
    }

    /// `(J^T J, J^T r, cost, inactive)` accumulated block by block.
    pub(crate) fn normal_equations(
        &self,
        state: &ProblemState,
    ) -> (DMatrix<f64>, DVector<f64>, f64, usize) {
        let n = self.parameter_dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut cost = 0.0;
        let mut inactive = 0;
        for e in self.evaluate_all(state) {
            let Some(e) = e else {
                inactive += 1;
                continue;
            };
            let r = e.residual.rows(0, e.dim);
            cost += r.norm_squared();
            // block Jacobian columns gathered as (global offset, width, local start)
            let mut local = SMatrix::<f64, 6, LOCAL_COLS>::zeros();
            let mut spans: [(usize, usize, usize); 3] = [(0, 0, 0); 3];
            let mut count = 0;
            let mut col = 0;
            if self.cost.optimize_model {
                local.fixed_columns_mut::<PARAM_DIM>(0).copy_from(&e.d_theta);
                spans[count] = (0, PARAM_DIM, 0);
                count += 1;
                col += PARAM_DIM;
            }
            for (vertex, jp) in e.poses.iter().flatten() {
                if let Some(off) = self.pose_offset(*vertex) {
                    local.fixed_columns_mut::<6>(col).copy_from(jp);
                    spans[count] = (off, 6, col);
                    count += 1;
                    col += 6;
                }
            }
            let jl = local.view((0, 0), (e.dim, col));
            let hl = jl.transpose() * jl;
            let gl = jl.transpose() * r;
            for &(oa, wa, la) in &spans[..count] {
                g.rows_mut(oa, wa).add_assign(&gl.rows(la, wa));
                for &(ob, wb, lb) in &spans[..count] {
                    h.view_mut((oa, ob), (wa, wb))
                        .add_assign(&hl.view((la, lb), (wa, wb)));
                }
            }
        }
        (h, g, cost, inactive)
    }

    /// Applies a step in the free parameters.
    /// State moved by a tangent step in the solver's parameter layout.
    pub fn retract(&self, state: &ProblemState, delta: &DVector<f64>) -> ProblemState {
        let theta = if self.cost.optimize_model {
            let v: ParamVector = state.theta.to_vector() + delta.fixed_rows::<PARAM_DIM>(0);
            TurbineParams::from_vector(&v)
        } else {
            state.theta
        };
        let poses = state
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| match self.pose_offset(i) {
                Some(off) => {
                    let d: PoseTangent = delta.fixed_rows::<6>(off).into_owned();
                    p.retract(&d)
                }
                None => *p,
            })
            .collect();
        ProblemState { theta, poses }
    }
}


