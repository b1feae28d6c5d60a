//! Levenberg-Marquardt on the dense normal equations.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::OptimizationProblem;
use crate::error::{Error, Result};

/// Largest damping tried before giving up on a linearisation.
const MAX_DAMPING: f64 = 1e16;
/// Bounds on the diagonal used to scale the damping term.
const MIN_DIAGONAL: f64 = 1e-6;
const MAX_DIAGONAL: f64 = 1e32;
/// Gradient infinity-norm below which the current point is stationary.
const GRADIENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Damping multiplier after a rejected step.
    pub damping_up: f64,
    /// Damping multiplier after an accepted step.
    pub damping_down: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when the step norm drops below this.
    pub param_tolerance: f64,
    /// Solve rounds when correspondences are used; correspondences are
    /// rebuilt at the current estimate before every round after the first.
    pub rematch_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.3,
            cost_tolerance: 1e-9,
            param_tolerance: 1e-10,
            rematch_rounds: 2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.cost_tolerance > 0.0
            && self.param_tolerance > 0.0
            && self.rematch_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid solver configuration: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceReason {
    CostTolerance,
    ParamTolerance,
    Gradient,
    /// No damping produced a cost decrease.
    Stalled,
    MaxIterations,
    /// The damped normal equations could not be factorised.
    Diverged,
}

impl ConvergenceReason {
    pub fn converged(self) -> bool {
        !matches!(self, ConvergenceReason::MaxIterations | ConvergenceReason::Diverged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub iteration: usize,
    pub cost: f64,
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub correspondences: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub reason: ConvergenceReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Cost of the initial estimate under the final set of residual blocks.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub correspondence_counts: Vec<usize>,
    pub rounds: Vec<RoundReport>,
    pub convergence: ConvergenceReason,
    /// Blocks deactivated by cheirality at the final estimate.
    pub inactive_residuals: usize,
    /// False when the final parameters have a non-positive height, nacelle
    /// or blade length. The solve itself is unconstrained.
    pub physical_model: bool,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.convergence.converged()
    }

    /// Iteration trace with columns `iteration,cost,damping,step_norm`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,cost,damping,step_norm\n");
        for (i, row) in self.trace.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", i + 1, row.cost, row.damping, row.step_norm);
        }
        s
    }
}

/// Minimises the problem's cost in place.
///
/// Each round runs damped Gauss-Newton iterations until a tolerance or the
/// iteration limit is hit. Rejected steps raise the damping, accepted steps
/// lower it, so the cost of the accepted iterates never increases.
pub fn solve(problem: &mut OptimizationProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let initial_state = problem.state.clone();
    let has_matching = {
        let c = problem.cost;
        use super::UnaryMode::Correspondence;
        (c.lambda_p > 0.0 && c.unary_mode_p == Correspondence)
            || (c.lambda_l > 0.0 && c.unary_mode_l == Correspondence)
    };
    let rounds = if has_matching { cfg.rematch_rounds } else { 1 };

    let mut report = SolveReport {
        initial_cost: 0.0,
        final_cost: 0.0,
        iterations: 0,
        correspondence_counts: Vec::with_capacity(rounds),
        rounds: Vec::with_capacity(rounds),
        convergence: ConvergenceReason::MaxIterations,
        inactive_residuals: 0,
        physical_model: true,
        trace: Vec::new(),
    };
    for round in 0..rounds {
        if round > 0 {
            problem.rematch()?;
        }
        let correspondences = problem.correspondence_count();
        report.correspondence_counts.push(correspondences);
        let r = run_round(problem, cfg, round, &mut report.trace);
        report.iterations += r.iterations;
        report.convergence = r.reason;
        let diverged = r.reason == ConvergenceReason::Diverged;
        report.rounds.push(RoundReport {
            correspondences,
            ..r
        });
        if diverged {
            break;
        }
    }
    report.initial_cost = problem.cost_at(&initial_state).0;
    let (final_cost, inactive) = problem.cost_at(&problem.state);
    report.final_cost = final_cost;
    report.inactive_residuals = inactive;
    report.physical_model = problem.state.theta.validate().is_ok();
    Ok(report)
}

fn run_round(
    problem: &mut OptimizationProblem,
    cfg: &SolverConfig,
    round: usize,
    trace: &mut Vec<TraceRow>,
) -> RoundReport {
    let (mut h, mut g, mut cost, _) = problem.normal_equations(&problem.state);
    let initial_cost = cost;
    let mut damping = cfg.initial_damping;
    let mut iterations = 0;
    let mut reason = ConvergenceReason::MaxIterations;

    while iterations < cfg.max_iterations {
        if g.amax() < GRADIENT_TOLERANCE {
            reason = ConvergenceReason::Gradient;
            break;
        }
        let diag: DVector<f64> = h.diagonal().map(|d| d.clamp(MIN_DIAGONAL, MAX_DIAGONAL));
        let step = loop {
            let mut damped = h.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += damping * diag[i];
            }
            match damped.cholesky() {
                Some(chol) => break Some(chol.solve(&(-&g))),
                None if damping < MAX_DAMPING => damping *= cfg.damping_up,
                None => break None,
            }
        };
        let Some(step) = step else {
            reason = ConvergenceReason::Diverged;
            break;
        };
        iterations += 1;
        let step_norm = step.norm();
        let candidate = problem.retract(&problem.state, &step);
        let (h_new, g_new, new_cost, _) = problem.normal_equations(&candidate);
        let accepted = new_cost.is_finite() && new_cost < cost;
        trace.push(TraceRow {
            round,
            iteration: iterations,
            cost: if accepted { new_cost } else { cost },
            damping,
            step_norm,
            accepted,
        });
        if accepted {
            assert!(new_cost <= cost, "accepted step increased the cost");
            let relative = (cost - new_cost) / cost;
            problem.state = candidate;
            h = h_new;
            g = g_new;
            cost = new_cost;
            damping = (damping * cfg.damping_down).max(1e-15);
            if relative < cfg.cost_tolerance {
                reason = ConvergenceReason::CostTolerance;
                break;
            }
            if step_norm < cfg.param_tolerance {
                reason = ConvergenceReason::ParamTolerance;
                break;
            }
        } else {
            if step_norm < cfg.param_tolerance {
                reason = ConvergenceReason::ParamTolerance;
                break;
            }
            damping *= cfg.damping_up;
            if damping > MAX_DAMPING {
                reason = ConvergenceReason::Stalled;
                break;
            }
        }
    }
    RoundReport {
        correspondences: 0,
        initial_cost,
        final_cost: cost,
        iterations,
        reason,
    }
}
