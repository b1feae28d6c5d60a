use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use turbine_fit::correspondence::SearchConfig;
use turbine_fit::hmp::write_atomic;
use turbine_fit::optimizer::{CostConfig, SolverConfig, UnaryMode};
use turbine_fit::scene_io::{load_scene, save_scene, simulate, write_json, OptimizedFile};
use turbine_fit::simeval::{
    compute_metrics, fit, run_experiment, summarize, to_csv, ExperimentConfig, ExperimentKind,
    NoiseSpec, NoisyStart, Pattern, Scene, SceneConfig,
};
use turbine_fit::{Error, RenderConfig, Result};

#[derive(Parser)]
#[command(name = "turbine-fit", version, about = "Joint pose-graph and wind-turbine model fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Simulate(SimulateArgs),
    /// Fit poses and turbine parameters to a scene directory.
    Optimize(OptimizeArgs),
    /// Run one of the evaluation experiments and write its CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Orbit,
    Facade,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Corr,
    Interp,
}

impl From<ModeArg> for UnaryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Corr => UnaryMode::Correspondence,
            ModeArg::Interp => UnaryMode::Interpolation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Unary,
    Combined,
    Recovery,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, value_enum, default_value_t = PatternArg::Orbit)]
    pattern: PatternArg,
    /// Camera distance from the tower (orbit) or rotor plane (facade), metres.
    #[arg(long, default_value_t = 25.0)]
    standoff: f64,
    /// Exact heatmaps and no pose or parameter noise.
    #[arg(long)]
    noise_free: bool,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep the turbine parameters at their initial values.
    #[arg(long)]
    pose_only: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::Corr)]
    unary_p: ModeArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Interp)]
    unary_l: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    lambda_p: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_l: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_pair: f64,
    #[arg(long, default_value_t = 2)]
    rematch_rounds: usize,
    /// Weight the pairwise terms by the scene's recorded drift sigmas.
    #[arg(long)]
    match_information: bool,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    experiment: ExperimentArg,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    frames: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    if a.frames == 0 {
        return Err(Error::InvalidInput("frame count must be positive".into()));
    }
    let cfg = SceneConfig {
        pattern: match a.pattern {
            PatternArg::Orbit => Pattern::Orbit,
            PatternArg::Facade => Pattern::Facade,
        },
        frame_count: a.frames,
        standoff: a.standoff,
        render: if a.noise_free {
            RenderConfig::noise_free()
        } else {
            RenderConfig::default()
        },
        ..Default::default()
    };
    let noise = if a.noise_free {
        NoiseSpec::zero()
    } else {
        NoiseSpec::default()
    };
    let scene = Scene::generate(&cfg, a.seed)?;
    let (file, heatmaps) = simulate(&scene, &NoiseSpec { seed: a.seed, ..noise })?;
    create_dir(&a.out)?;
    save_scene(&a.out, &file, &heatmaps)?;
    println!("wrote {} frames to {}", file.frame_count, a.out.display());
    Ok(())
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<()> {
    let (scene, heatmaps) = load_scene(&a.scene)?;
    let mut cost = CostConfig {
        lambda_p: a.lambda_p,
        lambda_l: a.lambda_l,
        lambda_pair: a.lambda_pair,
        unary_mode_p: a.unary_p.into(),
        unary_mode_l: a.unary_l.into(),
        optimize_model: !a.pose_only,
        ..Default::default()
    };
    if a.match_information {
        if let Some(info) = scene.noise.information() {
            cost.information = info;
        }
    }
    let solver = SolverConfig {
        rematch_rounds: a.rematch_rounds,
        ..Default::default()
    };
    let start = NoisyStart {
        graph: scene.initial_graph()?,
        theta: scene.theta_init,
    };
    let search = SearchConfig::default().scaled_for_width(scene.width);
    let heatmaps: Arc<[_]> = heatmaps.into();
    let (state, report) = fit(&start, &scene.intrinsics, heatmaps, &cost, &search, &solver)?;

    create_dir(&a.out)?;
    write_json(
        &a.out.join("optimized.json"),
        &OptimizedFile {
            theta: state.theta,
            poses: state.poses.clone(),
        },
    )?;
    write_json(&a.out.join("report.json"), &report)?;
    write_atomic(&a.out.join("trace.csv"), report.trace_csv().as_bytes())?;

    println!(
        "cost {} -> {} in {} iterations ({:?})",
        report.initial_cost, report.final_cost, report.iterations, report.convergence
    );
    if !report.physical_model {
        eprintln!("warning: fitted turbine has a non-positive dimension: {:?}", state.theta);
    }
    if scene.trajectory_gt.len() == state.poses.len() {
        let before = compute_metrics(&start.graph.vertices, &start.theta, &scene.trajectory_gt, &scene.theta_gt)?;
        let after = compute_metrics(&state.poses, &state.theta, &scene.trajectory_gt, &scene.theta_gt)?;
        println!("position error    {:.4} -> {:.4} m", before.pos, after.pos);
        println!("orientation error {:.5} -> {:.5} rad", before.orient, after.orient);
        println!("model error       {:.4} -> {:.4} m", before.model, after.model);
    }
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let kind = match a.experiment {
        ExperimentArg::Unary => ExperimentKind::UnaryCompare,
        ExperimentArg::Combined => ExperimentKind::CombinedVsPoseOnly,
        ExperimentArg::Recovery => ExperimentKind::ParamRecovery,
    };
    let mut cfg = ExperimentConfig::new(kind);
    cfg.runs = a.runs;
    cfg.seed = a.seed;
    cfg.scene.frame_count = a.frames;
    let rows = run_experiment(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(&a.out, to_csv(&rows).as_bytes())?;

    println!(
        "{:<24} {:>4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "config", "runs", "init_pos", "final_pos", "init_orient", "final_orient", "init_model", "final_model"
    );
    for s in summarize(&rows) {
        println!(
            "{:<24} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            s.config, s.runs, s.initial.pos, s.fin.pos, s.initial.orient, s.fin.orient, s.initial.model, s.fin.model
        );
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
