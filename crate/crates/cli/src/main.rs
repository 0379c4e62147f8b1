use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use coopvi::calibration::{estimate_gyro_bias, CalibrationOptions};
use coopvi::geometry::rot_to_euler;
use coopvi::harness::{run_sweep, uniform_biases, SweepSpec};
use coopvi::io::{read_config, MeasurementLog};
use coopvi::observability::{
    empirical_gramian_rank, ExcitationConfig, NominalState, OutputModel, StateModel, SystemVariant, DEFAULT_EXCITATIONS,
};
use coopvi::simulation::{simulate, SimConfig};
use coopvi::solver::{solve_window, ClosedFormEstimate, ProblemDump};
use coopvi::CameraMode;

#[derive(Parser)]
#[command(
    name = "coopvi",
    version,
    about = "Cooperative visual-inertial closed-form initialization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trial and write its measurement log.
    Simulate(SimulateArgs),
    /// Solve the closed-form system on a measurement log.
    Solve(SolveArgs),
    /// Estimate gyro biases on a measurement log, then solve.
    Calibrate(CalibrateArgs),
    /// Empirical observability Gramian rank.
    Rank(RankArgs),
    /// Monte-Carlo grid over windows and bias magnitudes.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Dual,
}

impl From<Mode> for CameraMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Single => CameraMode::SingleCamera,
            Mode::Dual => CameraMode::DualSynchronized,
        }
    }
}

#[derive(Args)]
struct SimOpts {
    /// JSON file overriding simulation defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gyro bias on every axis of both agents, deg/s.
    #[arg(long)]
    gyro_bias: Option<f64>,
    /// Accelerometer bias norm on both agents, m/s².
    #[arg(long)]
    accel_bias: Option<f64>,
}

impl SimOpts {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.gyro_bias.is_some() || self.accel_bias.is_some() {
            cfg.biases = uniform_biases(self.gyro_bias.unwrap_or(0.0), self.accel_bias.unwrap_or(0.0));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimOpts,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WindowOpts {
    /// Directory written by `simulate`.
    log: PathBuf,
    #[arg(long, value_enum, default_value = "dual")]
    mode: Mode,
    /// Window length from t = 0, s.
    #[arg(long, default_value_t = 4.0)]
    window: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    win: WindowOpts,
    /// Also write (Ξ, b, x, residual) as JSON here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    win: WindowOpts,
    #[arg(long, default_value_t = CalibrationOptions::default().max_iterations)]
    max_iterations: usize,
    /// Relative cost spread at which the simplex stops.
    #[arg(long, default_value_t = CalibrationOptions::default().tolerance)]
    tolerance: f64,
    /// Initial simplex step, deg/s.
    #[arg(long, default_value_t = CalibrationOptions::default().simplex_scale_dps)]
    simplex_scale: f64,
    /// Largest bias searched, deg/s.
    #[arg(long, default_value_t = CalibrationOptions::default().bound_dps)]
    bias_bound: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Biased22,
    Unbiased20,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputArg {
    Two,
    One,
    Azimuth,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, value_enum, default_value = "biased22")]
    state: StateArg,
    #[arg(long, value_enum, default_value = "one")]
    cameras: OutputArg,
    /// Drop the quaternion-norm outputs.
    #[arg(long)]
    no_norms: bool,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_EXCITATIONS)]
    excitations: usize,
    /// Horizon of each excitation, s.
    #[arg(long, default_value_t = 2.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file overriding simulation defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dual")]
    mode: Mode,
    /// Window lengths, s.
    #[arg(long, value_delimiter = ',', default_values_t = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0])]
    window: Vec<f64>,
    /// Gyro bias magnitudes, deg/s.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    gyro_bias: Vec<f64>,
    /// Accelerometer bias magnitudes, m/s².
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    accel_bias: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Seed of trial 0.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    calibrate: bool,
    /// Output directory for sweep.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

fn print(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn estimate_json(e: &ClosedFormEstimate<f64>) -> Result<serde_json::Value> {
    let euler = rot_to_euler(&e.o_a)?;
    Ok(json!({
        "mode": e.mode,
        "r_a_m": e.r_a.as_slice(),
        "v_a_mps": e.v_a.as_slice(),
        "o_a_row_major": e.o_a.matrix().transpose().as_slice(),
        "o_a_euler_rad": euler.to_array(),
        "distances_m": e.lambdas,
        "residual_norm": e.residual_norm,
        "condition": e.condition,
        "orthonormality_defect": e.orthonormality_defect,
        "negative_distances": e.negative_lambdas,
    }))
}

fn load_window(w: &WindowOpts) -> Result<coopvi::Window> {
    let log = MeasurementLog::read_dir(&w.log).with_context(|| format!("reading log {}", w.log.display()))?;
    Ok(log.window(0.0, w.window, w.mode.into())?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = a.sim.config()?;
            let trial = simulate(&cfg)?;
            let log = MeasurementLog::from(&trial);
            log.write_dir(&a.out)?;
            log::info!("wrote {}", a.out.display());
            print(&json!({
                "out": a.out,
                "seed": cfg.seed,
                "imu_samples": log.imu1.len(),
                "camera_epochs": log.bearings1.len(),
            }))
        }
        Command::Solve(a) => {
            let w = load_window(&a.win)?;
            let s = solve_window(&w)?;
            if let Some(p) = &a.dump {
                write_json(p, &serde_json::to_value(ProblemDump::new(&s.problem, &s.solution))?)?;
            }
            print(&estimate_json(&s.estimate)?)
        }
        Command::Calibrate(a) => {
            let options = CalibrationOptions {
                max_iterations: a.max_iterations,
                tolerance: a.tolerance,
                simplex_scale_dps: a.simplex_scale,
                bound_dps: a.bias_bound,
                ..CalibrationOptions::default()
            };
            let w = load_window(&a.win)?;
            let r = estimate_gyro_bias(&w, &options)?;
            if r.clipped {
                log::warn!("bias estimate reached the ±{} deg/s bound", options.bound_dps);
            }
            let deg = r.bias.to_degrees();
            print(&json!({
                "gyro_bias1_dps": &deg[..3],
                "gyro_bias2_dps": &deg[3..],
                "cost": r.cost,
                "initial_cost": r.initial_cost,
                "iterations": r.iterations,
                "evaluations": r.evaluations,
                "converged": r.converged,
                "clipped": r.clipped,
                "trace": r.trace,
                "estimate": estimate_json(&r.estimate)?,
            }))
        }
        Command::Rank(a) => {
            let state = match a.state {
                StateArg::Biased22 => StateModel::Biased22,
                StateArg::Unbiased20 => StateModel::Unbiased20,
            };
            let output = match a.cameras {
                OutputArg::Two => OutputModel::TwoCameras,
                OutputArg::One => OutputModel::OneCamera,
                OutputArg::Azimuth => OutputModel::AzimuthOnly,
            };
            let variant = SystemVariant::new(state, output, !a.no_norms);
            let cfg = ExcitationConfig {
                horizon: a.horizon,
                ..ExcitationConfig::default()
            };
            let report = empirical_gramian_rank(
                variant,
                &NominalState::generic(a.seed),
                &cfg,
                a.epsilon,
                a.excitations,
                a.seed,
            )?;
            if !report.is_conclusive() {
                log::warn!("spectral gap {:.3e} too small for a rank decision", report.gap_ratio);
            }
            print(&serde_json::to_value(&report)?)
        }
        Command::Sweep(a) => {
            let base = match &a.config {
                Some(p) => read_config(p)?,
                None => SimConfig::default(),
            };
            let spec = SweepSpec {
                windows: a.window,
                gyro_bias_dps: a.gyro_bias,
                accel_bias_mps2: a.accel_bias,
                trials: a.trials,
                mode: a.mode.into(),
                calibrate: a.calibrate,
                base,
                base_seed: a.seed,
                ..SweepSpec::default()
            };
            if spec.trials == 0 {
                bail!("--trials must be at least 1");
            }
            let result = run_sweep(&spec)?;
            std::fs::create_dir_all(&a.out)?;
            let csv = a.out.join("sweep.csv");
            result.write_csv(BufWriter::new(File::create(&csv)?))?;
            let summary = result.summary_json();
            write_json(&a.out.join("summary.json"), &summary)?;
            log::info!("wrote {} rows to {}", result.rows.len(), csv.display());
            print(&json!({
                "config_hash": result.config_hash,
                "rows": result.rows.len(),
                "failed": result.rows.iter().filter(|r| r.outcome.is_failed()).count(),
                "csv": csv,
            }))
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
