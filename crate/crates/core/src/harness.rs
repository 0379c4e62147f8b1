//! Monte-Carlo trials and sweeps over window length and bias magnitude.
//!
//! A trial is simulate → (calibrate) → solve over `[0, W]` → compare with the
//! simulator's relative state. Trials are keyed by seed, so a sweep gives the
//! same rows whatever the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{estimate_gyro_bias, CalibrationOptions};
use crate::error::{Error, Result};
use crate::geometry::{rot_to_euler, wrap_angle, Vec3};
use crate::preintegration::{CameraMode, Window};
use crate::simulation::{simulate, BiasSet, RelativeState, SimConfig, SimulatedTrial};
use crate::solver::{solve_window, ClosedFormEstimate};

/// Relative errors of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTriple {
    /// Mean of `|λ̂_j − λ_j| / λ_j`.
    pub scale_err: f64,
    /// Mean over axes of `|V̂_c − V_c| / ‖V‖`.
    pub speed_err: f64,
    /// Mean over roll, pitch, yaw of `|wrap(ê − e)| / π`.
    pub orient_err: f64,
    /// Components dropped for a zero ground-truth denominator.
    #[serde(default)]
    pub excluded: u32,
}

/// Errors of `estimate` against the relative state at each of its epochs,
/// `truth[0]` being `t_A`.
pub fn compute_errors(estimate: &ClosedFormEstimate<f64>, truth: &[RelativeState]) -> Result<ErrorTriple> {
    if truth.len() != estimate.lambdas.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} truth epochs for {} estimated distances",
            truth.len(),
            estimate.lambdas.len()
        )));
    }
    let mut excluded = 0u32;
    let mut scale = 0.0;
    let mut used = 0usize;
    for (l, s) in estimate.lambdas.iter().zip(truth) {
        let d = s.position.norm();
        if d > 0.0 {
            scale += (l - d).abs() / d;
            used += 1;
        } else {
            excluded += 1;
        }
    }
    let scale_err = if used > 0 { scale / used as f64 } else { 0.0 };

    let v = truth[0].velocity;
    let speed_err = if v.norm() > 0.0 {
        (estimate.v_a - v).abs().sum() / (3.0 * v.norm())
    } else {
        excluded += 1;
        0.0
    };

    let est = rot_to_euler(&estimate.o_a)?.to_array();
    let tru = rot_to_euler(&truth[0].rotation)?.to_array();
    let orient_err = est
        .iter()
        .zip(tru)
        .map(|(a, b)| wrap_angle(a - b).abs() / std::f64::consts::PI)
        .sum::<f64>()
        / 3.0;

    Ok(ErrorTriple {
        scale_err,
        speed_err,
        orient_err,
        excluded,
    })
}

/// Same bias on both agents: `gyro_dps` on every gyro axis, an accelerometer
/// bias of norm `accel_mps2` along `(1, 1, 1)`.
pub fn uniform_biases(gyro_dps: f64, accel_mps2: f64) -> BiasSet {
    let g = Vec3::repeat(gyro_dps.to_radians());
    let a = Vec3::repeat(accel_mps2 / 3f64.sqrt());
    BiasSet {
        gyro1: g,
        accel1: a,
        gyro2: g,
        accel2: a,
    }
}

/// Result of one trial at one window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub errors: Option<ErrorTriple>,
    /// `‖Ξ x − b‖`.
    pub residual: Option<f64>,
    /// Estimated gyro biases in deg/s, when calibrating.
    pub bias_estimate_dps: Option<[f64; 6]>,
    /// Mean per-axis `|B̂ − B|`, deg/s.
    pub bias_err_dps: Option<f64>,
    pub failure: Option<String>,
}

impl TrialOutcome {
    fn failed(reason: String) -> Self {
        Self {
            errors: None,
            residual: None,
            bias_estimate_dps: None,
            bias_err_dps: None,
            failure: Some(reason),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

// Per-trial numerical trouble is a failed row; bad inputs abort.
fn fatal(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(_) | Error::Config(_))
}

fn evaluate(trial: &SimulatedTrial, w: &Window<f64>, mode: CameraMode) -> Result<(ErrorTriple, f64)> {
    let s = solve_window(w)?;
    let truth = w
        .bearings1
        .iter()
        .map(|b| trial.relative(b.t))
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(s.estimate.mode, mode);
    Ok((compute_errors(&s.estimate, &truth)?, s.solution.residual_norm))
}

/// One seeded trial solved at each window in `windows`. With `calibration`,
/// gyro biases are first estimated over the whole trial and removed.
pub fn run_trial_windows(
    cfg: &SimConfig,
    windows: &[f64],
    mode: CameraMode,
    calibration: Option<&CalibrationOptions>,
) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    for &w in windows {
        if !(w > 0.0 && w <= cfg.duration + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "window {w} s outside (0, {}] s",
                cfg.duration
            )));
        }
    }
    let trial = match simulate(cfg) {
        Ok(t) => t,
        Err(e) if fatal(&e) => return Err(e),
        Err(e) => return Ok(vec![TrialOutcome::failed(e.to_string()); windows.len()]),
    };

    let mut bias = None;
    if let Some(options) = calibration {
        let full = Window::<f64>::from_trial(&trial, 0.0, cfg.duration, mode)?;
        match estimate_gyro_bias(&full, options) {
            Ok(r) => bias = Some(r.bias),
            Err(e) if fatal(&e) => return Err(e),
            Err(e) => return Ok(vec![TrialOutcome::failed(format!("calibration: {e}")); windows.len()]),
        }
    }
    let bias_estimate_dps = bias.map(|b| b.to_degrees());
    let bias_err_dps = bias_estimate_dps.map(|est| {
        let b = &cfg.biases;
        let truth = [b.gyro1, b.gyro2]
            .iter()
            .flat_map(|v| v.iter().map(|c| c.to_degrees()).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        est.iter().zip(&truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / 6.0
    });

    windows
        .iter()
        .map(|&len| {
            let mut w = Window::<f64>::from_trial(&trial, 0.0, len, mode)?;
            if let Some(b) = &bias {
                w = w.debiased(&b.gyro1, &b.gyro2);
            }
            Ok(match evaluate(&trial, &w, mode) {
                Ok((errors, residual)) => TrialOutcome {
                    errors: Some(errors),
                    residual: Some(residual),
                    bias_estimate_dps,
                    bias_err_dps,
                    failure: None,
                },
                Err(e) if fatal(&e) => return Err(e),
                Err(e) => TrialOutcome {
                    bias_estimate_dps,
                    bias_err_dps,
                    ..TrialOutcome::failed(e.to_string())
                },
            })
        })
        .collect()
}

/// One trial at one window.
pub fn run_trial(
    cfg: &SimConfig,
    window: f64,
    mode: CameraMode,
    calibration: Option<&CalibrationOptions>,
) -> Result<TrialOutcome> {
    Ok(run_trial_windows(cfg, &[window], mode, calibration)?.remove(0))
}

/// Experiment grid. Trial `k` of every cell uses seed `base_seed + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// s
    pub windows: Vec<f64>,
    /// deg/s, per axis, both agents
    pub gyro_bias_dps: Vec<f64>,
    /// m/s², norm, both agents
    pub accel_bias_mps2: Vec<f64>,
    pub trials: usize,
    pub mode: CameraMode,
    pub calibrate: bool,
    pub calibration: CalibrationOptions,
    /// Everything but seed and biases.
    pub base: SimConfig,
    pub base_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            windows: vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            gyro_bias_dps: vec![0.0],
            accel_bias_mps2: vec![0.0],
            trials: 100,
            mode: CameraMode::DualSynchronized,
            calibrate: false,
            calibration: CalibrationOptions::default(),
            base: SimConfig::default(),
            base_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.calibration.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.windows.is_empty() || self.gyro_bias_dps.is_empty() || self.accel_bias_mps2.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if let Some(w) = self
            .windows
            .iter()
            .find(|w| !(**w > 0.0 && **w <= self.base.duration + 1e-9))
        {
            return Err(Error::Config(format!(
                "window {w} s outside (0, {}] s",
                self.base.duration
            )));
        }
        if self
            .gyro_bias_dps
            .iter()
            .chain(&self.accel_bias_mps2)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("bias magnitudes must be finite".into()));
        }
        Ok(())
    }

    /// Simulation config of one trial.
    pub fn trial_config(&self, gyro_dps: f64, accel_mps2: f64, trial: usize) -> SimConfig {
        SimConfig {
            seed: self.base_seed.wrapping_add(trial as u64),
            biases: uniform_biases(gyro_dps, accel_mps2),
            ..self.base.clone()
        }
    }

    /// SHA-256 of the JSON form, hex.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub window_s: f64,
    pub gyro_bias_dps: f64,
    pub accel_bias_mps2: f64,
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

/// Mean, sample std and quantiles of the successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub p05: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Stats {
    /// NaN everywhere for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = if n > 0 {
            v.iter().sum::<f64>() / n as f64
        } else {
            f64::NAN
        };
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        let q = |p: f64| {
            if n == 0 {
                return f64::NAN;
            }
            let pos = p * (n - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            count: n,
            mean,
            std,
            p05: q(0.05),
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            p95: q(0.95),
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub window_s: f64,
    pub gyro_bias_dps: f64,
    pub accel_bias_mps2: f64,
    pub trials: usize,
    pub failed: usize,
    pub scale: Stats,
    pub speed: Stats,
    pub orient: Stats,
    pub residual: Stats,
    pub bias_err_dps: Option<Stats>,
}

impl CellSummary {
    pub fn from_rows(rows: &[&TrialRow]) -> Self {
        let ok: Vec<&ErrorTriple> = rows.iter().filter_map(|r| r.outcome.errors.as_ref()).collect();
        let pick = |f: fn(&ErrorTriple) -> f64| Stats::of(&ok.iter().map(|e| f(e)).collect::<Vec<_>>());
        let bias: Vec<f64> = rows.iter().filter_map(|r| r.outcome.bias_err_dps).collect();
        let residual: Vec<f64> = rows.iter().filter_map(|r| r.outcome.residual).collect();
        let first = rows.first().expect("cell has rows");
        Self {
            window_s: first.window_s,
            gyro_bias_dps: first.gyro_bias_dps,
            accel_bias_mps2: first.accel_bias_mps2,
            trials: rows.len(),
            failed: rows.iter().filter(|r| r.outcome.is_failed()).count(),
            scale: pick(|e| e.scale_err),
            speed: pick(|e| e.speed_err),
            orient: pick(|e| e.orient_err),
            residual: Stats::of(&residual),
            bias_err_dps: (!bias.is_empty()).then(|| Stats::of(&bias)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub config_hash: String,
    /// Ordered by window, gyro bias, accel bias, trial.
    pub rows: Vec<TrialRow>,
    /// Same order, one per grid cell.
    pub cells: Vec<CellSummary>,
}

pub const CSV_HEADER: [&str; 9] = [
    "window_s",
    "gyro_bias_dps",
    "accel_bias_mps2",
    "trial",
    "scale_err",
    "speed_err",
    "orient_err",
    "residual",
    "failed",
];

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

impl SweepResult {
    pub fn cell(&self, window_s: f64, gyro_bias_dps: f64, accel_bias_mps2: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            c.window_s == window_s && c.gyro_bias_dps == gyro_bias_dps && c.accel_bias_mps2 == accel_bias_mps2
        })
    }

    /// One row per trial; floats with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let e = r.outcome.errors.unwrap_or(ErrorTriple {
                scale_err: f64::NAN,
                speed_err: f64::NAN,
                orient_err: f64::NAN,
                excluded: 0,
            });
            w.write_record([
                fmt(r.window_s),
                fmt(r.gyro_bias_dps),
                fmt(r.accel_bias_mps2),
                r.trial.to_string(),
                fmt(e.scale_err),
                fmt(e.speed_err),
                fmt(e.orient_err),
                fmt(r.outcome.residual.unwrap_or(f64::NAN)),
                u8::from(r.outcome.is_failed()).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Spec, hash and per-cell statistics, without the per-trial rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "base_seed": self.spec.base_seed,
            "spec": self.spec,
            "cells": self.cells,
        })
    }
}

fn sweep_with(spec: &SweepSpec, parallel: bool) -> Result<SweepResult> {
    spec.validate()?;
    let mut units = Vec::new();
    for &g in &spec.gyro_bias_dps {
        for &a in &spec.accel_bias_mps2 {
            for k in 0..spec.trials {
                units.push((g, a, k));
            }
        }
    }
    let calibration = spec.calibrate.then_some(&spec.calibration);
    let run = |&(g, a, k): &(f64, f64, usize)| {
        let cfg = spec.trial_config(g, a, k);
        run_trial_windows(&cfg, &spec.windows, spec.mode, calibration)
    };
    let outcomes: Vec<Vec<TrialOutcome>> = if parallel {
        units.par_iter().map(run).collect::<Result<_>>()?
    } else {
        units.iter().map(run).collect::<Result<_>>()?
    };

    let per_window = units.len();
    let mut rows = Vec::with_capacity(spec.windows.len() * per_window);
    for (wi, &w) in spec.windows.iter().enumerate() {
        for (&(g, a, k), out) in units.iter().zip(&outcomes) {
            rows.push(TrialRow {
                window_s: w,
                gyro_bias_dps: g,
                accel_bias_mps2: a,
                trial: k,
                seed: spec.base_seed.wrapping_add(k as u64),
                outcome: out[wi].clone(),
            });
        }
    }
    let cells = rows
        .chunks(spec.trials)
        .map(|c| CellSummary::from_rows(&c.iter().collect::<Vec<_>>()))
        .collect();
    Ok(SweepResult {
        spec: spec.clone(),
        config_hash: spec.config_hash(),
        rows,
        cells,
    })
}

/// Full grid on the rayon pool.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    sweep_with(spec, true)
}

/// Full grid on the calling thread; same rows as [`run_sweep`].
pub fn run_sweep_sequential(spec: &SweepSpec) -> Result<SweepResult> {
    sweep_with(spec, false)
}
