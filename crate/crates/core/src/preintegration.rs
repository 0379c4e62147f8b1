//! IMU preintegration over a short window `[t_A, t_B]`.
//!
//! For each agent the gyro stream gives `M(t)`, the rotation that takes
//! coordinates in the current local frame into the frame frozen at `t_A`
//! (`M(t_A) = I`, `dM/dt = M · skew(Ω)ᵀ`). The accelerometer stream rotated by
//! `M` is integrated once (`α`) and twice (`β`). Bearings rotated by `M(t_j)`
//! give the de-rotated unit vectors `μ_j` / `ν_j`.
//!
//! Samples are treated as held over `[t_k, t_{k+1})`, which makes the
//! integration exact for piecewise-constant inputs switching on the sample grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Rot3, Vec3};
use crate::scalar::Real;
use crate::simulation::{BearingSample, ImuSample, SimulatedTrial};

/// Longest window accepted by [`Window::new`], s.
pub const MAX_WINDOW_LENGTH: f64 = 4.0;

/// Which cameras contribute equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    /// Only agent 1 observes agent 2.
    SingleCamera,
    /// Both agents observe each other at the same epochs.
    DualSynchronized,
}

impl std::str::FromStr for CameraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_camera" => Ok(Self::SingleCamera),
            "dual" | "dual_synchronized" => Ok(Self::DualSynchronized),
            other => Err(Error::InvalidArgument(format!("unknown camera mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CameraMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SingleCamera => "single",
            Self::DualSynchronized => "dual",
        })
    }
}

/// Nominal sample period of a stream and a check that it has no gaps.
fn stream_period<T: Real>(stream: &[ImuSample<T>]) -> Result<T> {
    if stream.len() < 2 {
        return Err(Error::MissingData("IMU stream has fewer than two samples".into()));
    }
    let dt = stream[1].t - stream[0].t;
    if !(dt > T::zero()) {
        return Err(Error::MissingData("IMU timestamps are not increasing".into()));
    }
    let limit = dt * T::lit(1.5);
    for (k, w) in stream.windows(2).enumerate() {
        let h = w[1].t - w[0].t;
        if !(h > T::zero() && h <= limit) {
            return Err(Error::MissingData(format!(
                "gap of {} s after sample {k} (t = {} s)",
                h.to_f64_lossy(),
                w[0].t.to_f64_lossy()
            )));
        }
    }
    Ok(dt)
}

/// Index of the sample nearest to `t`, within half a period.
fn snap<T: Real>(stream: &[ImuSample<T>], dt: T, t: T) -> Result<(usize, T)> {
    let start = stream[0].t;
    let end = stream[stream.len() - 1].t;
    let half = dt * T::lit(0.5);
    if t < start - half || t > end + half {
        return Err(Error::MissingData(format!(
            "t = {} s is outside the IMU stream [{}, {}] s",
            t.to_f64_lossy(),
            start.to_f64_lossy(),
            end.to_f64_lossy()
        )));
    }
    let guess = ((t - start) / dt).round().to_f64_lossy().max(0.0) as usize;
    let guess = guess.min(stream.len() - 1);
    // local search, timestamps may jitter
    let mut best = guess;
    let lo = guess.saturating_sub(2);
    let hi = (guess + 2).min(stream.len() - 1);
    for k in lo..=hi {
        if (stream[k].t - t).abs() < (stream[best].t - t).abs() {
            best = k;
        }
    }
    let skew = (stream[best].t - t).abs();
    if skew > half {
        return Err(Error::MissingData(format!(
            "no IMU sample within {} s of t = {} s",
            half.to_f64_lossy(),
            t.to_f64_lossy()
        )));
    }
    Ok((best, skew))
}

/// Attitude `M(t)` on the IMU grid from `t_A` onwards.
#[derive(Debug, Clone)]
pub struct AttitudeTrack<T: Real> {
    times: Vec<T>,
    rotations: Vec<Rot3<T>>,
    period: T,
}

impl<T: Real> AttitudeTrack<T> {
    /// Integrates the gyro stream from `t_a` to `t_end`.
    pub fn integrate(stream: &[ImuSample<T>], t_a: T, t_end: T) -> Result<Self> {
        let dt = stream_period(stream)?;
        let (first, _) = snap(stream, dt, t_a)?;
        let (last, _) = snap(stream, dt, t_end)?;
        let mut rotations = Vec::with_capacity(last - first + 1);
        let mut m = Rot3::identity();
        rotations.push(m);
        for k in first..last {
            let h = stream[k + 1].t - stream[k].t;
            m = m * so3_exp(&(stream[k].gyro * h));
            rotations.push(m);
        }
        Ok(Self {
            times: stream[first..=last].iter().map(|s| s.t).collect(),
            rotations,
            period: dt,
        })
    }

    /// `M(t)` at the grid point nearest to `t`.
    pub fn at(&self, t: T) -> Result<Rot3<T>> {
        let k = self.index(t)?;
        Ok(self.rotations[k])
    }

    fn index(&self, t: T) -> Result<usize> {
        let start = self.times[0];
        let half = self.period * T::lit(0.5);
        let k = ((t - start) / self.period).round().to_f64_lossy();
        if !(k >= 0.0) || k as usize >= self.times.len() || (self.times[k as usize] - t).abs() > half {
            return Err(Error::MissingData(format!(
                "epoch t = {} s outside attitude coverage",
                t.to_f64_lossy()
            )));
        }
        Ok(k as usize)
    }

    pub fn rotations(&self) -> &[Rot3<T>] {
        &self.rotations
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }
}

/// `M(t)` for one agent: gyro integration from `t_a` to `t`.
pub fn integrate_attitude<T: Real>(stream: &[ImuSample<T>], t_a: T, t: T) -> Result<Rot3<T>> {
    let track = AttitudeTrack::integrate(stream, t_a, t)?;
    Ok(*track.rotations.last().expect("track is never empty"))
}

/// `α(t_j)` and `β(t_j)` at each requested epoch.
///
/// `attitude` must have been integrated from the same `t_a` on the same stream.
pub fn accumulate_signals<T: Real>(
    stream: &[ImuSample<T>],
    attitude: &AttitudeTrack<T>,
    t_a: T,
    epochs: &[T],
) -> Result<Vec<(Vec3<T>, Vec3<T>)>> {
    let dt = stream_period(stream)?;
    let (first, _) = snap(stream, dt, t_a)?;
    let mut targets = Vec::with_capacity(epochs.len());
    for &t in epochs {
        let (k, _) = snap(stream, dt, t)?;
        if k < first || k - first >= attitude.rotations.len() {
            return Err(Error::MissingData(format!(
                "epoch t = {} s outside the integrated span",
                t.to_f64_lossy()
            )));
        }
        targets.push(k - first);
    }
    let last = targets.iter().copied().max().unwrap_or(0);
    let half = T::lit(0.5);
    let mut alpha = Vec3::zeros();
    let mut beta = Vec3::zeros();
    let mut per_sample = Vec::with_capacity(last + 1);
    per_sample.push((alpha, beta));
    for i in 0..last {
        let k = first + i;
        let h = stream[k + 1].t - stream[k].t;
        let a = attitude.rotations[i].matrix() * stream[k].accel;
        beta += alpha * h + a * (half * h * h);
        alpha += a * h;
        per_sample.push((alpha, beta));
    }
    Ok(targets.into_iter().map(|i| per_sample[i]).collect())
}

/// Bearings de-rotated into the frame frozen at `t_A`: `M(t_j) · d_j`.
pub fn rotate_bearings<T: Real>(bearings: &[BearingSample<T>], attitude: &AttitudeTrack<T>) -> Result<Vec<Vec3<T>>> {
    bearings
        .iter()
        .map(|b| Ok(attitude.at(b.t)?.matrix() * b.direction))
        .collect()
}

/// Gyro stream with `bias` removed from every sample.
pub fn debias_gyro<T: Real>(stream: &[ImuSample<T>], bias: &Vec3<T>) -> Vec<ImuSample<T>> {
    stream
        .iter()
        .map(|s| ImuSample {
            t: s.t,
            gyro: s.gyro - bias,
            accel: s.accel,
        })
        .collect()
}

/// Everything the closed form needs at one camera epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreintegratedEpoch<T: Real> {
    pub index: usize,
    pub t: T,
    /// `t_j − t_A`
    pub delta: T,
    pub m1: Rot3<T>,
    pub m2: Rot3<T>,
    pub alpha1: Vec3<T>,
    pub beta1: Vec3<T>,
    pub alpha2: Vec3<T>,
    pub beta2: Vec3<T>,
    /// Agent 1's bearing of agent 2, de-rotated.
    pub mu: Vec3<T>,
    /// Agent 2's bearing of agent 1, de-rotated (dual mode only).
    pub nu: Option<Vec3<T>>,
}

/// Raw measurements of one window.
#[derive(Debug, Clone)]
pub struct Window<T: Real> {
    pub t_a: T,
    pub t_b: T,
    pub imu1: Vec<ImuSample<T>>,
    pub imu2: Vec<ImuSample<T>>,
    /// Camera epochs of agent 1 inside the window.
    pub bearings1: Vec<BearingSample<T>>,
    /// Camera epochs of agent 2 inside the window, if it has a camera.
    pub bearings2: Option<Vec<BearingSample<T>>>,
}

fn within<T: Real>(samples: &[BearingSample<T>], t_a: T, t_b: T, slack: T) -> Vec<BearingSample<T>> {
    samples
        .iter()
        .filter(|b| b.t >= t_a - slack && b.t <= t_b + slack)
        .copied()
        .collect()
}

impl<T: Real> Window<T> {
    /// Builds a window from full-length streams, keeping the bearings whose
    /// epochs fall in `[t_a, t_b]`. IMU streams are kept whole.
    pub fn new(
        t_a: T,
        t_b: T,
        imu1: Vec<ImuSample<T>>,
        imu2: Vec<ImuSample<T>>,
        bearings1: &[BearingSample<T>],
        bearings2: Option<&[BearingSample<T>]>,
    ) -> Result<Self> {
        if !(t_b > t_a) {
            return Err(Error::InvalidArgument("window end must follow its start".into()));
        }
        if (t_b - t_a).to_f64_lossy() > MAX_WINDOW_LENGTH + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "window of {} s exceeds the {MAX_WINDOW_LENGTH} s limit",
                (t_b - t_a).to_f64_lossy()
            )));
        }
        let dt = stream_period(&imu1)?;
        let slack = dt * T::lit(0.5);
        Ok(Self {
            t_a,
            t_b,
            bearings1: within(bearings1, t_a, t_b, slack),
            bearings2: bearings2.map(|b| within(b, t_a, t_b, slack)),
            imu1,
            imu2,
        })
    }

    /// Window `[t_a, t_b]` over a simulated trial. `mode` decides whether the
    /// second camera is included.
    pub fn from_trial(trial: &SimulatedTrial, t_a: f64, t_b: f64, mode: CameraMode) -> Result<Window<T>> {
        let dt = trial.config.imu_dt();
        let imu = |s: &[ImuSample]| -> Vec<ImuSample<T>> {
            s.iter()
                .filter(|x| x.t >= t_a - dt && x.t <= t_b + dt)
                .map(|x| x.cast())
                .collect()
        };
        let cast = |b: &[BearingSample]| -> Vec<BearingSample<T>> { b.iter().map(|x| x.cast()).collect() };
        let b1 = cast(&trial.bearings1);
        let b2 = cast(&trial.bearings2);
        Window::new(
            T::lit(t_a),
            T::lit(t_b),
            imu(&trial.imu1),
            imu(&trial.imu2),
            &b1,
            match mode {
                CameraMode::SingleCamera => None,
                CameraMode::DualSynchronized => Some(&b2),
            },
        )
    }

    pub fn mode(&self) -> CameraMode {
        if self.bearings2.is_some() {
            CameraMode::DualSynchronized
        } else {
            CameraMode::SingleCamera
        }
    }

    /// Window with both gyro streams debiased.
    pub fn debiased(&self, gyro1: &Vec3<T>, gyro2: &Vec3<T>) -> Self {
        Self {
            t_a: self.t_a,
            t_b: self.t_b,
            imu1: debias_gyro(&self.imu1, gyro1),
            imu2: debias_gyro(&self.imu2, gyro2),
            bearings1: self.bearings1.clone(),
            bearings2: self.bearings2.clone(),
        }
    }
}

/// Preintegration output for a window.
#[derive(Debug, Clone)]
pub struct PreintegratedWindow<T: Real> {
    pub mode: CameraMode,
    pub epochs: Vec<PreintegratedEpoch<T>>,
    /// Largest camera-to-IMU timestamp snap, s.
    pub max_time_skew: T,
}

/// Runs attitude integration, signal accumulation and bearing de-rotation
/// for both agents.
pub fn preintegrate<T: Real>(window: &Window<T>) -> Result<PreintegratedWindow<T>> {
    let mode = window.mode();
    let epochs_t: Vec<T> = window.bearings1.iter().map(|b| b.t).collect();
    if epochs_t.len() < 2 {
        return Err(Error::InsufficientEpochs {
            required: 2,
            actual: epochs_t.len(),
        });
    }
    for (i, w) in epochs_t.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonIncreasingEpochs { index: i + 1 });
        }
    }
    let dt = stream_period(&window.imu1)?;
    stream_period(&window.imu2)?;
    let t_a = epochs_t[0];
    if (t_a - window.t_a).abs() > dt * T::lit(0.5) {
        return Err(Error::MissingData(format!(
            "no camera epoch at window start {} s",
            window.t_a.to_f64_lossy()
        )));
    }
    let t_end = *epochs_t.last().unwrap();
    let mut max_skew = T::zero();
    for &t in &epochs_t {
        max_skew = max_skew.max(snap(&window.imu1, dt, t)?.1);
    }
    if let Some(b2) = &window.bearings2 {
        if b2.len() != epochs_t.len() {
            let i = b2.len().min(epochs_t.len());
            return Err(Error::Unsynchronized {
                index: i,
                t1: epochs_t.get(i).map_or(f64::NAN, |t| t.to_f64_lossy()),
                t2: b2.get(i).map_or(f64::NAN, |b| b.t.to_f64_lossy()),
            });
        }
        for (i, (b, &t)) in b2.iter().zip(&epochs_t).enumerate() {
            if (b.t - t).abs() > dt * T::lit(0.5) {
                return Err(Error::Unsynchronized {
                    index: i,
                    t1: t.to_f64_lossy(),
                    t2: b.t.to_f64_lossy(),
                });
            }
        }
    }

    let track1 = AttitudeTrack::integrate(&window.imu1, t_a, t_end)?;
    let track2 = AttitudeTrack::integrate(&window.imu2, t_a, t_end)?;
    let sig1 = accumulate_signals(&window.imu1, &track1, t_a, &epochs_t)?;
    let sig2 = accumulate_signals(&window.imu2, &track2, t_a, &epochs_t)?;
    let mu = rotate_bearings(&window.bearings1, &track1)?;
    let nu = match &window.bearings2 {
        Some(b2) => {
            // synchronized: evaluate agent 2's attitude at agent 1's epochs
            let aligned: Vec<BearingSample<T>> = b2
                .iter()
                .zip(&epochs_t)
                .map(|(b, &t)| BearingSample {
                    t,
                    direction: b.direction,
                })
                .collect();
            Some(rotate_bearings(&aligned, &track2)?)
        }
        None => None,
    };

    let epochs = epochs_t
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            Ok(PreintegratedEpoch {
                index: j,
                t,
                delta: t - t_a,
                m1: track1.at(t)?,
                m2: track2.at(t)?,
                alpha1: sig1[j].0,
                beta1: sig1[j].1,
                alpha2: sig2[j].0,
                beta2: sig2[j].1,
                mu: mu[j],
                nu: nu.as_ref().map(|v| v[j]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreintegratedWindow {
        mode,
        epochs,
        max_time_skew: max_skew,
    })
}
