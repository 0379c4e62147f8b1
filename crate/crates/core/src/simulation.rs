//! Two-agent ground truth and synthetic sensor streams.
//!
//! Each agent is a point with an attitude. Its angular rate (body frame) and
//! inertial acceleration (global frame) are drawn once per input block and held
//! constant over the block; position, velocity and attitude are propagated with
//! RK4 at the IMU rate. The accelerometer sees `Cᵀ(a + g e_z)` (gravity included),
//! the gyro sees the body rate. Measurements add a constant bias and white
//! Gaussian noise.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quat_to_matrix_raw, rot_from_euler, rot_to_quat, so3_exp, Euler, Quat, Rot3};
use crate::scalar::Real;

type V3 = Vector3<f64>;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// One IMU reading: angular rate (rad/s) and specific force (m/s²), local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample<T: Real = f64> {
    pub t: T,
    pub gyro: Vector3<T>,
    pub accel: Vector3<T>,
}

impl<T: Real> ImuSample<T> {
    pub fn cast<U: Real>(&self) -> ImuSample<U> {
        ImuSample {
            t: U::lit(self.t.to_f64_lossy()),
            gyro: self.gyro.map(|v| U::lit(v.to_f64_lossy())),
            accel: self.accel.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// One camera reading: unit direction to the other agent in the observer's
/// local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BearingSample<T: Real = f64> {
    pub t: T,
    pub direction: Vector3<T>,
}

impl<T: Real> BearingSample<T> {
    pub fn cast<U: Real>(&self) -> BearingSample<U> {
        BearingSample {
            t: U::lit(self.t.to_f64_lossy()),
            direction: self.direction.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Constant sensor biases of both agents. Gyro biases in rad/s, accelerometer
/// biases in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasSet {
    pub gyro1: V3,
    pub accel1: V3,
    pub gyro2: V3,
    pub accel2: V3,
}

/// Initial state of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentInitial {
    /// m, global frame
    pub position: V3,
    /// m/s, global frame
    pub velocity: V3,
    /// roll, pitch, yaw in rad (local-to-global, Z-Y-X)
    pub euler: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub agent1: AgentInitial,
    pub agent2: AgentInitial,
}

impl Default for InitialConditions {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            agent1: AgentInitial {
                position: V3::zeros(),
                velocity: V3::new(0.1, -0.1, 0.0),
                euler: [0.2 * PI, -0.3 * PI, 0.8 * PI],
            },
            agent2: AgentInitial {
                position: V3::new(1.0, 1.0, 1.0),
                velocity: V3::new(0.2, 0.8, 0.1),
                euler: [0.2 * PI, 0.3 * PI, -0.8 * PI],
            },
        }
    }
}

/// Simulation parameters. Every field has a default, so a JSON override file
/// only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Trial length, s.
    pub duration: f64,
    /// IMU sample rate, Hz.
    pub imu_rate: f64,
    /// Camera rate, Hz. Must divide the IMU rate.
    pub camera_rate: f64,
    /// Length of the piecewise-constant input blocks, s.
    pub input_block: f64,
    /// Per-axis std of the body angular rate, deg/s.
    pub angular_rate_std_deg: f64,
    /// Per-axis std of the inertial acceleration, m/s².
    pub inertial_accel_std: f64,
    /// Accelerometer white noise std, m/s².
    pub accel_noise_std: f64,
    /// Gyro white noise std, deg/s.
    pub gyro_noise_std_deg: f64,
    /// Per-axis variance of the bearing perturbation angle, deg².
    pub bearing_noise_var_deg2: f64,
    pub biases: BiasSet,
    /// m/s².
    pub gravity: f64,
    pub seed: u64,
    pub initial: InitialConditions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 4.0,
            imu_rate: 500.0,
            camera_rate: 5.0,
            input_block: 0.1,
            angular_rate_std_deg: 30.0,
            inertial_accel_std: 1.0,
            accel_noise_std: 0.03,
            gyro_noise_std_deg: 0.1,
            bearing_noise_var_deg2: 1.0,
            biases: BiasSet::default(),
            gravity: STANDARD_GRAVITY,
            seed: 0,
            initial: InitialConditions::default(),
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    ((r - k).abs() < 1e-9 && k >= 1.0).then_some(k as usize)
}

impl SimConfig {
    /// Config with every noise source and bias set to zero.
    pub fn noiseless() -> Self {
        Self {
            accel_noise_std: 0.0,
            gyro_noise_std_deg: 0.0,
            bearing_noise_var_deg2: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration", self.duration),
            ("imu_rate", self.imu_rate),
            ("camera_rate", self.camera_rate),
            ("input_block", self.input_block),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("angular_rate_std_deg", self.angular_rate_std_deg),
            ("inertial_accel_std", self.inertial_accel_std),
            ("accel_noise_std", self.accel_noise_std),
            ("gyro_noise_std_deg", self.gyro_noise_std_deg),
            ("bearing_noise_var_deg2", self.bearing_noise_var_deg2),
            ("gravity", self.gravity),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if integer_ratio(self.imu_rate, self.camera_rate).is_none() {
            return Err(Error::Config(
                "IMU rate must be an integer multiple of the camera rate".into(),
            ));
        }
        if integer_ratio(self.input_block * self.imu_rate, 1.0).is_none() {
            return Err(Error::Config(
                "input block must span a whole number of IMU samples".into(),
            ));
        }
        if integer_ratio(self.duration * self.camera_rate, 1.0).is_none() {
            return Err(Error::Config(
                "duration must span a whole number of camera periods".into(),
            ));
        }
        let b = &self.biases;
        if [b.gyro1, b.accel1, b.gyro2, b.accel2]
            .iter()
            .any(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Config("biases must be finite".into()));
        }
        Ok(())
    }

    /// IMU samples per camera period.
    pub fn imu_per_camera(&self) -> usize {
        integer_ratio(self.imu_rate, self.camera_rate).unwrap_or(1)
    }

    /// Number of IMU intervals in the trial (samples = this + 1).
    pub fn imu_intervals(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    fn samples_per_block(&self) -> usize {
        (self.input_block * self.imu_rate).round() as usize
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.imu_rate
    }
}

/// Sampled ground truth of one agent on the IMU grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub t: Vec<f64>,
    /// Global position, m.
    pub position: Vec<V3>,
    /// Global velocity, m/s.
    pub velocity: Vec<V3>,
    /// Local-to-global attitude.
    pub attitude: Vec<Quat<f64>>,
    /// Specific force in the local frame (inertial + gravity), held over
    /// `[t_k, t_{k+1})`.
    pub accel: Vec<V3>,
    /// Body angular rate, held over `[t_k, t_{k+1})`.
    pub omega: Vec<V3>,
    /// Global inertial acceleration, held over `[t_k, t_{k+1})`.
    pub inertial_accel: Vec<V3>,
}

impl AgentTruth {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn rotation(&self, k: usize) -> Rot3<f64> {
        Rot3::from_matrix_unchecked(quat_to_matrix_raw(&self.attitude[k]))
    }

    /// Index of the sample at time `t`, if `t` lies within the span.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.t[0], *self.t.last().unwrap());
        let dt = (end - start) / (self.t.len() - 1).max(1) as f64;
        if !(t >= start - 1e-9 && t <= end + 1e-9) {
            return Err(Error::OutOfRange { t, start, end });
        }
        Ok((((t - start) / dt).round() as usize).min(self.t.len() - 1))
    }
}

/// Relative state of agent 2 with respect to agent 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    /// Position of agent 2 in agent 1's local frame, m.
    pub position: V3,
    /// Velocity of agent 2 relative to agent 1, agent 1's local frame, m/s.
    pub velocity: V3,
    /// `q1* q2`.
    pub quaternion: Quat<f64>,
    /// Maps agent-2 local coordinates into agent-1 local coordinates.
    pub rotation: Rot3<f64>,
}

#[derive(Clone, Copy)]
struct Kinematic {
    r: V3,
    v: V3,
    q: Quat<f64>,
}

fn derivative(s: &Kinematic, a: &V3, omega: &V3) -> Kinematic {
    Kinematic {
        r: s.v,
        v: *a,
        q: (s.q * Quat::pure(omega)).scale(0.5),
    }
}

fn axpy(s: &Kinematic, h: f64, d: &Kinematic) -> Kinematic {
    Kinematic {
        r: s.r + d.r * h,
        v: s.v + d.v * h,
        q: s.q.add(&d.q.scale(h)),
    }
}

fn rk4_step(s: &Kinematic, a: &V3, omega: &V3, h: f64) -> Kinematic {
    let k1 = derivative(s, a, omega);
    let k2 = derivative(&axpy(s, h / 2.0, &k1), a, omega);
    let k3 = derivative(&axpy(s, h / 2.0, &k2), a, omega);
    let k4 = derivative(&axpy(s, h, &k3), a, omega);
    Kinematic {
        r: s.r + (k1.r + (k2.r + k3.r) * 2.0 + k4.r) * (h / 6.0),
        v: s.v + (k1.v + (k2.v + k3.v) * 2.0 + k4.v) * (h / 6.0),
        q: s.q
            .add(&k1.q.add(&k2.q.add(&k3.q).scale(2.0)).add(&k4.q).scale(h / 6.0))
            .normalize(),
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

fn draw_vec(dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> V3 {
    V3::new(dist.sample(rng), dist.sample(rng), dist.sample(rng))
}

/// RNG for one named purpose within a trial, so that e.g. changing the bias
/// leaves the noise draws untouched.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TRAJECTORY: u64 = 0;
const STREAM_IMU: [u64; 2] = [1, 2];
const STREAM_CAMERA: [u64; 2] = [3, 4];

fn propagate(init: &AgentInitial, omegas: &[V3], accels: &[V3], cfg: &SimConfig) -> AgentTruth {
    let n = cfg.imu_intervals();
    let per_block = cfg.samples_per_block();
    let dt = cfg.imu_dt();
    let gravity = V3::new(0.0, 0.0, cfg.gravity);
    let e = Euler::new(init.euler[0], init.euler[1], init.euler[2]);
    let mut state = Kinematic {
        r: init.position,
        v: init.velocity,
        q: rot_to_quat(&rot_from_euler(&e)),
    };
    let mut truth = AgentTruth {
        t: Vec::with_capacity(n + 1),
        position: Vec::with_capacity(n + 1),
        velocity: Vec::with_capacity(n + 1),
        attitude: Vec::with_capacity(n + 1),
        accel: Vec::with_capacity(n + 1),
        omega: Vec::with_capacity(n + 1),
        inertial_accel: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let block = k / per_block;
        let (omega, a) = (omegas[block], accels[block]);
        let c = quat_to_matrix_raw(&state.q);
        truth.t.push(k as f64 * dt);
        truth.position.push(state.r);
        truth.velocity.push(state.v);
        truth.attitude.push(state.q);
        truth.accel.push(c.transpose() * (a + gravity));
        truth.omega.push(omega);
        truth.inertial_accel.push(a);
        if k < n {
            state = rk4_step(&state, &a, &omega, dt);
        }
    }
    truth
}

/// Random two-agent trajectories, deterministic in `cfg.seed`.
pub fn generate_trajectories(cfg: &SimConfig) -> Result<(AgentTruth, AgentTruth)> {
    cfg.validate()?;
    let blocks = cfg.imu_intervals() / cfg.samples_per_block() + 1;
    let rate = normal(cfg.angular_rate_std_deg.to_radians());
    let acc = normal(cfg.inertial_accel_std);
    let mut rng = stream_rng(cfg.seed, STREAM_TRAJECTORY);
    let mut inputs = [
        (Vec::with_capacity(blocks), Vec::with_capacity(blocks)),
        (Vec::with_capacity(blocks), Vec::with_capacity(blocks)),
    ];
    for _ in 0..blocks {
        for (omegas, accels) in inputs.iter_mut() {
            omegas.push(draw_vec(&rate, &mut rng));
            accels.push(draw_vec(&acc, &mut rng));
        }
    }
    let t1 = propagate(&cfg.initial.agent1, &inputs[0].0, &inputs[0].1, cfg);
    let t2 = propagate(&cfg.initial.agent2, &inputs[1].0, &inputs[1].1, cfg);
    Ok((t1, t2))
}

/// Relative state at sample index `k`.
pub fn relative_state_at(truth1: &AgentTruth, truth2: &AgentTruth, k: usize) -> RelativeState {
    let q1 = truth1.attitude[k];
    let q2 = truth2.attitude[k];
    let c1t = quat_to_matrix_raw(&q1).transpose();
    let q = q1.conj() * q2;
    RelativeState {
        position: c1t * (truth2.position[k] - truth1.position[k]),
        velocity: c1t * (truth2.velocity[k] - truth1.velocity[k]),
        quaternion: q,
        rotation: Rot3::from_matrix_unchecked(quat_to_matrix_raw(&q)),
    }
}

/// Relative state at time `t` (evaluated on the IMU sample grid).
pub fn relative_truth(truth1: &AgentTruth, truth2: &AgentTruth, t: f64) -> Result<RelativeState> {
    let k = truth1.index_of(t)?;
    Ok(relative_state_at(truth1, truth2, k))
}

/// Gyro and accelerometer bias of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentBias {
    pub gyro: V3,
    pub accel: V3,
}

/// IMU stream of one agent: truth + bias + white noise. `agent` is 0 or 1 and
/// selects the noise stream.
pub fn synthesize_imu(truth: &AgentTruth, bias: &AgentBias, cfg: &SimConfig, agent: usize) -> Vec<ImuSample> {
    let gyro_noise = normal(cfg.gyro_noise_std_deg.to_radians());
    let accel_noise = normal(cfg.accel_noise_std);
    let mut rng = stream_rng(cfg.seed, STREAM_IMU[agent.min(1)]);
    (0..truth.len())
        .map(|k| {
            let gn = draw_vec(&gyro_noise, &mut rng);
            let an = draw_vec(&accel_noise, &mut rng);
            ImuSample {
                t: truth.t[k],
                gyro: truth.omega[k] + bias.gyro + gn,
                accel: truth.accel[k] + bias.accel + an,
            }
        })
        .collect()
}

/// Bearings of `target` seen from `observer` at every camera epoch, perturbed
/// by a random rotation with per-axis angle std `sqrt(bearing_noise_var_deg2)`.
pub fn synthesize_bearings(
    observer: &AgentTruth,
    target: &AgentTruth,
    cfg: &SimConfig,
    agent: usize,
) -> Result<Vec<BearingSample>> {
    let step = cfg.imu_per_camera();
    let noise = normal(cfg.bearing_noise_var_deg2.sqrt().to_radians());
    let mut rng = stream_rng(cfg.seed, STREAM_CAMERA[agent.min(1)]);
    (0..observer.len())
        .step_by(step)
        .map(|k| {
            let rel = observer.rotation(k).transpose() * (target.position[k] - observer.position[k]);
            let distance = rel.norm();
            if !(distance > 1e-6) {
                return Err(Error::DegenerateGeometry {
                    t: observer.t[k],
                    distance,
                });
            }
            let perturb = so3_exp(&draw_vec(&noise, &mut rng));
            let d = perturb * (rel / distance);
            Ok(BearingSample {
                t: observer.t[k],
                direction: d.normalize(),
            })
        })
        .collect()
}

/// Everything produced by one simulated trial.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub config: SimConfig,
    pub truth1: AgentTruth,
    pub truth2: AgentTruth,
    pub imu1: Vec<ImuSample>,
    pub imu2: Vec<ImuSample>,
    /// Agent 1 observing agent 2.
    pub bearings1: Vec<BearingSample>,
    /// Agent 2 observing agent 1.
    pub bearings2: Vec<BearingSample>,
}

impl SimulatedTrial {
    pub fn relative(&self, t: f64) -> Result<RelativeState> {
        relative_truth(&self.truth1, &self.truth2, t)
    }
}

/// Trajectories plus all four sensor streams.
pub fn simulate(cfg: &SimConfig) -> Result<SimulatedTrial> {
    let (truth1, truth2) = generate_trajectories(cfg)?;
    let b = &cfg.biases;
    let imu1 = synthesize_imu(
        &truth1,
        &AgentBias {
            gyro: b.gyro1,
            accel: b.accel1,
        },
        cfg,
        0,
    );
    let imu2 = synthesize_imu(
        &truth2,
        &AgentBias {
            gyro: b.gyro2,
            accel: b.accel2,
        },
        cfg,
        1,
    );
    let bearings1 = synthesize_bearings(&truth1, &truth2, cfg, 0)?;
    let bearings2 = synthesize_bearings(&truth2, &truth1, cfg, 1)?;
    Ok(SimulatedTrial {
        config: cfg.clone(),
        truth1,
        truth2,
        imu1,
        imu2,
        bearings1,
        bearings2,
    })
}
