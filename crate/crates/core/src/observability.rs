//! Numerical observability checks by empirical observability Gramians.
//!
//! Two state models are propagated under the same body-frame inputs:
//!
//! - `Biased22`: `[R, V, q, B_Ω¹, B_A¹, B_Ω², B_A²]`, the relative state with
//!   constant gyro / accelerometer biases, driven by *measured* inputs;
//! - `Unbiased20`: `[r¹, v¹, q¹, r², v², q²]`, both agents in the global frame
//!   (`ṙ = v`, `v̇ = q A q* − g k`, `q̇ = ½ q Ω`).
//!
//! Outputs are the pinhole ratios `h_u = R_x / R_z`, `h_v = R_y / R_z` of each
//! camera, optionally the squared quaternion norms. Quaternions are *not*
//! renormalized: perturbing off the unit sphere is part of the analysis, so
//! every rotation is the raw sandwich product `q v q*`.
//!
//! `G = Σ_t J(t)ᵀ J(t) dt` with `J = ∂y(t)/∂x₀` by central differences; the
//! numerical rank of `G` is compared with the expected number of observable
//! modes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};
use crate::simulation::STANDARD_GRAVITY;

type V3 = Vec3<f64>;
type Q = Quat<f64>;

/// Relative tolerance on singular values for the numerical rank.
pub const RANK_RELATIVE_TOLERANCE: f64 = 1e-6;
/// Required ratio between the last kept and first dropped singular value.
pub const REQUIRED_GAP: f64 = 1e3;

/// Input replicates averaged into one Gramian. Single excitations leave
/// bias/attitude combinations weak; averaging twelve clears the tolerance.
pub const DEFAULT_EXCITATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateModel {
    Unbiased20,
    Biased22,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputModel {
    TwoCameras,
    OneCamera,
    /// Agent 1's camera, `h_u` only.
    AzimuthOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemVariant {
    pub state: StateModel,
    pub output: OutputModel,
    /// Append `|q|²` for every quaternion in the state.
    pub norm_outputs: bool,
}

impl SystemVariant {
    pub fn new(state: StateModel, output: OutputModel, norm_outputs: bool) -> Self {
        Self {
            state,
            output,
            norm_outputs,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.state {
            StateModel::Unbiased20 => 20,
            StateModel::Biased22 => 22,
        }
    }

    fn quaternions(&self) -> usize {
        match self.state {
            StateModel::Unbiased20 => 2,
            StateModel::Biased22 => 1,
        }
    }

    pub fn output_dim(&self) -> usize {
        let cams = match self.output {
            OutputModel::TwoCameras => 4,
            OutputModel::OneCamera => 2,
            OutputModel::AzimuthOnly => 1,
        };
        cams + if self.norm_outputs { self.quaternions() } else { 0 }
    }

    /// Number of observable modes, where known.
    ///
    /// With biases, all 22 components are observable from one camera, even
    /// from the azimuth alone. Without biases, in global coordinates, the
    /// relative position, velocity and orientation plus the two quaternion
    /// norms are observable: 11 of 20.
    pub fn expected_rank(&self) -> Option<usize> {
        match (self.state, self.output, self.norm_outputs) {
            (StateModel::Biased22, _, true) => Some(22),
            (StateModel::Unbiased20, OutputModel::TwoCameras | OutputModel::OneCamera, true) => Some(11),
            _ => None,
        }
    }
}

/// Body-frame inputs held over one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBlock {
    pub omega1: V3,
    pub accel1: V3,
    pub omega2: V3,
    pub accel2: V3,
}

impl InputBlock {
    /// The same inputs as read by IMUs with the given biases.
    pub fn measured(&self, b: &Biases) -> Self {
        Self {
            omega1: self.omega1 + b.gyro1,
            accel1: self.accel1 + b.accel1,
            omega2: self.omega2 + b.gyro2,
            accel2: self.accel2 + b.accel2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Biases {
    pub gyro1: V3,
    pub accel1: V3,
    pub gyro2: V3,
    pub accel2: V3,
}

/// Both agents in the global frame; quaternions are local → global.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub r1: V3,
    pub v1: V3,
    pub q1: Q,
    pub r2: V3,
    pub v2: V3,
    pub q2: Q,
}

impl GlobalState {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(20);
        let mut put = |at: usize, v: &[f64]| x.rows_mut(at, v.len()).copy_from_slice(v);
        put(0, self.r1.as_slice());
        put(3, self.v1.as_slice());
        put(6, &self.q1.to_array());
        put(10, self.r2.as_slice());
        put(13, self.v2.as_slice());
        put(16, &self.q2.to_array());
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let v3 = |i: usize| V3::new(x[i], x[i + 1], x[i + 2]);
        let q = |i: usize| Q::new(x[i], x[i + 1], x[i + 2], x[i + 3]);
        Self {
            r1: v3(0),
            v1: v3(3),
            q1: q(6),
            r2: v3(10),
            v2: v3(13),
            q2: q(16),
        }
    }

    /// Both agents shifted by `d`.
    pub fn translated(&self, d: &V3) -> Self {
        Self {
            r1: self.r1 + d,
            r2: self.r2 + d,
            ..*self
        }
    }

    /// Whole configuration rotated by `angle` about the gravity axis.
    pub fn rotated_about_gravity(&self, angle: f64) -> Self {
        let qz = Q::from_rotation_vector(&V3::new(0.0, 0.0, angle));
        Self {
            r1: qz.rotate(&self.r1),
            v1: qz.rotate(&self.v1),
            q1: qz * self.q1,
            r2: qz.rotate(&self.r2),
            v2: qz.rotate(&self.v2),
            q2: qz * self.q2,
        }
    }

    /// Agent 2 moved so that the separation is scaled by `k`; same bearing.
    pub fn with_scaled_separation(&self, k: f64) -> Self {
        Self {
            r2: self.r1 + (self.r2 - self.r1) * k,
            ..*self
        }
    }

    /// `(R, V, q)` seen from agent 1.
    pub fn relative(&self) -> (V3, V3, Q) {
        let c = self.q1.conj();
        (
            c.rotate(&(self.r2 - self.r1)),
            c.rotate(&(self.v2 - self.v1)),
            c * self.q2,
        )
    }
}

/// Initial state and biases around which the Gramian is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalState {
    pub global: GlobalState,
    pub biases: Biases,
}

impl NominalState {
    /// Agent 2 two metres along agent 1's optical axis and looking back,
    /// with small generic perturbations so that no symmetry is exact.
    pub fn generic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = Normal::new(0.0, 0.05).expect("valid std");
        let mut v = || V3::new(small.sample(&mut rng), small.sample(&mut rng), small.sample(&mut rng));
        let q1 = Q::from_rotation_vector(&v());
        let flip = Q::from_rotation_vector(&V3::new(std::f64::consts::PI, 0.0, 0.0));
        let q2 = Q::from_rotation_vector(&v()) * flip;
        let r1 = v();
        let r2 = V3::new(0.0, 0.0, 2.0) + v();
        let v1 = V3::new(0.1, -0.1, 0.0) + v();
        let v2 = V3::new(0.2, 0.3, 0.1) + v();
        let deg = 1f64.to_radians();
        let biases = Biases {
            gyro1: v() * deg,
            accel1: v(),
            gyro2: v() * deg,
            accel2: v(),
        };
        Self {
            global: GlobalState { r1, v1, q1, r2, v2, q2 },
            biases,
        }
    }

    /// Initial state vector for the given model.
    pub fn state_vector(&self, model: StateModel) -> DVector<f64> {
        match model {
            StateModel::Unbiased20 => self.global.to_vector(),
            StateModel::Biased22 => {
                let (r, v, q) = self.global.relative();
                let b = &self.biases;
                let mut x = DVector::zeros(22);
                x.rows_mut(0, 3).copy_from(&r);
                x.rows_mut(3, 3).copy_from(&v);
                x.rows_mut(6, 4).copy_from_slice(&q.to_array());
                x.rows_mut(10, 3).copy_from(&b.gyro1);
                x.rows_mut(13, 3).copy_from(&b.accel1);
                x.rows_mut(16, 3).copy_from(&b.gyro2);
                x.rows_mut(19, 3).copy_from(&b.accel2);
                x
            }
        }
    }
}

/// Random input generation and propagation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationConfig {
    /// s.
    pub horizon: f64,
    /// Input hold time, s.
    pub block: f64,
    pub angular_rate_std_deg: f64,
    pub inertial_accel_std: f64,
    pub gravity: f64,
    /// RK4 steps per second.
    pub integration_rate: f64,
    /// Output samples per second.
    pub output_rate: f64,
    /// Smallest accepted `R_z / |R|` for every active camera.
    pub min_axis_cosine: f64,
    pub max_attempts: usize,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            block: 0.1,
            angular_rate_std_deg: 30.0,
            inertial_accel_std: 1.0,
            gravity: STANDARD_GRAVITY,
            integration_rate: 500.0,
            output_rate: 100.0,
            min_axis_cosine: 0.3,
            max_attempts: 200,
        }
    }
}

impl ExcitationConfig {
    fn steps_per_block(&self) -> usize {
        (self.block * self.integration_rate).round() as usize
    }

    fn steps_per_output(&self) -> usize {
        (self.integration_rate / self.output_rate).round() as usize
    }

    fn blocks(&self) -> usize {
        (self.horizon / self.block).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon > 0.0
            && self.horizon <= 4.0 + 1e-12
            && self.block > 0.0
            && self.integration_rate > 0.0
            && self.output_rate > 0.0
            && self.steps_per_block() >= 1
            && self.steps_per_output() >= 1
            && ((self.block * self.integration_rate) - self.steps_per_block() as f64).abs() < 1e-9
            && ((self.integration_rate / self.output_rate) - self.steps_per_output() as f64).abs() < 1e-9
            && self.angular_rate_std_deg >= 0.0
            && self.inertial_accel_std >= 0.0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad excitation config {self:?}")))
        }
    }
}

/// True body-frame inputs of both agents, one entry per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub blocks: Vec<InputBlock>,
    /// Attempt index that passed the camera-axis check.
    pub attempt: usize,
}

impl Excitation {
    pub fn measured(&self, b: &Biases) -> Vec<InputBlock> {
        self.blocks.iter().map(|u| u.measured(b)).collect()
    }
}

fn global_rhs(x: &DVector<f64>, u: &InputBlock, g: f64) -> DVector<f64> {
    let s = GlobalState::from_vector(x);
    let half = 0.5;
    let gk = V3::new(0.0, 0.0, g);
    let dq1 = (s.q1 * Q::pure(&u.omega1)).scale(half);
    let dq2 = (s.q2 * Q::pure(&u.omega2)).scale(half);
    let d = GlobalState {
        r1: s.v1,
        v1: s.q1.rotate(&u.accel1) - gk,
        q1: dq1,
        r2: s.v2,
        v2: s.q2.rotate(&u.accel2) - gk,
        q2: dq2,
    };
    d.to_vector()
}

/// Right-hand side of the biased relative dynamics, `u` measured.
pub fn biased_rhs(x: &DVector<f64>, u: &InputBlock) -> DVector<f64> {
    let v3 = |i: usize| V3::new(x[i], x[i + 1], x[i + 2]);
    let r = v3(0);
    let v = v3(3);
    let q = Q::new(x[6], x[7], x[8], x[9]);
    let w1 = u.omega1 - v3(10);
    let a1 = u.accel1 - v3(13);
    let w2 = u.omega2 - v3(16);
    let a2 = u.accel2 - v3(19);
    // skew(Ω)·v = v × Ω
    let dr = r.cross(&w1) + v;
    let dv = v.cross(&w1) + q.rotate(&a2) - a1;
    let dq = (q * Q::pure(&w2)).add(&(Q::pure(&w1) * q).scale(-1.0)).scale(0.5);
    let mut d = DVector::zeros(22);
    d.rows_mut(0, 3).copy_from(&dr);
    d.rows_mut(3, 3).copy_from(&dv);
    d.rows_mut(6, 4).copy_from_slice(&dq.to_array());
    d
}

fn rhs(model: StateModel, x: &DVector<f64>, u: &InputBlock, g: f64) -> DVector<f64> {
    match model {
        StateModel::Unbiased20 => global_rhs(x, u, g),
        StateModel::Biased22 => biased_rhs(x, u),
    }
}

/// Relative position seen by each camera (agent 1's, then agent 2's).
fn camera_vectors(model: StateModel, x: &DVector<f64>) -> (V3, V3) {
    match model {
        StateModel::Unbiased20 => {
            let s = GlobalState::from_vector(x);
            (s.q1.conj().rotate(&(s.r2 - s.r1)), s.q2.conj().rotate(&(s.r1 - s.r2)))
        }
        StateModel::Biased22 => {
            let r = V3::new(x[0], x[1], x[2]);
            let q = Q::new(x[6], x[7], x[8], x[9]);
            (r, -q.conj().rotate(&r))
        }
    }
}

fn outputs(variant: &SystemVariant, x: &DVector<f64>) -> DVector<f64> {
    let (c1, c2) = camera_vectors(variant.state, x);
    let mut y = Vec::with_capacity(variant.output_dim());
    match variant.output {
        OutputModel::AzimuthOnly => y.push(c1.x / c1.z),
        OutputModel::OneCamera => y.extend([c1.x / c1.z, c1.y / c1.z]),
        OutputModel::TwoCameras => y.extend([c1.x / c1.z, c1.y / c1.z, c2.x / c2.z, c2.y / c2.z]),
    }
    if variant.norm_outputs {
        match variant.state {
            StateModel::Unbiased20 => {
                y.push(x.rows(6, 4).norm_squared());
                y.push(x.rows(16, 4).norm_squared());
            }
            StateModel::Biased22 => y.push(x.rows(6, 4).norm_squared()),
        }
    }
    DVector::from_vec(y)
}

/// Outputs on the output grid, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    /// Smallest `R_z / |R|` over the active cameras.
    pub min_axis_cosine: f64,
}

/// RK4 propagation from `x0` under piecewise-constant `inputs`.
pub fn propagate_variant(
    variant: &SystemVariant,
    x0: &DVector<f64>,
    inputs: &[InputBlock],
    cfg: &ExcitationConfig,
) -> Result<OutputTrajectory> {
    cfg.validate()?;
    if x0.len() != variant.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "state has {} entries, {:?} needs {}",
            x0.len(),
            variant.state,
            variant.state_dim()
        )));
    }
    if inputs.len() < cfg.blocks() {
        return Err(Error::InvalidArgument(format!(
            "{} input blocks for a {} s horizon",
            inputs.len(),
            cfg.horizon
        )));
    }
    let h = 1.0 / cfg.integration_rate;
    let per_block = cfg.steps_per_block();
    let per_out = cfg.steps_per_output();
    let total = cfg.blocks() * per_block;
    let two_cams = variant.output == OutputModel::TwoCameras;

    let mut x = x0.clone();
    let mut t = Vec::with_capacity(total / per_out + 1);
    let mut y = Vec::with_capacity(total / per_out + 1);
    let mut min_cos = f64::INFINITY;
    let mut record = |k: usize, x: &DVector<f64>| {
        let (c1, c2) = camera_vectors(variant.state, x);
        min_cos = min_cos.min(c1.z / c1.norm());
        if two_cams {
            min_cos = min_cos.min(c2.z / c2.norm());
        }
        t.push(k as f64 * h);
        y.push(outputs(variant, x));
    };
    record(0, &x);
    for k in 0..total {
        let u = &inputs[k / per_block];
        let g = cfg.gravity;
        let k1 = rhs(variant.state, &x, u, g);
        let k2 = rhs(variant.state, &(&x + &k1 * (0.5 * h)), u, g);
        let k3 = rhs(variant.state, &(&x + &k2 * (0.5 * h)), u, g);
        let k4 = rhs(variant.state, &(&x + &k3 * h), u, g);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if (k + 1) % per_out == 0 {
            record(k + 1, &x);
        }
    }
    if y.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
        return Err(Error::TrajectoryRejected("non-finite output".into()));
    }
    Ok(OutputTrajectory {
        t,
        y,
        min_axis_cosine: min_cos,
    })
}

/// Random inputs drawn like the simulator's: block-wise Gaussian angular
/// rates and inertial accelerations, with the body specific force including
/// gravity along the nominal attitude. Draws are repeated until both cameras keep the other
/// agent well in front (`R_z / |R| ≥ min_axis_cosine`) over the horizon.
pub fn generate_excitation(nominal: &NominalState, cfg: &ExcitationConfig, seed: u64) -> Result<Excitation> {
    cfg.validate()?;
    let w_std = Normal::new(0.0, cfg.angular_rate_std_deg.to_radians()).map_err(|e| Error::Config(e.to_string()))?;
    let a_std = Normal::new(0.0, cfg.inertial_accel_std).map_err(|e| Error::Config(e.to_string()))?;
    let probe = SystemVariant::new(StateModel::Unbiased20, OutputModel::TwoCameras, false);
    let h = 1.0 / cfg.integration_rate;
    let gk = V3::new(0.0, 0.0, cfg.gravity);
    for attempt in 0..cfg.max_attempts {
        let mut rng = crate::simulation::stream_rng(seed, 16 + attempt as u64);
        let mut draw = |d: &Normal<f64>| V3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
        let mut x = nominal.global.to_vector();
        let mut blocks = Vec::with_capacity(cfg.blocks());
        for _ in 0..cfg.blocks() {
            let s = GlobalState::from_vector(&x);
            let (w1, a1, w2, a2) = (draw(&w_std), draw(&a_std), draw(&w_std), draw(&a_std));
            let u = InputBlock {
                omega1: w1,
                accel1: s.q1.conj().rotate(&(a1 + gk)),
                omega2: w2,
                accel2: s.q2.conj().rotate(&(a2 + gk)),
            };
            for _ in 0..cfg.steps_per_block() {
                let k1 = global_rhs(&x, &u, cfg.gravity);
                let k2 = global_rhs(&(&x + &k1 * (0.5 * h)), &u, cfg.gravity);
                let k3 = global_rhs(&(&x + &k2 * (0.5 * h)), &u, cfg.gravity);
                let k4 = global_rhs(&(&x + &k3 * h), &u, cfg.gravity);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            blocks.push(u);
        }
        let traj = propagate_variant(&probe, &nominal.global.to_vector(), &blocks, cfg)?;
        if traj.min_axis_cosine >= cfg.min_axis_cosine {
            return Ok(Excitation { blocks, attempt });
        }
        log::debug!(
            "excitation attempt {attempt} rejected: R_z/|R| down to {:.3}",
            traj.min_axis_cosine
        );
    }
    Err(Error::TrajectoryRejected(format!(
        "no excitation kept R_z/|R| ≥ {} within {} attempts",
        cfg.min_axis_cosine, cfg.max_attempts
    )))
}

/// `Σ_t J(t)ᵀ J(t) Δt` with `J` by central differences of step `eps`.
pub fn empirical_gramian(
    variant: &SystemVariant,
    x0: &DVector<f64>,
    inputs: &[InputBlock],
    cfg: &ExcitationConfig,
    eps: f64,
) -> Result<DMatrix<f64>> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "perturbation {eps} outside [1e-6, 1e-3]"
        )));
    }
    let n = variant.state_dim();
    let mut columns: Vec<Vec<DVector<f64>>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = x0.clone();
        plus[i] += eps;
        let mut minus = x0.clone();
        minus[i] -= eps;
        let yp = propagate_variant(variant, &plus, inputs, cfg)?.y;
        let ym = propagate_variant(variant, &minus, inputs, cfg)?.y;
        columns.push(yp.iter().zip(&ym).map(|(a, b)| (a - b) / (2.0 * eps)).collect());
    }
    let samples = columns[0].len();
    let dt = 1.0 / cfg.output_rate;
    let mut g = DMatrix::zeros(n, n);
    #[allow(clippy::needless_range_loop)]
    for k in 0..samples {
        let j = DMatrix::from_fn(variant.output_dim(), n, |r, c| columns[c][k][r]);
        g += j.transpose() * j * dt;
    }
    Ok(g)
}

/// Singular spectrum of a Gramian and the rank read from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub variant: SystemVariant,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub expected_rank: Option<usize>,
    /// `σ_rank / σ_{rank+1}`. A full-rank Gramian has no `σ_{n+1}`, so the
    /// round-off floor `n · ε_mach · σ_1` stands in for it.
    pub gap_ratio: f64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub excitations: usize,
}

/// `D^{-1/2} G D^{-1/2}` with `D = diag(G)`, so that the rank does not depend
/// on the units of the state components. Zero-diagonal rows are left alone.
pub fn equilibrate(g: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = g
        .diagonal()
        .iter()
        .map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * d[i] * d[j])
}

impl RankReport {
    /// Rank of the equilibrated Gramian at [`RANK_RELATIVE_TOLERANCE`].
    pub fn from_gramian(variant: SystemVariant, g: &DMatrix<f64>, epsilon: f64, excitations: usize) -> Self {
        let mut s: Vec<f64> = equilibrate(g).singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let top = s.first().copied().unwrap_or(0.0);
        let threshold = RANK_RELATIVE_TOLERANCE * top;
        let rank = s.iter().take_while(|v| **v > threshold && top > 0.0).count();
        let floor = s.len() as f64 * f64::EPSILON * top;
        let gap_ratio = match rank {
            0 => 0.0,
            r if r == s.len() => s[r - 1] / floor,
            r => s[r - 1] / s[r].max(f64::MIN_POSITIVE),
        };
        Self {
            variant,
            singular_values: s,
            rank,
            expected_rank: variant.expected_rank(),
            gap_ratio,
            tolerance: RANK_RELATIVE_TOLERANCE,
            epsilon,
            excitations,
        }
    }

    pub fn is_conclusive(&self) -> bool {
        self.gap_ratio > REQUIRED_GAP
    }

    /// The report, or an error when the spectrum has no clear gap.
    pub fn conclusive(self) -> Result<Self> {
        if self.is_conclusive() {
            Ok(self)
        } else {
            Err(Error::InconclusiveRank {
                gap: self.gap_ratio,
                required: REQUIRED_GAP,
            })
        }
    }

    pub fn matches_expected(&self) -> bool {
        self.expected_rank == Some(self.rank)
    }
}

/// Gramian averaged over `excitations` random input sequences.
pub fn empirical_gramian_rank(
    variant: SystemVariant,
    nominal: &NominalState,
    cfg: &ExcitationConfig,
    eps: f64,
    excitations: usize,
    seed: u64,
) -> Result<RankReport> {
    if excitations == 0 {
        return Err(Error::InvalidArgument("at least one excitation required".into()));
    }
    let x0 = nominal.state_vector(variant.state);
    let n = variant.state_dim();
    let parts: Vec<DMatrix<f64>> = (0..excitations)
        .into_par_iter()
        .map(|e| {
            let exc = generate_excitation(nominal, cfg, seed.wrapping_add(e as u64))?;
            let inputs = match variant.state {
                StateModel::Unbiased20 => exc.blocks,
                StateModel::Biased22 => exc.measured(&nominal.biases),
            };
            empirical_gramian(&variant, &x0, &inputs, cfg, eps)
        })
        .collect::<Result<_>>()?;
    let mut g = DMatrix::zeros(n, n);
    for p in &parts {
        g += p;
    }
    g /= excitations as f64;
    Ok(RankReport::from_gramian(variant, &g, eps, excitations))
}

/// Largest output difference between two initial states under the same inputs.
pub fn output_divergence(
    variant: &SystemVariant,
    xa: &DVector<f64>,
    xb: &DVector<f64>,
    inputs: &[InputBlock],
    cfg: &ExcitationConfig,
) -> Result<f64> {
    let ya = propagate_variant(variant, xa, inputs, cfg)?;
    let yb = propagate_variant(variant, xb, inputs, cfg)?;
    Ok(ya.y.iter().zip(&yb.y).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_to_rot;

    fn one_cam() -> SystemVariant {
        SystemVariant::new(StateModel::Biased22, OutputModel::OneCamera, true)
    }

    fn two_cams_global() -> SystemVariant {
        SystemVariant::new(StateModel::Unbiased20, OutputModel::TwoCameras, true)
    }

    #[test]
    fn dimensions_and_expectations() {
        assert_eq!(one_cam().state_dim(), 22);
        assert_eq!(one_cam().output_dim(), 3);
        assert_eq!(two_cams_global().output_dim(), 6);
        let az = SystemVariant::new(StateModel::Biased22, OutputModel::AzimuthOnly, true);
        assert_eq!(az.output_dim(), 2);
        assert_eq!(az.expected_rank(), Some(22));
        assert_eq!(two_cams_global().expected_rank(), Some(11));
    }

    #[test]
    fn free_fall_keeps_bearing_constant() {
        let variant = SystemVariant::new(StateModel::Biased22, OutputModel::OneCamera, true);
        let mut x0 = DVector::zeros(22);
        x0[2] = 1.0;
        x0[6] = 1.0;
        let inputs = vec![
            InputBlock {
                omega1: V3::zeros(),
                accel1: V3::zeros(),
                omega2: V3::zeros(),
                accel2: V3::zeros(),
            };
            20
        ];
        let traj = propagate_variant(&variant, &x0, &inputs, &ExcitationConfig::default()).unwrap();
        for y in &traj.y {
            assert_eq!(y[0], 0.0);
            assert_eq!(y[1], 0.0);
            assert!((y[2] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_bias_dynamics_match_relative_equations() {
        // independent form: Ṙ = −Ω1×R + V, V̇ = −Ω1×V + O A2 − A1, Ȯ = O[Ω2]× − [Ω1]× O
        let nominal = NominalState::generic(3);
        let (r, v, q) = nominal.global.relative();
        let mut x = DVector::zeros(22);
        x.rows_mut(0, 3).copy_from(&r);
        x.rows_mut(3, 3).copy_from(&v);
        x.rows_mut(6, 4).copy_from_slice(&q.to_array());
        let u = InputBlock {
            omega1: V3::new(0.3, -0.2, 0.5),
            accel1: V3::new(0.1, 9.0, 2.0),
            omega2: V3::new(-0.4, 0.1, 0.2),
            accel2: V3::new(1.0, -2.0, 9.5),
        };
        let d = biased_rhs(&x, &u);
        let o = *quat_to_rot(&q).unwrap().matrix();
        let dr = -u.omega1.cross(&r) + v;
        let dv = -u.omega1.cross(&v) + o * u.accel2 - u.accel1;
        assert!((d.rows(0, 3) - dr).amax() < 1e-12);
        assert!((d.rows(3, 3) - dv).amax() < 1e-12);
        // Ȯ from q̇ through the product rule on quat_to_rot
        let dq = Q::new(d[6], d[7], d[8], d[9]);
        let o_dot_from_q = |q: &Q, dq: &Q| {
            let h = 1e-7;
            let plus = crate::geometry::quat_to_matrix_raw(&q.add(&dq.scale(h)));
            let minus = crate::geometry::quat_to_matrix_raw(&q.add(&dq.scale(-h)));
            (plus - minus) / (2.0 * h)
        };
        let expected = o * u.omega2.cross_matrix() - u.omega1.cross_matrix() * o;
        assert!((o_dot_from_q(&q, &dq) - expected).amax() < 1e-6);
        assert!(d.rows(10, 12).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn biased_and_global_models_agree_without_bias() {
        let mut nominal = NominalState::generic(5);
        nominal.biases = Biases::default();
        let cfg = ExcitationConfig::default();
        let exc = generate_excitation(&nominal, &cfg, 1).unwrap();
        let g = propagate_variant(
            &SystemVariant::new(StateModel::Unbiased20, OutputModel::TwoCameras, false),
            &nominal.state_vector(StateModel::Unbiased20),
            &exc.blocks,
            &cfg,
        )
        .unwrap();
        let b = propagate_variant(
            &SystemVariant::new(StateModel::Biased22, OutputModel::TwoCameras, false),
            &nominal.state_vector(StateModel::Biased22),
            &exc.blocks,
            &cfg,
        )
        .unwrap();
        let worst = g.y.iter().zip(&b.y).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn quaternion_norm_output_is_constant() {
        let nominal = NominalState::generic(2);
        let cfg = ExcitationConfig::default();
        let exc = generate_excitation(&nominal, &cfg, 4).unwrap();
        let traj = propagate_variant(
            &two_cams_global(),
            &nominal.state_vector(StateModel::Unbiased20),
            &exc.blocks,
            &cfg,
        )
        .unwrap();
        for y in &traj.y {
            assert!((y[4] - 1.0).abs() < 1e-10 && (y[5] - 1.0).abs() < 1e-10);
        }
        assert!(traj.min_axis_cosine >= cfg.min_axis_cosine);
    }

    #[test]
    fn symmetries_leave_outputs_unchanged() {
        let nominal = NominalState::generic(7);
        let cfg = ExcitationConfig::default();
        let exc = generate_excitation(&nominal, &cfg, 2).unwrap();
        let v = two_cams_global();
        let x = nominal.global.to_vector();
        let moved = nominal.global.translated(&V3::new(5.0, 5.0, 5.0)).to_vector();
        assert!(output_divergence(&v, &x, &moved, &exc.blocks, &cfg).unwrap() < 1e-9);
        let turned = nominal.global.rotated_about_gravity(1.1).to_vector();
        assert!(output_divergence(&v, &x, &turned, &exc.blocks, &cfg).unwrap() < 1e-9);
        let scaled = nominal.global.with_scaled_separation(2.0).to_vector();
        assert!(output_divergence(&v, &x, &scaled, &exc.blocks, &cfg).unwrap() > 1e-3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let cfg = ExcitationConfig::default();
        let v = one_cam();
        let x = DVector::zeros(20);
        assert!(propagate_variant(&v, &x, &[], &cfg).is_err());
        let bad = ExcitationConfig { horizon: 5.0, ..cfg };
        assert!(bad.validate().is_err());
        let nominal = NominalState::generic(1);
        assert!(empirical_gramian_rank(v, &nominal, &cfg, 1e-2, 1, 0).is_err());
        assert!(empirical_gramian_rank(v, &nominal, &cfg, 1e-5, 0, 0).is_err());
    }

    #[test]
    fn rank_report_on_known_spectra() {
        // orthonormal Hadamard basis: constant diagonal, so equilibration
        // only rescales the spectrum
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0,
            ],
        ) * 0.5;
        let with = |s: [f64; 4]| &h * DMatrix::from_diagonal(&DVector::from_row_slice(&s)) * h.transpose();
        let v = one_cam();
        let r = RankReport::from_gramian(v, &with([4.0, 2.0, 1e-12, 1e-13]), 1e-5, 1);
        assert_eq!(r.rank, 2);
        assert!((r.gap_ratio / 2e12 - 1.0).abs() < 1e-3);
        assert!(r.is_conclusive());
        let r = RankReport::from_gramian(v, &with([1.0, 1e-5, 1e-7, 1e-8]), 1e-5, 1);
        assert_eq!(r.rank, 2);
        assert!(!r.is_conclusive());
        assert!(matches!(r.conclusive(), Err(Error::InconclusiveRank { .. })));
        let r = RankReport::from_gramian(v, &with([1.0, 0.5, 0.1, 1e-3]), 1e-5, 1);
        assert_eq!(r.rank, 4);
        let floor = 4.0 * f64::EPSILON;
        assert!((r.gap_ratio * floor / 1e-3 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rank_ignores_state_units() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = &b * b.transpose();
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[1e3, 1.0, 1e-3]));
        let scaled = &s * &g * &s;
        let a = RankReport::from_gramian(one_cam(), &g, 1e-5, 1);
        let c = RankReport::from_gramian(one_cam(), &scaled, 1e-5, 1);
        assert_eq!(a.rank, 2);
        assert_eq!(c.rank, 2);
        for (x, y) in a.singular_values.iter().zip(&c.singular_values).take(2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ranks_match_expected_counts() {
        let nominal = NominalState::generic(11);
        let cfg = ExcitationConfig::default();
        for variant in [
            one_cam(),
            SystemVariant::new(StateModel::Biased22, OutputModel::AzimuthOnly, true),
            two_cams_global(),
        ] {
            for eps in [1e-5, 1e-4] {
                let r = empirical_gramian_rank(variant, &nominal, &cfg, eps, DEFAULT_EXCITATIONS, 100).unwrap();
                assert!(
                    r.matches_expected(),
                    "{variant:?}: rank {} spectrum {:?}",
                    r.rank,
                    r.singular_values
                );
                assert!(r.is_conclusive(), "{variant:?}: gap {}", r.gap_ratio);
            }
        }
    }
}
