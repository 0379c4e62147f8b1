//! The closed-form linear system `Ξ x = b` and its solution.
//!
//! With `ξ(t)` the position of agent 2 in agent 1's frame frozen at `t_A`:
//!
//! ```text
//! λ_j μ_j = ξ_A + η_A Δ_j + O_A β²_j − β¹_j
//! ```
//!
//! which is linear in `ξ_A = R_A`, `η_A = V_A`, the nine entries of `O_A` and
//! the distances `λ_j`. With a synchronized second camera, the same identity
//! seen from agent 2's frozen frame adds
//!
//! ```text
//! λ_j ν_j = ξ'_A + η'_A Δ_j + O_Aᵀ β¹_j − β²_j,   ξ'_A = −O_Aᵀ R_A,  η'_A = −O_Aᵀ V_A
//! ```
//!
//! Unknown layout (single): `[R_A, V_A, vec(O_A), λ_1..λ_n]`, dual:
//! `[R_A, V_A, ξ'_A, η'_A, vec(O_A), λ_1..λ_n]`, where `vec` stacks columns.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{orthonormality_defect, project_to_so3, Mat3, Rot3, Vec3};
use crate::linalg::{lstsq, RANK_TOLERANCE};
use crate::preintegration::{preintegrate, CameraMode, PreintegratedEpoch, PreintegratedWindow, Window};
use crate::scalar::Real;

/// Where each physical quantity lives inside `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownLayout {
    pub mode: CameraMode,
    pub epochs: usize,
}

impl UnknownLayout {
    pub fn new(mode: CameraMode, epochs: usize) -> Self {
        Self { mode, epochs }
    }

    fn fixed(&self) -> usize {
        match self.mode {
            CameraMode::SingleCamera => 15,
            CameraMode::DualSynchronized => 21,
        }
    }

    pub fn unknowns(&self) -> usize {
        self.fixed() + self.epochs
    }

    pub fn equations(&self) -> usize {
        match self.mode {
            CameraMode::SingleCamera => 3 * self.epochs,
            CameraMode::DualSynchronized => 6 * self.epochs,
        }
    }

    pub fn r_a(&self) -> Range<usize> {
        0..3
    }

    pub fn v_a(&self) -> Range<usize> {
        3..6
    }

    /// `−O_Aᵀ R_A` (dual only).
    pub fn frozen_r_a(&self) -> Option<Range<usize>> {
        (self.mode == CameraMode::DualSynchronized).then_some(6..9)
    }

    /// `−O_Aᵀ V_A` (dual only).
    pub fn frozen_v_a(&self) -> Option<Range<usize>> {
        (self.mode == CameraMode::DualSynchronized).then_some(9..12)
    }

    /// Column-major entries of `O_A`.
    pub fn o_a(&self) -> Range<usize> {
        let s = self.fixed() - 9;
        s..s + 9
    }

    pub fn lambda(&self, j: usize) -> usize {
        self.fixed() + j
    }

    /// Fewest epochs giving at least as many equations as unknowns.
    pub fn min_epochs(mode: CameraMode) -> usize {
        match mode {
            CameraMode::SingleCamera => 8,
            CameraMode::DualSynchronized => 5,
        }
    }
}

/// `Ξ`, `b` and the layout of `x`.
#[derive(Debug, Clone)]
pub struct ClosedFormProblem<T: Real> {
    pub layout: UnknownLayout,
    pub xi: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Real> ClosedFormProblem<T> {
    pub fn mode(&self) -> CameraMode {
        self.layout.mode
    }

    pub fn epochs(&self) -> usize {
        self.layout.epochs
    }

    /// `‖Ξ x − b‖₂`.
    pub fn residual_norm(&self, x: &DVector<T>) -> T {
        (&self.xi * x - &self.b).norm()
    }
}

fn check_epochs<T: Real>(epochs: &[PreintegratedEpoch<T>]) -> Result<()> {
    if epochs.len() < 2 {
        return Err(Error::InsufficientEpochs {
            required: 2,
            actual: epochs.len(),
        });
    }
    if epochs[0].delta != T::zero() {
        return Err(Error::NonIncreasingEpochs { index: 0 });
    }
    for (i, w) in epochs.windows(2).enumerate() {
        if !(w[1].delta > w[0].delta) {
            return Err(Error::NonIncreasingEpochs { index: i + 1 });
        }
    }
    Ok(())
}

/// Writes `s · I₃` at `(row, col)`.
fn put_scaled_identity<T: Real>(m: &mut DMatrix<T>, row: usize, col: usize, s: T) {
    for i in 0..3 {
        m[(row + i, col + i)] = s;
    }
}

fn put_vector<T: Real>(m: &mut DMatrix<T>, row: usize, col: usize, v: &Vec3<T>) {
    for i in 0..3 {
        m[(row + i, col)] = v[i];
    }
}

/// Block row `R_A + V_A Δ + O_A β² − λ μ = β¹`.
fn fill_mu_rows<T: Real>(
    xi: &mut DMatrix<T>,
    b: &mut DVector<T>,
    row: usize,
    layout: &UnknownLayout,
    j: usize,
    e: &PreintegratedEpoch<T>,
) {
    put_scaled_identity(xi, row, layout.r_a().start, T::one());
    put_scaled_identity(xi, row, layout.v_a().start, e.delta);
    let o = layout.o_a().start;
    for c in 0..3 {
        put_scaled_identity(xi, row, o + 3 * c, e.beta2[c]);
    }
    put_vector(xi, row, layout.lambda(j), &(-e.mu));
    b.rows_mut(row, 3).copy_from(&e.beta1);
}

/// Assembles the single-camera system (`3n × (15+n)`).
pub fn assemble_single<T: Real>(epochs: &[PreintegratedEpoch<T>]) -> Result<ClosedFormProblem<T>> {
    check_epochs(epochs)?;
    let layout = UnknownLayout::new(CameraMode::SingleCamera, epochs.len());
    let mut xi = DMatrix::zeros(layout.equations(), layout.unknowns());
    let mut b = DVector::zeros(layout.equations());
    for (j, e) in epochs.iter().enumerate() {
        fill_mu_rows(&mut xi, &mut b, 3 * j, &layout, j, e);
    }
    Ok(ClosedFormProblem { layout, xi, b })
}

/// Assembles the synchronized two-camera system (`6n × (21+n)`), μ- and
/// ν-rows interleaved per epoch.
pub fn assemble_dual<T: Real>(epochs: &[PreintegratedEpoch<T>]) -> Result<ClosedFormProblem<T>> {
    check_epochs(epochs)?;
    let layout = UnknownLayout::new(CameraMode::DualSynchronized, epochs.len());
    let mut xi = DMatrix::zeros(layout.equations(), layout.unknowns());
    let mut b = DVector::zeros(layout.equations());
    let r2 = layout.frozen_r_a().expect("dual layout").start;
    let v2 = layout.frozen_v_a().expect("dual layout").start;
    let o = layout.o_a().start;
    for (j, e) in epochs.iter().enumerate() {
        let nu = e.nu.as_ref().ok_or(Error::Unsynchronized {
            index: j,
            t1: e.t.to_f64_lossy(),
            t2: f64::NAN,
        })?;
        let row = 6 * j;
        fill_mu_rows(&mut xi, &mut b, row, &layout, j, e);

        // ξ'_A + η'_A Δ + O_Aᵀ β¹ − λ ν = β²
        let row = row + 3;
        put_scaled_identity(&mut xi, row, r2, T::one());
        put_scaled_identity(&mut xi, row, v2, e.delta);
        // (O_Aᵀ β¹)_k = w_kᵀ β¹: column w_k only feeds row k ("up/center/down")
        for k in 0..3 {
            for i in 0..3 {
                xi[(row + k, o + 3 * k + i)] = e.beta1[i];
            }
        }
        put_vector(&mut xi, row, layout.lambda(j), &(-*nu));
        b.rows_mut(row, 3).copy_from(&e.beta2);
    }
    Ok(ClosedFormProblem { layout, xi, b })
}

/// Assembles the system matching the window's camera mode.
pub fn assemble<T: Real>(pre: &PreintegratedWindow<T>) -> Result<ClosedFormProblem<T>> {
    match pre.mode {
        CameraMode::SingleCamera => assemble_single(&pre.epochs),
        CameraMode::DualSynchronized => assemble_dual(&pre.epochs),
    }
}

/// Least-squares solution of a [`ClosedFormProblem`].
#[derive(Debug, Clone)]
pub struct Solution<T: Real> {
    pub x: DVector<T>,
    pub residual_norm: T,
    pub rank: usize,
    /// `|R_00| / |R_rr|` of the pivoted QR factor.
    pub condition: T,
}

/// Solves `min ‖Ξ x − b‖²` by pivoted Householder QR.
pub fn solve_least_squares<T: Real>(p: &ClosedFormProblem<T>) -> Result<Solution<T>> {
    let required = UnknownLayout::min_epochs(p.mode());
    if p.epochs() < required {
        return Err(Error::InsufficientEpochs {
            required,
            actual: p.epochs(),
        });
    }
    let ls = lstsq(&p.xi, &p.b, T::lit(RANK_TOLERANCE));
    if !ls.is_full_rank() {
        return Err(Error::DegenerateMotion {
            rank: ls.rank,
            unknowns: p.layout.unknowns(),
        });
    }
    Ok(Solution {
        residual_norm: ls.residual_norm,
        rank: ls.rank,
        condition: ls.condition,
        x: ls.x,
    })
}

/// Physical quantities decoded from `x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormEstimate<T: Real> {
    pub mode: CameraMode,
    /// m, agent 1's frame at `t_A`.
    pub r_a: Vec3<T>,
    /// m/s.
    pub v_a: Vec3<T>,
    /// Unconstrained least-squares `O_A`.
    pub o_a_raw: Mat3<T>,
    /// Nearest rotation to `o_a_raw`.
    pub o_a: Rot3<T>,
    /// Distances at each epoch, m.
    pub lambdas: Vec<T>,
    /// `−O_Aᵀ R_A` and `−O_Aᵀ V_A` as solved (dual only).
    pub frozen_r_a: Option<Vec3<T>>,
    pub frozen_v_a: Option<Vec3<T>>,
    pub residual_norm: T,
    pub condition: T,
    /// `‖O_rawᵀ O_raw − I‖_F`.
    pub orthonormality_defect: T,
    /// Epoch indices with a non-positive distance.
    pub negative_lambdas: Vec<usize>,
}

fn slice3<T: Real>(x: &DVector<T>, r: Range<usize>) -> Vec3<T> {
    Vec3::new(x[r.start], x[r.start + 1], x[r.start + 2])
}

/// Decodes `x`, projecting `O_A` onto SO(3).
pub fn extract_estimate<T: Real>(x: &DVector<T>, layout: &UnknownLayout) -> Result<ClosedFormEstimate<T>> {
    if x.len() != layout.unknowns() {
        return Err(Error::InvalidArgument(format!(
            "solution has {} entries, layout expects {}",
            x.len(),
            layout.unknowns()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("closed-form solution".into()));
    }
    let o = layout.o_a().start;
    let o_a_raw = Mat3::from_column_slice(&x.as_slice()[o..o + 9]);
    let o_a = project_to_so3(&o_a_raw)?;
    let lambdas: Vec<T> = (0..layout.epochs).map(|j| x[layout.lambda(j)]).collect();
    let negative_lambdas = lambdas
        .iter()
        .enumerate()
        .filter(|(_, l)| !(**l > T::zero()))
        .map(|(j, _)| j)
        .collect();
    Ok(ClosedFormEstimate {
        mode: layout.mode,
        r_a: slice3(x, layout.r_a()),
        v_a: slice3(x, layout.v_a()),
        o_a_raw,
        o_a,
        lambdas,
        frozen_r_a: layout.frozen_r_a().map(|r| slice3(x, r)),
        frozen_v_a: layout.frozen_v_a().map(|r| slice3(x, r)),
        residual_norm: T::zero(),
        condition: T::zero(),
        orthonormality_defect: orthonormality_defect(&o_a_raw),
        negative_lambdas,
    })
}

/// Builds `x` from physical quantities (inverse of [`extract_estimate`]).
pub fn encode_unknowns<T: Real>(
    layout: &UnknownLayout,
    r_a: &Vec3<T>,
    v_a: &Vec3<T>,
    o_a: &Mat3<T>,
    lambdas: &[T],
) -> DVector<T> {
    assert_eq!(lambdas.len(), layout.epochs);
    let mut x = DVector::zeros(layout.unknowns());
    x.rows_mut(0, 3).copy_from(r_a);
    x.rows_mut(3, 3).copy_from(v_a);
    if let (Some(r), Some(v)) = (layout.frozen_r_a(), layout.frozen_v_a()) {
        x.rows_mut(r.start, 3).copy_from(&(-(o_a.transpose() * r_a)));
        x.rows_mut(v.start, 3).copy_from(&(-(o_a.transpose() * v_a)));
    }
    let o = layout.o_a().start;
    x.rows_mut(o, 9).copy_from_slice(o_a.as_slice());
    for (j, l) in lambdas.iter().enumerate() {
        x[layout.lambda(j)] = *l;
    }
    x
}

/// Solution of one window: the problem, the raw `x` and the decoded estimate.
#[derive(Debug, Clone)]
pub struct WindowSolution<T: Real> {
    pub problem: ClosedFormProblem<T>,
    pub solution: Solution<T>,
    pub estimate: ClosedFormEstimate<T>,
}

/// Preintegrate, assemble, solve and decode.
pub fn solve_window<T: Real>(window: &Window<T>) -> Result<WindowSolution<T>> {
    let pre = preintegrate(window)?;
    let problem = assemble(&pre)?;
    let solution = solve_least_squares(&problem)?;
    let mut estimate = extract_estimate(&solution.x, &problem.layout)?;
    estimate.residual_norm = solution.residual_norm;
    estimate.condition = solution.condition;
    Ok(WindowSolution {
        problem,
        solution,
        estimate,
    })
}

/// `(Ξ, b, x, residual)` in plain arrays, for offline diffing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDump {
    pub mode: CameraMode,
    pub epochs: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub xi: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub residual: f64,
}

impl ProblemDump {
    pub fn new<T: Real>(p: &ClosedFormProblem<T>, s: &Solution<T>) -> Self {
        let f = |v: T| v.to_f64_lossy();
        Self {
            mode: p.mode(),
            epochs: p.epochs(),
            rows: p.xi.nrows(),
            cols: p.xi.ncols(),
            xi: p.xi.row_iter().map(|r| r.iter().copied().map(f).collect()).collect(),
            b: p.b.iter().copied().map(f).collect(),
            x: s.x.iter().copied().map(f).collect(),
            residual: f(s.residual_norm),
        }
    }
}
