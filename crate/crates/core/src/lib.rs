//! Closed-form initialization for two cooperating visual-inertial agents.
//!
//! Two agents each carry an IMU and a monocular camera that sees the other
//! agent as a bearing. From a few seconds of data this crate recovers the
//! relative position, velocity and orientation of the agents, the inter-agent
//! distances (absolute scale) and the gyro biases, with no initial guess.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: quaternion / rotation kernel
//! - [`simulation`]: random two-agent trajectories and noisy sensor streams
//! - [`preintegration`]: attitude and double-integrated acceleration over a window
//! - [`solver`]: the `Ξ x = b` system, single or synchronized dual camera
//! - [`calibration`]: gyro bias by residual minimization
//! - [`observability`]: empirical observability Gramian rank checks
//! - [`harness`]: Monte-Carlo trials, sweeps, error metrics
//!
//! The numeric kernels are generic over [`Real`] (`f32` / `f64`); the aliases
//! below fix `f64`.

// `!(a > b)` is used on purpose: it is also true when either side is NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod observability;
pub mod preintegration;
pub mod scalar;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};
pub use preintegration::CameraMode;
pub use scalar::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type Mat3 = geometry::Mat3<f64>;
pub type Quat = geometry::Quat<f64>;
pub type Rot3 = geometry::Rot3<f64>;
pub type Window = preintegration::Window<f64>;
pub type PreintegratedEpoch = preintegration::PreintegratedEpoch<f64>;
pub type ClosedFormProblem = solver::ClosedFormProblem<f64>;
pub type ClosedFormEstimate = solver::ClosedFormEstimate<f64>;
pub type CalibrationResult = calibration::CalibrationResult<f64>;
pub type BiasVector = calibration::BiasVector<f64>;
