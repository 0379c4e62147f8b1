//! Gyro bias calibration by minimizing the closed-form residual.
//!
//! `cost(B) = ‖Ξ(B) x − b(B)‖²` at the least-squares `x`, where `Ξ(B)` and
//! `b(B)` are rebuilt from gyro streams with `B = (B_Ω¹, B_Ω²)` removed. The
//! cost has no convenient gradient, so a Nelder–Mead simplex searches ℝ⁶
//! from `B = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::preintegration::Window;
use crate::scalar::Real;
use crate::solver::{solve_window, ClosedFormEstimate};

/// Gyro biases of both agents, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasVector<T: Real> {
    pub gyro1: Vec3<T>,
    pub gyro2: Vec3<T>,
}

impl<T: Real> BiasVector<T> {
    pub fn zeros() -> Self {
        Self {
            gyro1: Vec3::zeros(),
            gyro2: Vec3::zeros(),
        }
    }

    pub fn new(gyro1: Vec3<T>, gyro2: Vec3<T>) -> Self {
        Self { gyro1, gyro2 }
    }

    pub fn to_array(&self) -> [T; 6] {
        let (a, b) = (self.gyro1, self.gyro2);
        [a.x, a.y, a.z, b.x, b.y, b.z]
    }

    pub fn from_array(v: [T; 6]) -> Self {
        Self {
            gyro1: Vec3::new(v[0], v[1], v[2]),
            gyro2: Vec3::new(v[3], v[4], v[5]),
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> T {
        self.gyro1.amax().max(self.gyro2.amax())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Components in deg/s.
    pub fn to_degrees(&self) -> [f64; 6] {
        self.to_array().map(|v| v.to_f64_lossy().to_degrees())
    }
}

/// Optimizer settings. Angular quantities in deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost spread over the simplex falls below this.
    pub tolerance: f64,
    /// Or when every vertex is within this of the best one, deg/s.
    pub x_tolerance_dps: f64,
    pub simplex_scale_dps: f64,
    pub bound_dps: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 800,
            tolerance: 1e-12,
            x_tolerance_dps: 1e-6,
            simplex_scale_dps: 0.2,
            bound_dps: 5.0,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.tolerance >= 0.0
            && self.x_tolerance_dps >= 0.0
            && self.simplex_scale_dps > 0.0
            && self.bound_dps > 0.0
            && self.simplex_scale_dps.is_finite()
            && self.bound_dps.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad calibration options {self:?}")))
        }
    }
}

/// `‖Ξ x − b‖²` with both gyro streams debiased by `bias`.
///
/// A rank-deficient system yields `+∞` so the optimizer steps away from it.
pub fn residual_cost<T: Real>(bias: &BiasVector<T>, window: &Window<T>) -> Result<T> {
    if !bias.is_finite() {
        return Err(Error::NonFinite("bias vector".into()));
    }
    match solve_window(&window.debiased(&bias.gyro1, &bias.gyro2)) {
        Ok(s) => Ok(s.solution.residual_norm * s.solution.residual_norm),
        Err(Error::DegenerateMotion { rank, unknowns }) => {
            log::debug!(
                "degenerate system (rank {rank} of {unknowns}) at bias {:?}",
                bias.to_degrees()
            );
            Ok(T::infinity())
        }
        Err(e) => Err(e),
    }
}

/// One accepted simplex state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult<T: Real> {
    pub bias: BiasVector<T>,
    /// Closed-form solution with `bias` removed.
    pub estimate: ClosedFormEstimate<T>,
    pub cost: T,
    pub initial_cost: T,
    /// Best cost after each iteration.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Some component of the best point sat on the bound.
    pub clipped: bool,
}

struct Objective<'a, T: Real> {
    window: &'a Window<T>,
    bound: T,
    evaluations: usize,
    clipped: bool,
}

impl<T: Real> Objective<'_, T> {
    fn clip(&mut self, p: [T; 6]) -> [T; 6] {
        p.map(|v| {
            if v.abs() > self.bound {
                self.clipped = true;
                v.signum() * self.bound
            } else {
                v
            }
        })
    }

    fn eval(&mut self, p: &[T; 6]) -> Result<T> {
        self.evaluations += 1;
        residual_cost(&BiasVector::from_array(*p), self.window)
    }
}

fn centroid<T: Real>(pts: &[[T; 6]]) -> [T; 6] {
    let mut c = [T::zero(); 6];
    for p in pts {
        for i in 0..6 {
            c[i] += p[i];
        }
    }
    let n = T::lit(pts.len() as f64);
    c.map(|v| v / n)
}

/// `c + t (p − c)`.
fn along<T: Real>(c: &[T; 6], p: &[T; 6], t: T) -> [T; 6] {
    let mut out = [T::zero(); 6];
    for i in 0..6 {
        out[i] = c[i] + t * (p[i] - c[i]);
    }
    out
}

/// Minimizes [`residual_cost`] from `B = 0` and returns the best point seen.
pub fn estimate_gyro_bias<T: Real>(window: &Window<T>, options: &CalibrationOptions) -> Result<CalibrationResult<T>> {
    options.validate()?;
    let step = T::lit(options.simplex_scale_dps.to_radians());
    let mut obj = Objective {
        window,
        bound: T::lit(options.bound_dps.to_radians()),
        evaluations: 0,
        clipped: false,
    };

    let origin = [T::zero(); 6];
    let initial_cost = obj.eval(&origin)?;
    if !initial_cost.is_finite() {
        // no usable closed form at zero bias, nothing to improve on
        return Err(Error::DegenerateMotion { rank: 0, unknowns: 0 });
    }
    let mut simplex: Vec<([T; 6], T)> = vec![(origin, initial_cost)];
    for i in 0..6 {
        let mut p = origin;
        p[i] = step;
        let f = obj.eval(&p)?;
        simplex.push((p, f));
    }

    // adaptive coefficients for dimension 6
    let dim = T::lit(6.0);
    let (alpha, gamma) = (T::one(), T::one() + T::lit(2.0) / dim);
    let rho = T::lit(0.75) - T::one() / (T::lit(2.0) * dim);
    let sigma = T::one() - T::one() / dim;
    let tol = T::lit(options.tolerance);
    let x_tol = T::lit(options.x_tolerance_dps.to_radians());

    let mut trace = Vec::with_capacity(options.max_iterations);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[6].1;
        let x0 = simplex[0].0;
        let spread = simplex[1..]
            .iter()
            .flat_map(|s| s.0.iter().zip(&x0).map(|(a, b)| (*a - *b).abs()))
            .fold(T::zero(), |a, b| a.max(b));
        if (worst - best).abs() <= tol * (best.abs() + worst.abs()) || spread <= x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let pts: Vec<[T; 6]> = simplex[..6].iter().map(|s| s.0).collect();
        let c = centroid(&pts);
        let (xw, fw) = simplex[6];
        let fs = simplex[5].1;

        let xr = obj.clip(along(&c, &xw, -alpha));
        let fr = obj.eval(&xr)?;
        if fr < best {
            let xe = obj.clip(along(&c, &xw, -alpha * gamma));
            let fe = obj.eval(&xe)?;
            simplex[6] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < fs {
            simplex[6] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fw {
                let xc = along(&c, &xr, rho);
                (xc, obj.eval(&xc)?)
            } else {
                let xc = along(&c, &xw, rho);
                (xc, obj.eval(&xc)?)
            };
            if fc < fr.min(fw) {
                simplex[6] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    let p = along(&x0, &s.0, sigma);
                    *s = (p, obj.eval(&p)?);
                }
            }
        }
        let best_now = simplex.iter().map(|s| s.1).fold(T::infinity(), |a, b| a.min(b));
        trace.push(TraceEntry {
            iteration: iterations,
            cost: best_now.to_f64_lossy(),
        });
    }

    let (bx, bf) = simplex
        .iter()
        .copied()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("simplex has seven points");
    let (bias, cost) = if bf <= initial_cost {
        (BiasVector::from_array(bx), bf)
    } else {
        (BiasVector::zeros(), initial_cost)
    };
    let on_bound = bias.max_abs() >= obj.bound;
    if on_bound {
        log::warn!("gyro bias estimate clipped at ±{} deg/s", options.bound_dps);
    }
    if !converged {
        log::debug!("calibration stopped after {iterations} iterations without converging");
    }
    let solved = solve_window(&window.debiased(&bias.gyro1, &bias.gyro2))?;
    let mut estimate = solved.estimate;
    estimate.residual_norm = solved.solution.residual_norm;
    estimate.condition = solved.solution.condition;
    Ok(CalibrationResult {
        bias,
        estimate,
        cost,
        initial_cost,
        trace,
        iterations,
        evaluations: obj.evaluations,
        converged,
        clipped: on_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preintegration::CameraMode;
    use crate::simulation::{simulate, SimConfig, SimulatedTrial};

    fn dps(v: f64) -> f64 {
        v.to_radians()
    }

    /// `noiseless = false` keeps the default IMU noise but exact bearings.
    fn biased_trial(seed: u64, b: f64, noiseless: bool) -> SimulatedTrial {
        let mut cfg = if noiseless {
            SimConfig::noiseless()
        } else {
            SimConfig {
                bearing_noise_var_deg2: 0.0,
                ..SimConfig::default()
            }
        };
        cfg.seed = seed;
        cfg.biases.gyro1 = Vec3::new(dps(b), dps(b), dps(b));
        cfg.biases.gyro2 = Vec3::new(dps(b), dps(b), dps(b));
        simulate(&cfg).unwrap()
    }

    fn true_bias(trial: &SimulatedTrial) -> BiasVector<f64> {
        BiasVector::new(trial.config.biases.gyro1, trial.config.biases.gyro2)
    }

    #[test]
    fn bias_vector_layout() {
        let b = BiasVector::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, -6.0));
        assert_eq!(b.to_array(), [1.0, 2.0, 3.0, 4.0, 5.0, -6.0]);
        assert_eq!(BiasVector::from_array(b.to_array()), b);
        assert_eq!(b.max_abs(), 6.0);
    }

    #[test]
    fn cost_vanishes_at_truth() {
        let clean = biased_trial(2, 0.0, true);
        let w = Window::<f64>::from_trial(&clean, 0.0, 4.0, CameraMode::SingleCamera).unwrap();
        assert!(residual_cost(&BiasVector::zeros(), &w).unwrap() < 1e-14);

        let trial = biased_trial(2, 1.0, true);
        for mode in [CameraMode::SingleCamera, CameraMode::DualSynchronized] {
            let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, mode).unwrap();
            let at_truth = residual_cost(&true_bias(&trial), &w).unwrap();
            let at_zero = residual_cost(&BiasVector::zeros(), &w).unwrap();
            assert!(at_truth < 1e-14, "{mode}: {at_truth}");
            assert!(at_zero > at_truth);
        }
    }

    #[test]
    fn noisy_cost_has_a_minimum_near_truth_on_each_axis() {
        let trial = biased_trial(4, 1.0, false);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::DualSynchronized).unwrap();
        let truth = true_bias(&trial).to_array();
        for axis in 0..6 {
            let costs: Vec<f64> = (-8..=8)
                .map(|k| {
                    let mut p = truth;
                    p[axis] += dps(0.25 * k as f64);
                    residual_cost(&BiasVector::from_array(p), &w).unwrap()
                })
                .collect();
            let (imin, _) = costs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            assert!(imin > 0 && imin < costs.len() - 1, "axis {axis}: {costs:?}");
        }
    }

    #[test]
    fn recovers_injected_bias_noiseless() {
        let trial = biased_trial(5, 1.0, true);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::DualSynchronized).unwrap();
        let r = estimate_gyro_bias(&w, &CalibrationOptions::default()).unwrap();
        let err = r.bias.to_degrees().iter().map(|b| (b - 1.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err} deg/s after {} iterations", r.iterations);
        assert!(r.cost <= r.initial_cost + 1e-12);
        assert!(!r.clipped);
    }

    #[test]
    fn trace_is_monotone_and_cost_never_worse() {
        let trial = biased_trial(6, 0.5, false);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::SingleCamera).unwrap();
        let r = estimate_gyro_bias(&w, &CalibrationOptions::default()).unwrap();
        assert!(r.cost <= r.initial_cost + 1e-12);
        assert!(r.trace.windows(2).all(|p| p[1].cost <= p[0].cost));
        assert_eq!(r.trace.len(), r.iterations);
        let again = residual_cost(&r.bias, &w).unwrap();
        assert!((again - r.cost).abs() <= 1e-12 * r.cost.max(1.0));
    }

    #[test]
    fn zero_bias_noisy_stays_near_zero() {
        let trial = biased_trial(7, 0.0, false);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::DualSynchronized).unwrap();
        let r = estimate_gyro_bias(&w, &CalibrationOptions::default()).unwrap();
        assert!(
            r.bias.to_degrees().iter().all(|b| b.abs() < 0.3),
            "{:?}",
            r.bias.to_degrees()
        );
    }

    #[test]
    fn budget_and_bound_are_respected() {
        let trial = biased_trial(8, 2.0, true);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::DualSynchronized).unwrap();
        let opts = CalibrationOptions {
            max_iterations: 3,
            ..Default::default()
        };
        let r = estimate_gyro_bias(&w, &opts).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(!r.converged);

        let opts = CalibrationOptions {
            bound_dps: 0.5,
            ..Default::default()
        };
        let r = estimate_gyro_bias(&w, &opts).unwrap();
        assert!(r.bias.max_abs() <= dps(0.5) + 1e-15);
        assert!(r.clipped);
    }

    #[test]
    fn options_validation() {
        assert!(CalibrationOptions::default().validate().is_ok());
        let bad = CalibrationOptions {
            simplex_scale_dps: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let trial = biased_trial(9, 0.0, true);
        let w = Window::<f64>::from_trial(&trial, 0.0, 4.0, CameraMode::SingleCamera).unwrap();
        assert!(estimate_gyro_bias(&w, &bad).is_err());
        let nan = BiasVector::from_array([f64::NAN; 6]);
        assert!(matches!(residual_cost(&nan, &w), Err(Error::NonFinite(_))));
    }
}
