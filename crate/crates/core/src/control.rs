//! Force observer, the PI force law on the master, the PID computed-torque
//! law on the slave reference, scaling, and the force clamp.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::master::MasterTerms;
use crate::scalar::{lit, Real};
use crate::slave::DynamicsMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("observer bandwidth·dt = {0} must be in (0, 1)")]
    ObserverUnstable(f64),
    #[error("time step must be positive")]
    InvalidStep,
    #[error("invalid gains: {0}")]
    InvalidGains(&'static str),
}

/// Diagonal force scale `S₁` (master ← slave) and motion scale `S₂`
/// (slave ← master), stored as diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ScalingMatrices<T: Real> {
    pub force: Vector3<T>,
    pub motion: Vector3<T>,
}

impl<T: Real> ScalingMatrices<T> {
    pub fn uniform(force: T, motion: T) -> Self {
        Self { force: Vector3::repeat(force), motion: Vector3::repeat(motion) }
    }

    pub fn identity() -> Self {
        Self::uniform(T::one(), T::one())
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.force.iter().chain(self.motion.iter()).all(|s| *s > T::zero() && s.is_finite()) {
            Ok(())
        } else {
            Err(ControlError::InvalidGains("scaling diagonals must be positive"))
        }
    }

    pub fn scale_force(&self, f: &Vector3<T>) -> Vector3<T> {
        self.force.component_mul(f)
    }

    pub fn scale_motion(&self, x: &Vector3<T>) -> Vector3<T> {
        self.motion.component_mul(x)
    }

    /// Diagonal inverse.
    pub fn inverse(&self) -> Self {
        Self { force: self.force.map(|s| T::one() / s), motion: self.motion.map(|s| T::one() / s) }
    }

    /// `other · self`.
    pub fn then(&self, other: &Self) -> Self {
        Self { force: other.force.component_mul(&self.force), motion: other.motion.component_mul(&self.motion) }
    }
}

impl Default for ScalingMatrices<f64> {
    fn default() -> Self {
        Self::uniform(1.0e6, 1.0e-3)
    }
}

/// Trapezoidal integrator with a freeze switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Integrator<T: Real> {
    pub integral: Vector3<T>,
    pub previous: Option<Vector3<T>>,
}

impl<T: Real> Default for Integrator<T> {
    fn default() -> Self {
        Self { integral: Vector3::zeros(), previous: None }
    }
}

impl<T: Real> Integrator<T> {
    /// Adds the trapezoid between the previous sample and `e`. When frozen the
    /// integral is left unchanged but the sample is still recorded.
    pub fn update(&mut self, e: &Vector3<T>, dt: T, frozen: bool) {
        if !frozen {
            if let Some(prev) = self.previous {
                self.integral += (prev + e) * (dt * lit(0.5));
            }
        }
        self.previous = Some(*e);
    }

    /// Backward difference of the recorded samples.
    pub fn rate(&self, e: &Vector3<T>, dt: T) -> Vector3<T> {
        self.previous.map_or_else(Vector3::zeros, |p| (e - p) / dt)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ForceGains<T: Real> {
    pub k_p: Matrix3<T>,
    pub k_i: Matrix3<T>,
    /// Velocity damping (N·s/m before scaling by `S₁`).
    pub k_damp: Matrix3<T>,
    /// Desired contact force (N).
    pub f_d: Vector3<T>,
    /// Force limit for the tissue (N).
    pub f_max: T,
    #[serde(skip)]
    pub state: Integrator<T>,
}

impl<T: Real> ForceGains<T> {
    pub fn validate(&self) -> Result<(), ControlError> {
        let nonneg = |m: &Matrix3<T>| m.iter().all(|x| *x >= T::zero());
        if !(nonneg(&self.k_p) && nonneg(&self.k_i) && nonneg(&self.k_damp)) {
            return Err(ControlError::InvalidGains("force gains must be entrywise non-negative"));
        }
        if !(self.f_max > T::zero()) {
            return Err(ControlError::InvalidGains("f_max must be positive"));
        }
        Ok(())
    }
}

impl Default for ForceGains<f64> {
    fn default() -> Self {
        Self {
            k_p: Matrix3::zeros(),
            k_i: Matrix3::zeros(),
            k_damp: Matrix3::identity() * 1.0e-6,
            f_d: Vector3::zeros(),
            f_max: 1.0e-5,
            state: Integrator::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct PositionGains<T: Real> {
    pub k_p: Matrix3<T>,
    pub k_i: Matrix3<T>,
    pub k_d: Matrix3<T>,
    #[serde(skip)]
    pub state: Integrator<T>,
}

impl<T: Real> PositionGains<T> {
    pub fn validate(&self) -> Result<(), ControlError> {
        if [self.k_p, self.k_i, self.k_d].iter().all(|m| m.iter().all(|x| *x >= T::zero())) {
            Ok(())
        } else {
            Err(ControlError::InvalidGains("position gains must be entrywise non-negative"))
        }
    }
}

impl Default for PositionGains<f64> {
    fn default() -> Self {
        Self {
            k_p: Matrix3::identity() * 1.0e4,
            k_i: Matrix3::zeros(),
            k_d: Matrix3::identity() * 500.0,
            state: Integrator::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ObserverState<T: Real> {
    pub bandwidth: T,
    /// Momentum integrated from the known forces plus the estimate
    /// (second-order mode only).
    #[serde(skip, default = "Vector3::zeros")]
    pub momentum: Vector3<T>,
    #[serde(skip, default = "Vector3::zeros")]
    pub estimate: Vector3<T>,
}

impl<T: Real> ObserverState<T> {
    pub fn new(bandwidth: T) -> Self {
        Self { bandwidth, momentum: Vector3::zeros(), estimate: Vector3::zeros() }
    }

    pub fn check(&self, dt: T) -> Result<(), ControlError> {
        let gain = self.bandwidth * dt;
        if !(dt > T::zero()) {
            return Err(ControlError::InvalidStep);
        }
        if gain > T::zero() && gain < T::one() {
            Ok(())
        } else {
            Err(ControlError::ObserverUnstable(gain.to_f64().unwrap_or(f64::NAN)))
        }
    }
}

impl Default for ObserverState<f64> {
    fn default() -> Self {
        Self::new(50.0)
    }
}

/// Forces on the slave the observer treats as known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownForces<T: Real> {
    pub drag: Vector3<T>,
    pub actuation: Vector3<T>,
    pub gravity: Vector3<T>,
}

impl<T: Real> KnownForces<T> {
    pub fn sum(&self) -> Vector3<T> {
        self.drag + self.actuation + self.gravity
    }
}

/// One observer update. `momentum` is the slave's translational momentum
/// `M·v` after the step; it is ignored in quasi-static mode, where the
/// residual is the instantaneous force imbalance.
pub fn observe_force<T: Real>(
    obs: &ObserverState<T>,
    mode: DynamicsMode,
    momentum: &Vector3<T>,
    known: &KnownForces<T>,
    dt: T,
) -> Result<ObserverState<T>, ControlError> {
    obs.check(dt)?;
    let gain = obs.bandwidth * dt;
    let mut next = *obs;
    match mode {
        DynamicsMode::QuasiStatic => {
            let residual = -known.sum();
            next.estimate = obs.estimate + (residual - obs.estimate) * gain;
        }
        DynamicsMode::SecondOrder => {
            next.momentum = obs.momentum + (known.sum() + obs.estimate) * dt;
            next.estimate = (momentum - next.momentum) * obs.bandwidth;
        }
    }
    Ok(next)
}

/// `u = g + Jᵀ S₁ (f_d + k_p f_e + k_i ∫f_e − k_damp J q̇)` with
/// `f_e = f_d − f_predicted`. The integral is not advanced while `frozen`.
pub fn force_control_law<T: Real>(
    terms: &MasterTerms<T>,
    gains: &mut ForceGains<T>,
    f_predicted: &Vector3<T>,
    qd: &DVector<T>,
    scaling: &ScalingMatrices<T>,
    dt: T,
    frozen: bool,
) -> DVector<T> {
    let f_e = gains.f_d - f_predicted;
    gains.state.update(&f_e, dt, frozen);
    let task_velocity = &terms.jacobian * qd;
    let v = Vector3::new(task_velocity[0], task_velocity[1], task_velocity[2]);
    let task = gains.f_d + gains.k_p * f_e + gains.k_i * gains.state.integral - gains.k_damp * v;
    &terms.gravity + terms.jacobian.transpose() * DVector::from_column_slice(scaling.scale_force(&task).as_slice())
}

/// Desired slave trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reference<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub acceleration: Vector3<T>,
}

/// `u = M (d̈_d + k_p d_e + k_i ∫d_e + k_d ḋ_e) + h` with `d_e = d_d − d_p`.
/// The integral is not advanced while `frozen`.
#[allow(clippy::too_many_arguments)]
pub fn position_control_law<T: Real>(
    m_model: &Matrix3<T>,
    h_model: &Vector3<T>,
    desired: &Reference<T>,
    predicted_position: &Vector3<T>,
    predicted_velocity: &Vector3<T>,
    gains: &mut PositionGains<T>,
    dt: T,
    frozen: bool,
) -> Vector3<T> {
    let e = desired.position - predicted_position;
    let e_rate = desired.velocity - predicted_velocity;
    gains.state.update(&e, dt, frozen);
    m_model * (desired.acceleration + gains.k_p * e + gains.k_i * gains.state.integral + gains.k_d * e_rate) + h_model
}

/// Returns `(S₁ f, (S₂ x, S₂ ẋ))`.
pub fn apply_scaling<T: Real>(
    scaling: &ScalingMatrices<T>,
    slave_force: &Vector3<T>,
    master_motion: (&Vector3<T>, &Vector3<T>),
) -> (Vector3<T>, (Vector3<T>, Vector3<T>)) {
    (
        scaling.scale_force(slave_force),
        (scaling.scale_motion(master_motion.0), scaling.scale_motion(master_motion.1)),
    )
}

/// Direction-preserving clamp to `‖f‖ ≤ f_max`; the flag is set when the
/// clamp was active.
pub fn saturate_force<T: Real>(f: &Vector3<T>, f_max: T) -> (Vector3<T>, bool) {
    let n = f.norm();
    if n > f_max {
        (f * (f_max / n), true)
    } else {
        (*f, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::{master_terms, MasterModel};
    use approx::assert_relative_eq;

    #[test]
    fn clamp_examples() {
        let (f, c) = saturate_force(&Vector3::new(3e-5, 4e-5, 0.0), 1e-5);
        assert!(c);
        assert_relative_eq!(f, Vector3::new(0.6e-5, 0.8e-5, 0.0), epsilon = 1e-20);
        let half = Vector3::new(0.5e-5, 0.0, 0.0);
        assert_eq!(saturate_force(&half, 1e-5), (half, false));
        assert_eq!(saturate_force(&Vector3::zeros(), 1e-5), (Vector3::zeros(), false));
    }

    #[test]
    fn scaling_examples() {
        let s = ScalingMatrices::uniform(1e6, 1e-3);
        let (f, _) = apply_scaling(&s, &Vector3::new(4e-7, 0.0, 0.0), (&Vector3::zeros(), &Vector3::zeros()));
        assert_relative_eq!(f.x, 0.4, max_relative = 1e-15);
        let id = ScalingMatrices::<f64>::identity();
        let x = Vector3::new(1.0, -2.0, 3.0);
        assert_eq!(apply_scaling(&id, &x, (&x, &x)), (x, (x, x)));
    }

    #[test]
    fn force_law_substitution() {
        let model = MasterModel::default();
        let q = DVector::zeros(3);
        let terms = master_terms(&model, &q, &q);
        let s = ScalingMatrices::default();
        let mut gains = ForceGains { f_d: Vector3::new(1e-7, 0.0, 0.0), ..ForceGains::default() };
        let fd = gains.f_d;
        let u = force_control_law(&terms, &mut gains, &fd, &q, &s, 1e-3, false);
        assert_relative_eq!(u[0], 0.1, max_relative = 1e-15);

        let mut gains = ForceGains::default();
        let qd = DVector::from_column_slice(&[0.2, 0.0, -0.1]);
        let u = force_control_law(&terms, &mut gains, &Vector3::zeros(), &qd, &s, 1e-3, false);
        assert_relative_eq!(u, -qd.clone(), max_relative = 1e-12);
    }

    #[test]
    fn position_law_substitution() {
        let mut gains = PositionGains { k_p: Matrix3::identity() * 100.0, k_i: Matrix3::zeros(), k_d: Matrix3::zeros(), state: Integrator::default() };
        let desired = Reference { position: Vector3::new(1e-6, 0.0, 0.0), ..Reference::default() };
        let u = position_control_law(&Matrix3::identity(), &Vector3::zeros(), &desired, &Vector3::zeros(), &Vector3::zeros(), &mut gains, 1e-3, false);
        assert_relative_eq!(u, Vector3::new(1e-4, 0.0, 0.0), epsilon = 1e-20);

        let mut gains = PositionGains::default();
        let h = Vector3::new(1.0, 2.0, 3.0);
        let u = position_control_law(&Matrix3::identity(), &h, &Reference::default(), &Vector3::zeros(), &Vector3::zeros(), &mut gains, 1e-3, false);
        assert_eq!(u, h);
    }

    #[test]
    fn frozen_integral_is_unchanged() {
        let mut i = Integrator::default();
        i.update(&Vector3::repeat(1.0), 0.1, false);
        i.update(&Vector3::repeat(1.0), 0.1, false);
        let before = i.integral;
        i.update(&Vector3::repeat(5.0), 0.1, true);
        assert_eq!(i.integral, before);
    }

    #[test]
    fn observer_rejects_coarse_step() {
        let obs = ObserverState::default();
        let k = KnownForces { drag: Vector3::zeros(), actuation: Vector3::zeros(), gravity: Vector3::zeros() };
        assert!(matches!(observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &k, 0.02), Err(ControlError::ObserverUnstable(_))));
        assert!(observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &k, 0.0).is_err());
    }

    #[test]
    fn quasi_static_observer_converges_to_contact() {
        let mut obs = ObserverState::default();
        // drag + actuation + gravity + contact = 0 with contact = 1e-6 x̂
        let k = KnownForces { drag: Vector3::new(-3e-6, 0.0, 0.0), actuation: Vector3::new(2e-6, 0.0, 0.0), gravity: Vector3::zeros() };
        for _ in 0..200 {
            obs = observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &k, 1e-3).unwrap();
        }
        assert!((obs.estimate.x - 1e-6).abs() < 0.02e-6);
    }
}
