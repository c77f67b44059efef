//! Dynamics of the master (haptic) device, `D q̈ + C q̇ + P q̇ + T q̇ + K q + g
//! = u + Jᵀ S₁ F`, for a Cartesian point-mass device and a planar two-link
//! arm.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ScalingMatrices;
use crate::scalar::{lit, Real, GRAVITY};

/// Finite-difference step used for the Christoffel symbols.
pub const CHRISTOFFEL_STEP: f64 = 1.0e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MasterError {
    #[error("time step must be positive")]
    InvalidStep,
    #[error("master state became non-finite: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid master model: {0}")]
    InvalidModel(&'static str),
}

/// Planar arm moving in the vertical x–y plane; gravity acts along −y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct TwoLinkParams<T: Real> {
    pub lengths: [T; 2],
    pub masses: [T; 2],
    /// Inertia of each link about its center of mass (kg·m²).
    pub inertias: [T; 2],
    pub friction: [T; 2],
    pub transducer: [T; 2],
    pub stiffness: [T; 2],
    pub gravity: bool,
}

impl<T: Real> TwoLinkParams<T> {
    fn com(&self, i: usize) -> T {
        self.lengths[i] * lit(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub enum MasterModel<T: Real> {
    /// Three independent Cartesian axes.
    PointMass {
        inertia: Vector3<T>,
        friction: Vector3<T>,
        stiffness: Vector3<T>,
        transducer: Vector3<T>,
    },
    TwoLink(TwoLinkParams<T>),
}

impl Default for MasterModel<f64> {
    fn default() -> Self {
        MasterModel::PointMass {
            inertia: Vector3::repeat(0.1),
            friction: Vector3::repeat(0.5),
            stiffness: Vector3::zeros(),
            transducer: Vector3::zeros(),
        }
    }
}

/// Generalized coordinates and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterState<T: Real> {
    pub q: DVector<T>,
    pub qd: DVector<T>,
}

impl<T: Real> MasterState<T> {
    pub fn rest(dof: usize) -> Self {
        Self { q: DVector::zeros(dof), qd: DVector::zeros(dof) }
    }
}

/// Configuration-dependent terms of the master dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterTerms<T: Real> {
    pub inertia: DMatrix<T>,
    pub coriolis: DMatrix<T>,
    pub gravity: DVector<T>,
    /// Task Jacobian, 3 × dof.
    pub jacobian: DMatrix<T>,
}

/// Energy bookkeeping for one master step (J).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterStepReport<T: Real> {
    pub energy_before: T,
    pub energy_after: T,
    /// Work done by `u` and the reflected force over the step.
    pub input_work: T,
    /// Energy removed by friction and transducer losses over the step.
    pub dissipated: T,
}

fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a - two_pi * ((a + T::pi()) / two_pi).floor();
    if w <= -T::pi() {
        w += two_pi;
    }
    w
}

/// Matrix of Christoffel symbols of the first kind contracted with `qd`,
/// from central differences of `inertia`.
pub fn christoffel_matrix<T: Real, F>(inertia: F, q: &DVector<T>, qd: &DVector<T>) -> DMatrix<T>
where
    F: Fn(&DVector<T>) -> DMatrix<T>,
{
    let n = q.len();
    let h = lit::<T>(CHRISTOFFEL_STEP);
    let partials: Vec<DMatrix<T>> = (0..n)
        .map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            (inertia(&qp) - inertia(&qm)) / (h + h)
        })
        .collect();
    let half = lit::<T>(0.5);
    DMatrix::from_fn(n, n, |i, j| {
        (0..n).fold(T::zero(), |acc, k| {
            acc + half * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * qd[k]
        })
    })
}

impl<T: Real> MasterModel<T> {
    pub fn dof(&self) -> usize {
        match self {
            Self::PointMass { .. } => 3,
            Self::TwoLink(_) => 2,
        }
    }

    pub fn validate(&self) -> Result<(), MasterError> {
        let nonneg = |v: &[T]| v.iter().all(|x| *x >= T::zero());
        match self {
            Self::PointMass { inertia, friction, stiffness, transducer } => {
                if !inertia.iter().all(|m| *m > T::zero()) {
                    return Err(MasterError::InvalidModel("inertia must be positive"));
                }
                if !(nonneg(friction.as_slice()) && nonneg(stiffness.as_slice()) && nonneg(transducer.as_slice())) {
                    return Err(MasterError::InvalidModel("P, T and K must be non-negative"));
                }
            }
            Self::TwoLink(p) => {
                if !(p.masses.iter().chain(&p.inertias).chain(&p.lengths).all(|x| *x > T::zero())) {
                    return Err(MasterError::InvalidModel("link masses, inertias and lengths must be positive"));
                }
                if !(nonneg(&p.friction) && nonneg(&p.transducer) && nonneg(&p.stiffness)) {
                    return Err(MasterError::InvalidModel("P, T and K must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Total inertia matrix `D(q)`.
    pub fn inertia(&self, q: &DVector<T>) -> DMatrix<T> {
        match self {
            Self::PointMass { inertia, .. } => DMatrix::from_diagonal(&DVector::from_column_slice(inertia.as_slice())),
            Self::TwoLink(p) => {
                let (m1, m2) = (p.masses[0], p.masses[1]);
                let (i1, i2) = (p.inertias[0], p.inertias[1]);
                let l1 = p.lengths[0];
                let (c1, c2) = (p.com(0), p.com(1));
                let cos2 = q[1].cos();
                let two = lit::<T>(2.0);
                let d11 = m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + two * l1 * c2 * cos2) + i1 + i2;
                let d12 = m2 * (c2 * c2 + l1 * c2 * cos2) + i2;
                let d22 = m2 * c2 * c2 + i2;
                DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22])
            }
        }
    }

    pub fn gravity(&self, q: &DVector<T>) -> DVector<T> {
        match self {
            Self::PointMass { .. } => DVector::zeros(3),
            Self::TwoLink(p) if !p.gravity => DVector::zeros(2),
            Self::TwoLink(p) => {
                let g = lit::<T>(GRAVITY);
                let c12 = (q[0] + q[1]).cos();
                let g2 = p.masses[1] * p.com(1) * g * c12;
                let g1 = (p.masses[0] * p.com(0) + p.masses[1] * p.lengths[0]) * g * q[0].cos() + g2;
                DVector::from_column_slice(&[g1, g2])
            }
        }
    }

    /// Potential energy of gravity and the joint springs.
    pub fn potential(&self, q: &DVector<T>) -> T {
        let half = lit::<T>(0.5);
        match self {
            Self::PointMass { stiffness, .. } => (0..3).fold(T::zero(), |a, i| a + half * stiffness[i] * q[i] * q[i]),
            Self::TwoLink(p) => {
                let spring = half * (p.stiffness[0] * q[0] * q[0] + p.stiffness[1] * q[1] * q[1]);
                if !p.gravity {
                    return spring;
                }
                let g = lit::<T>(GRAVITY);
                let s1 = q[0].sin();
                let s12 = (q[0] + q[1]).sin();
                spring + p.masses[0] * g * p.com(0) * s1 + p.masses[1] * g * (p.lengths[0] * s1 + p.com(1) * s12)
            }
        }
    }

    pub fn energy(&self, state: &MasterState<T>) -> T {
        let d = self.inertia(&state.q);
        lit::<T>(0.5) * state.qd.dot(&(d * &state.qd)) + self.potential(&state.q)
    }

    /// Handle position in task space (m).
    pub fn forward_kinematics(&self, q: &DVector<T>) -> Vector3<T> {
        match self {
            Self::PointMass { .. } => Vector3::new(q[0], q[1], q[2]),
            Self::TwoLink(p) => {
                let (l1, l2) = (p.lengths[0], p.lengths[1]);
                let a12 = q[0] + q[1];
                Vector3::new(l1 * q[0].cos() + l2 * a12.cos(), l1 * q[0].sin() + l2 * a12.sin(), T::zero())
            }
        }
    }

    pub fn jacobian(&self, q: &DVector<T>) -> DMatrix<T> {
        match self {
            Self::PointMass { .. } => DMatrix::identity(3, 3),
            Self::TwoLink(p) => {
                let (l1, l2) = (p.lengths[0], p.lengths[1]);
                let a12 = q[0] + q[1];
                let (s1, c1, s12, c12) = (q[0].sin(), q[0].cos(), a12.sin(), a12.cos());
                let o = T::zero();
                DMatrix::from_row_slice(3, 2, &[-l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12, o, o])
            }
        }
    }

    /// Diagonal of `P + T`.
    pub fn damping(&self) -> DVector<T> {
        match self {
            Self::PointMass { friction, transducer, .. } => DVector::from_column_slice((friction + transducer).as_slice()),
            Self::TwoLink(p) => DVector::from_column_slice(&[p.friction[0] + p.transducer[0], p.friction[1] + p.transducer[1]]),
        }
    }

    /// Diagonal of `K`.
    pub fn stiffness(&self) -> DVector<T> {
        match self {
            Self::PointMass { stiffness, .. } => DVector::from_column_slice(stiffness.as_slice()),
            Self::TwoLink(p) => DVector::from_column_slice(&p.stiffness),
        }
    }
}

/// Closed-form `D`, `g`, `J` with `C` from [`christoffel_matrix`].
pub fn master_terms<T: Real>(model: &MasterModel<T>, q: &DVector<T>, qd: &DVector<T>) -> MasterTerms<T> {
    let coriolis = match model {
        MasterModel::PointMass { .. } => DMatrix::zeros(3, 3),
        MasterModel::TwoLink(_) => christoffel_matrix(|x| model.inertia(x), q, qd),
    };
    MasterTerms {
        inertia: model.inertia(q),
        coriolis,
        gravity: model.gravity(q),
        jacobian: model.jacobian(q),
    }
}

/// Advances the master by `dt` with semi-implicit Euler under the input `u`
/// and the task force `task_force`, reflected through `Jᵀ S₁`.
pub fn step_master<T: Real>(
    model: &MasterModel<T>,
    state: &MasterState<T>,
    u: &DVector<T>,
    task_force: &Vector3<T>,
    scaling: &ScalingMatrices<T>,
    dt: T,
) -> Result<(MasterState<T>, MasterStepReport<T>), MasterError> {
    if !(dt > T::zero()) {
        return Err(MasterError::InvalidStep);
    }
    let n = model.dof();
    for got in [state.q.len(), state.qd.len(), u.len()] {
        if got != n {
            return Err(MasterError::Dimension { expected: n, got });
        }
    }
    let terms = master_terms(model, &state.q, &state.qd);
    let reflected = terms.jacobian.transpose() * DVector::from_column_slice(scaling.scale_force(task_force).as_slice());
    let damping = model.damping();
    let stiffness = model.stiffness();
    let passive = &terms.coriolis * &state.qd
        + damping.component_mul(&state.qd)
        + stiffness.component_mul(&state.q)
        + &terms.gravity;
    let drive = u + &reflected;
    let qdd = terms
        .inertia
        .clone()
        .cholesky()
        .ok_or(MasterError::InvalidModel("inertia matrix not positive definite"))?
        .solve(&(&drive - passive));
    let qd = &state.qd + qdd * dt;
    let mut q = &state.q + &qd * dt;
    if matches!(model, MasterModel::TwoLink(_)) {
        q.iter_mut().for_each(|a| *a = wrap_angle(*a));
    }
    let mut next = MasterState { q, qd };
    if !(next.q.iter().chain(next.qd.iter()).all(|x| x.is_finite())) {
        return Err(MasterError::NonFinite(format!("q = {:?}, qd = {:?}", next.q.as_slice(), next.qd.as_slice())));
    }
    let energy_before = model.energy(state);
    let input_work = drive.dot(&next.qd) * dt;
    // Semi-implicit Euler can gain energy on the nonlinear arm. Project the
    // velocity back so a step never ends above the energy it started with
    // plus the work put in.
    let bound = energy_before + input_work;
    let mut energy_after = model.energy(&next);
    if energy_after > bound {
        let potential = model.potential(&next.q);
        let kinetic = energy_after - potential;
        let target = (bound - potential).max(T::zero());
        if kinetic > T::zero() {
            next.qd *= (target / kinetic).sqrt();
            energy_after = model.energy(&next);
        }
    }
    let report = MasterStepReport {
        energy_before,
        energy_after,
        input_work: drive.dot(&next.qd) * dt,
        dissipated: next.qd.dot(&damping.component_mul(&next.qd)) * dt,
    };
    Ok((next, report))
}
