//! Equation of motion of the slave microrobot and of the passive bodies it
//! manipulates: drag, magnetic actuation, contact and gravity/buoyancy,
//! integrated either quasi-statically or with inertia.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydrodynamics::{drag_force, resistance_tensor, FluidMedium, ParticleShape};
use crate::magnetics::{cluster_moment, magnetic_wrench, MagneticCluster, MagneticWrench};
use crate::scalar::{lit, Real, GRAVITY};

pub type Matrix6<T> = SMatrix<T, 6, 6>;
pub type Vector6<T> = SVector<T, 6>;

/// Largest accepted integration step (s).
pub const MAX_STEP: f64 = 1.0e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlaveError {
    #[error("time step {0} s outside (0, {MAX_STEP}]")]
    InvalidStep(f64),
    #[error("integration produced a non-finite state: {0}")]
    NonFinite(String),
    #[error("invalid body: {0}")]
    InvalidBody(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    /// Inertia neglected; velocity follows the instantaneous force balance.
    #[default]
    QuasiStatic,
    SecondOrder,
}

/// Pose and twist of a rigid body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState<T: Real> {
    pub position: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
    pub velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
}

impl<T: Real> RigidBodyState<T> {
    pub fn at_rest(position: Vector3<T>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        let finite = |v: &Vector3<T>| v.iter().all(|x| x.is_finite());
        finite(&self.position)
            && finite(&self.velocity)
            && finite(&self.angular_velocity)
            && self.orientation.coords.iter().all(|x| x.is_finite())
    }
}

/// Inertial, geometric and magnetic properties of a body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyProperties<T: Real> {
    pub shape: ParticleShape<T>,
    /// Body-frame generalized mass matrix (kg, kg·m²).
    pub mass_matrix: Matrix6<T>,
    /// Density (kg/m³).
    pub density: T,
    /// `None` for bodies that do not respond to the field.
    pub magnetic: Option<MagneticCluster<T>>,
}

impl<T: Real> BodyProperties<T> {
    /// Homogeneous body of the given density.
    pub fn uniform(shape: ParticleShape<T>, density: T, magnetic: Option<MagneticCluster<T>>) -> Result<Self, SlaveError> {
        shape.validate().map_err(|_| SlaveError::InvalidBody("invalid shape"))?;
        if !(density > T::zero()) {
            return Err(SlaveError::InvalidBody("density must be positive"));
        }
        let mass = density * shape.volume();
        let g = shape.gyration();
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            m[(i, i)] = mass;
            m[(i + 3, i + 3)] = mass * g[i];
        }
        Ok(Self { shape, mass_matrix: m, density, magnetic })
    }

    pub fn volume(&self) -> T {
        self.shape.volume()
    }

    pub fn mass(&self) -> T {
        self.mass_matrix[(0, 0)]
    }

    /// Mass matrix with the rotational block expressed in the world frame.
    fn world_mass(&self, orientation: &UnitQuaternion<T>) -> Matrix6<T> {
        let r = *orientation.to_rotation_matrix().matrix();
        let mut m = self.mass_matrix;
        let rot = r * self.mass_matrix.fixed_view::<3, 3>(3, 3) * r.transpose();
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot);
        m
    }
}

/// Short-range interaction law between two surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ContactParams<T: Real> {
    /// Repulsion at zero gap (N).
    pub stiffness: T,
    /// Decay length of the repulsion (m).
    pub decay_length: T,
    /// Adhesive pull inside the adhesion band (N).
    pub adhesion_force: T,
    /// Width of the adhesion band (m).
    pub adhesion_range: T,
    /// Separation speed above which adhesion lets go (m/s).
    pub breakaway_speed: T,
}

impl<T: Real> ContactParams<T> {
    pub fn validate(&self) -> Result<(), SlaveError> {
        let positive = [self.stiffness, self.decay_length, self.adhesion_range, self.breakaway_speed];
        if positive.iter().all(|v| *v > T::zero()) && self.adhesion_force >= T::zero() {
            Ok(())
        } else {
            Err(SlaveError::InvalidBody("contact parameters must be positive (adhesion may be zero)"))
        }
    }
}

/// Normal force between two surfaces separated by `gap` (negative means
/// overlap), positive when repulsive. `separation_speed` is positive when the
/// surfaces move apart; adhesion is dropped once it exceeds the breakaway
/// speed.
pub fn contact_force<T: Real>(gap: T, separation_speed: T, params: &ContactParams<T>) -> T {
    let repulsion = params.stiffness * (-gap / params.decay_length).exp();
    let adhesive = gap > T::zero() && gap < params.adhesion_range && separation_speed <= params.breakaway_speed;
    if adhesive {
        repulsion - params.adhesion_force
    } else {
        repulsion
    }
}

/// `-∂f/∂gap` of the repulsive part (N/m).
pub fn contact_stiffness<T: Real>(gap: T, params: &ContactParams<T>) -> T {
    params.stiffness / params.decay_length * (-gap / params.decay_length).exp()
}

/// Net weight minus buoyancy (N).
pub fn gravity_buoyancy<T: Real>(body: &BodyProperties<T>, fluid: &FluidMedium<T>) -> Vector3<T> {
    Vector3::new(T::zero(), T::zero(), -lit::<T>(GRAVITY)) * ((body.density - fluid.density) * body.volume())
}

/// Another body the slave can touch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPartner<T: Real> {
    pub shape: ParticleShape<T>,
    pub position: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
    pub velocity: Vector3<T>,
    pub params: ContactParams<T>,
    /// Cleared after the pair has broken free until it separates again.
    pub adhesion_enabled: bool,
}

/// Per-partner contact evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactReport<T: Real> {
    pub gap: T,
    pub separation_speed: T,
    /// Signed normal force, positive repulsive (N).
    pub normal_force: T,
    /// Force on this body (N).
    pub force: Vector3<T>,
    pub in_contact: bool,
    pub adhesion_active: bool,
}

/// Snapshot of everything outside the body that loads it.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a, T: Real> {
    pub fluid: &'a FluidMedium<T>,
    /// Field at the body (T).
    pub field: Vector3<T>,
    /// Field Jacobian at the body (T/m).
    pub field_gradient: Matrix3<T>,
    /// Disturbance flow at the body from other bodies (m/s).
    pub induced_flow: Vector3<T>,
    pub partners: &'a [ContactPartner<T>],
    /// Any additional load applied through contact (N).
    pub external_force: Vector3<T>,
    /// Lock translation along z.
    pub planar: bool,
}

impl<'a, T: Real> Environment<'a, T> {
    pub fn free(fluid: &'a FluidMedium<T>) -> Self {
        Self {
            fluid,
            field: Vector3::zeros(),
            field_gradient: Matrix3::zeros(),
            induced_flow: Vector3::zeros(),
            partners: &[],
            external_force: Vector3::zeros(),
            planar: false,
        }
    }
}

/// The four loads of the equation of motion, evaluated separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceBreakdown<T: Real> {
    pub drag_force: Vector3<T>,
    pub drag_torque: Vector3<T>,
    pub actuation: MagneticWrench<T>,
    /// Sum of partner contacts and the external load (N).
    pub contact: Vector3<T>,
    pub gravity: Vector3<T>,
    /// Linearized contact stiffness `-∂F_contact/∂x` (N/m).
    pub contact_stiffness: Matrix3<T>,
    pub contacts: Vec<ContactReport<T>>,
}

impl<T: Real> ForceBreakdown<T> {
    /// Generalized load `(force, torque)`.
    pub fn total(&self) -> Vector6<T> {
        let f = self.drag_force + self.actuation.force + self.contact + self.gravity;
        let t = self.drag_torque + self.actuation.torque;
        Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z)
    }

    /// Everything except drag.
    pub fn non_drag(&self) -> Vector6<T> {
        let f = self.actuation.force + self.contact + self.gravity;
        let t = self.actuation.torque;
        Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z)
    }
}

fn contact_with<T: Real>(state: &RigidBodyState<T>, shape: &ParticleShape<T>, other: &ContactPartner<T>) -> ContactReport<T> {
    let offset = state.position - other.position;
    let dist = offset.norm();
    let normal = if dist > T::zero() { offset / dist } else { Vector3::x() };
    let own_dir = state.orientation.inverse_transform_vector(&(-normal));
    let other_dir = other.orientation.inverse_transform_vector(&normal);
    let gap = dist - shape.radius_along(&own_dir) - other.shape.radius_along(&other_dir);
    let separation_speed = (state.velocity - other.velocity).dot(&normal);
    let p = &other.params;
    let f = if other.adhesion_enabled {
        contact_force(gap, separation_speed, p)
    } else {
        p.stiffness * (-gap / p.decay_length).exp()
    };
    let adhesion_active =
        other.adhesion_enabled && gap > T::zero() && gap < p.adhesion_range && separation_speed <= p.breakaway_speed;
    ContactReport {
        gap,
        separation_speed,
        normal_force: f,
        force: normal * f,
        in_contact: gap < p.adhesion_range,
        adhesion_active,
    }
}

/// Loads acting on `body` in `env`.
pub fn total_force<T: Real>(state: &RigidBodyState<T>, body: &BodyProperties<T>, env: &Environment<'_, T>) -> ForceBreakdown<T> {
    let v_rel = state.velocity - env.fluid.flow_at(&state.position) - env.induced_flow;
    let (drag_force, drag_torque) = drag_force(&body.shape, env.fluid, &v_rel, &state.angular_velocity, &state.orientation);
    let actuation = match &body.magnetic {
        Some(cluster) => magnetic_wrench(&cluster_moment(cluster, &env.field), &env.field, &env.field_gradient),
        None => MagneticWrench::zero(),
    };
    let contacts: Vec<_> = env.partners.iter().map(|p| contact_with(state, &body.shape, p)).collect();
    let mut contact = env.external_force;
    let mut stiffness = Matrix3::zeros();
    for (c, p) in contacts.iter().zip(env.partners) {
        contact += c.force;
        let n = c.force.try_normalize(T::zero()).unwrap_or_else(Vector3::zeros);
        stiffness += n * n.transpose() * contact_stiffness(c.gap, &p.params);
    }
    ForceBreakdown {
        drag_force,
        drag_torque,
        actuation,
        contact,
        gravity: gravity_buoyancy(body, env.fluid),
        contact_stiffness: stiffness,
        contacts,
    }
}

/// Advances `state` by `dt`.
///
/// Drag and the contact stiffness are treated implicitly, which keeps the
/// step stable for stiff contacts and for time steps longer than the viscous
/// relaxation time. Without contacts the quasi-static update is exactly the
/// force balance `R·v = F`.
pub fn step_slave<T: Real>(
    state: &RigidBodyState<T>,
    body: &BodyProperties<T>,
    env: &Environment<'_, T>,
    dt: T,
    mode: DynamicsMode,
) -> Result<(RigidBodyState<T>, ForceBreakdown<T>), SlaveError> {
    if !(dt > T::zero() && dt <= lit(MAX_STEP)) {
        return Err(SlaveError::InvalidStep(dt.to_f64().unwrap_or(f64::NAN)));
    }
    let loads = total_force(state, body, env);
    let res = resistance_tensor(&body.shape, env.fluid).to_world(&state.orientation);
    let flow = env.fluid.flow_at(&state.position) + env.induced_flow;
    let mut resistance = Matrix6::zeros();
    resistance.fixed_view_mut::<3, 3>(0, 0).copy_from(&res.translational);
    resistance.fixed_view_mut::<3, 3>(3, 3).copy_from(&res.rotational);
    let mut stiffness = Matrix6::zeros();
    stiffness.fixed_view_mut::<3, 3>(0, 0).copy_from(&loads.contact_stiffness);
    let mut flow6 = Vector6::zeros();
    flow6.fixed_rows_mut::<3>(0).copy_from(&flow);
    let mut rhs = loads.non_drag();
    if env.planar {
        rhs[2] = T::zero();
    }

    let (lhs, rhs) = match mode {
        DynamicsMode::QuasiStatic => (resistance + stiffness * dt, rhs + resistance * flow6),
        DynamicsMode::SecondOrder => {
            let mass = body.world_mass(&state.orientation);
            let v = Vector6::new(
                state.velocity.x,
                state.velocity.y,
                state.velocity.z,
                state.angular_velocity.x,
                state.angular_velocity.y,
                state.angular_velocity.z,
            );
            (mass + resistance * dt + stiffness * (dt * dt), mass * v + (rhs + resistance * flow6) * dt)
        }
    };
    let twist = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SlaveError::NonFinite("singular dynamics matrix".into()))?;
    let mut velocity = Vector3::new(twist[0], twist[1], twist[2]);
    if env.planar {
        velocity.z = T::zero();
    }
    let angular_velocity = Vector3::new(twist[3], twist[4], twist[5]);
    let rotated = UnitQuaternion::from_scaled_axis(angular_velocity * dt) * state.orientation;
    let next = RigidBodyState {
        position: state.position + velocity * dt,
        orientation: UnitQuaternion::new_normalize(rotated.into_inner()),
        velocity,
        angular_velocity,
    };
    if !next.is_finite() {
        return Err(SlaveError::NonFinite(format!(
            "position {:?} velocity {:?} from load {:?}",
            next.position,
            next.velocity,
            loads.total()
        )));
    }
    Ok((next, loads))
}
