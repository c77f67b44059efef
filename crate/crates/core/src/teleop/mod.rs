//! The bilateral loop: operator → master → scaled reference → position law →
//! clamp → coil currents → slave → observer → reflected force.

mod stability;

pub use stability::{
    energy_growth, linearize_two_port, llewellyn_margin, log_grid, AxisHybrid, HybridTwoPort, LlewellynReport,
};

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    force_control_law, observe_force, position_control_law, saturate_force, ControlError, ForceGains, KnownForces,
    ObserverState, PositionGains, Reference, ScalingMatrices,
};
use crate::hydrodynamics::{drag_force, resistance_tensor, stokeslet_velocity, FluidMedium, HydroError, ParticleShape};
use crate::magnetics::{
    field_at, field_gradient_at, solve_currents, ActuationSettings, CoilArray, CurrentVector, MagneticCluster,
    Magnetization, MagneticsError,
};
use crate::master::{master_terms, step_master, MasterError, MasterModel, MasterState};
use crate::scalar::{lit, Real};
use crate::slave::{
    step_slave, BodyProperties, ContactParams, ContactPartner, DynamicsMode, Environment, RigidBodyState, SlaveError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TeleopError {
    #[error(transparent)]
    Slave(#[from] SlaveError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Hydro(#[from] HydroError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("session faulted at t = {t} s: {reason}")]
    Faulted { t: f64, reason: String },
    #[error("operating point is not an equilibrium (residual {0:e} N)")]
    NotEquilibrium(f64),
}

/// How slave motion follows the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Position law, force clamp and coil currents drive the slave.
    #[default]
    Magnetic,
    /// The slave moves rigidly with the scaled master and the environment force
    /// is reflected in the same step. Used as a lossless reference loop.
    Ideal,
}

/// Geometry and material of a body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct BodySpec<T: Real> {
    pub shape: ParticleShape<T>,
    pub density: T,
    #[serde(default)]
    pub magnetization: Option<Magnetization<T>>,
}

impl<T: Real> BodySpec<T> {
    pub fn build(&self) -> Result<BodyProperties<T>, SlaveError> {
        let magnetic = self.magnetization.map(|m| MagneticCluster::solid(self.shape, m));
        BodyProperties::uniform(self.shape, self.density, magnetic)
    }
}

/// A passive body in the workspace: a bead, a bubble or a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct NeighborSpec<T: Real> {
    pub name: String,
    pub body: BodySpec<T>,
    pub position: Vector3<T>,
    /// Held in place (cells attached to a substrate).
    #[serde(default)]
    pub fixed: bool,
    /// Contact law between this body and the slave.
    pub contact: ContactParams<T>,
    #[serde(default)]
    pub adhesion: bool,
}

/// Spring-damper between the operator's hand and the master handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct OperatorCoupling<T: Real> {
    pub stiffness: T,
    pub damping: T,
}

impl<T: Real> Default for OperatorCoupling<T> {
    fn default() -> Self {
        Self { stiffness: lit(100.0), damping: lit(10.0) }
    }
}

/// How the slave position reaches the position law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct MeasurementChannel<T: Real> {
    pub delay_steps: usize,
    /// Standard deviation of additive position noise (m).
    pub position_noise: T,
    pub seed: u64,
}

impl<T: Real> Default for MeasurementChannel<T> {
    fn default() -> Self {
        Self { delay_steps: 0, position_noise: T::zero(), seed: 0 }
    }
}

/// Sustained contact with `neighbor` at or above `threshold` for `hold_time`
/// fixes the slave inside that body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct EngulfmentRule<T: Real> {
    pub neighbor: usize,
    pub threshold: T,
    pub hold_time: T,
}

/// Linear spring from the slave to a fixed anchor, acting as a compliant
/// environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Tether<T: Real> {
    pub stiffness: T,
    pub anchor: Vector3<T>,
}

/// Everything needed to start a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct TeleopConfig<T: Real> {
    pub dt: T,
    pub mode: DynamicsMode,
    pub coupling: CouplingMode,
    pub master: MasterModel<T>,
    pub slave: BodySpec<T>,
    pub slave_origin: Vector3<T>,
    pub fluid: FluidMedium<T>,
    pub coils: CoilArray<T>,
    pub actuation: ActuationSettings<T>,
    /// Largest gradient the coil system is rated for (T/m).
    pub max_gradient: T,
    pub scaling: ScalingMatrices<T>,
    pub force_gains: ForceGains<T>,
    pub position_gains: PositionGains<T>,
    pub observer_bandwidth: T,
    /// Time constant turning the slave drag into the model inertia of the
    /// position law (s).
    pub model_time_constant: T,
    pub operator: OperatorCoupling<T>,
    pub channel: MeasurementChannel<T>,
    pub neighbors: Vec<NeighborSpec<T>>,
    pub engulfment: Option<EngulfmentRule<T>>,
    pub tether: Option<Tether<T>>,
    /// Bodies feel each other's Stokeslet flow.
    pub hydrodynamic_coupling: bool,
    pub planar: bool,
}

impl Default for TeleopConfig<f64> {
    fn default() -> Self {
        Self {
            dt: 1.0e-3,
            mode: DynamicsMode::QuasiStatic,
            coupling: CouplingMode::Magnetic,
            master: MasterModel::default(),
            slave: BodySpec {
                shape: ParticleShape::Sphere { radius: 50.0e-6 },
                density: 1000.0,
                magnetization: Some(Magnetization::Saturated { moment_density: 1.0e5 }),
            },
            slave_origin: Vector3::zeros(),
            fluid: FluidMedium::water(),
            coils: CoilArray::default(),
            actuation: ActuationSettings::default(),
            max_gradient: 5.0,
            scaling: ScalingMatrices::default(),
            force_gains: ForceGains::default(),
            position_gains: PositionGains::default(),
            observer_bandwidth: 50.0,
            model_time_constant: 1.0e-3,
            operator: OperatorCoupling::default(),
            channel: MeasurementChannel::default(),
            neighbors: Vec::new(),
            engulfment: None,
            tether: None,
            hydrodynamic_coupling: false,
            planar: true,
        }
    }
}

impl<T: Real> TeleopConfig<T> {
    pub fn validate(&self) -> Result<(), TeleopError> {
        let bad = |s: &str| Err(TeleopError::Config(s.to_string()));
        if !(self.dt > T::zero() && self.dt <= lit(crate::slave::MAX_STEP)) {
            return bad("dt must be in (0, 0.01] s");
        }
        if !(self.max_gradient > T::zero()) {
            return bad("max_gradient must be positive");
        }
        if !(self.model_time_constant > T::zero()) {
            return bad("model_time_constant must be positive");
        }
        if self.operator.stiffness < T::zero() || self.operator.damping < T::zero() {
            return bad("operator coupling must be non-negative");
        }
        if self.channel.position_noise < T::zero() {
            return bad("position_noise must be non-negative");
        }
        self.master.validate()?;
        self.slave.build()?;
        self.fluid.validate()?;
        CoilArray::new(self.coils.coils().to_vec())?;
        self.scaling.validate()?;
        self.force_gains.validate()?;
        self.position_gains.validate()?;
        ObserverState::new(self.observer_bandwidth).check(self.dt)?;
        for n in &self.neighbors {
            n.body.build()?;
            n.contact.validate()?;
        }
        if let Some(rule) = &self.engulfment {
            if rule.neighbor >= self.neighbors.len() {
                return bad("engulfment.neighbor out of range");
            }
            if !(rule.threshold > T::zero() && rule.hold_time >= T::zero()) {
                return bad("engulfment threshold must be positive and hold_time non-negative");
            }
        }
        if let Some(tether) = &self.tether {
            if tether.stiffness < T::zero() {
                return bad("tether stiffness must be non-negative");
            }
        }
        Ok(())
    }
}

/// One sample of the operator's hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct OperatorCommand<T: Real> {
    /// Hand position in master task space (m).
    pub pose: Vector3<T>,
    pub velocity: Vector3<T>,
    /// Force applied straight to the handle, independent of `engaged` (N).
    pub force: Vector3<T>,
    /// The hand holds the handle.
    pub engaged: bool,
}

impl<T: Real> OperatorCommand<T> {
    pub fn hold(pose: Vector3<T>) -> Self {
        Self { pose, velocity: Vector3::zeros(), force: Vector3::zeros(), engaged: true }
    }

    pub fn released() -> Self {
        Self { pose: Vector3::zeros(), velocity: Vector3::zeros(), force: Vector3::zeros(), engaged: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameFlags {
    pub saturation: bool,
    pub contact: bool,
    pub engulfed: bool,
    pub adhesion_release: bool,
    pub adhesion: bool,
    pub actuation_limited: bool,
}

/// Loads on the slave during the step (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ForceTerms<T: Real> {
    pub drag: Vector3<T>,
    pub actuation: Vector3<T>,
    pub contact: Vector3<T>,
    pub gravity: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct TelemetryFrame<T: Real> {
    pub t: T,
    pub step: u64,
    /// Handle position and velocity in master task space.
    pub master_position: Vector3<T>,
    pub master_velocity: Vector3<T>,
    pub master_q: Vec<T>,
    pub master_qd: Vec<T>,
    pub master_energy: T,
    pub slave_position: Vector3<T>,
    pub slave_velocity: Vector3<T>,
    pub reference: Vector3<T>,
    pub f_predicted: Vector3<T>,
    /// `S₁ f_predicted`, the force rendered on the handle.
    pub master_force: Vector3<T>,
    /// Output of the position law before the clamp.
    pub desired_force: Vector3<T>,
    /// Force sent to the current solver.
    pub commanded_force: Vector3<T>,
    pub currents: Vec<T>,
    pub forces: ForceTerms<T>,
    pub neighbors: Vec<Vector3<T>>,
    pub flags: FrameFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ContactStart { neighbor: usize },
    ContactEnd { neighbor: usize },
    AdhesionRelease { neighbor: usize },
    Engulfed { neighbor: usize },
    SaturationStart,
    SaturationEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborState<T: Real> {
    pub body: BodyProperties<T>,
    pub state: RigidBodyState<T>,
    /// Adhesion can act; cleared on a fast release until the pair separates.
    pub armed: bool,
    pub in_contact: bool,
    /// Force this body exerts on the fluid (N).
    pub fluid_force: Vector3<T>,
}

/// A running teleoperation session. One writer; `step` advances the clock by
/// exactly `dt`.
#[derive(Debug, Clone)]
pub struct TeleopSession<T: Real> {
    config: TeleopConfig<T>,
    pub t: T,
    pub step_index: u64,
    pub master: MasterState<T>,
    pub slave: RigidBodyState<T>,
    slave_body: BodyProperties<T>,
    pub neighbors: Vec<NeighborState<T>>,
    pub force_gains: ForceGains<T>,
    pub position_gains: PositionGains<T>,
    pub observer: ObserverState<T>,
    /// Master handle position at the session start; the slave reference is
    /// measured from here.
    master_home: Vector3<T>,
    pub reference_velocity: Vector3<T>,
    saturated: bool,
    engulf_timer: T,
    pub engulfed: bool,
    slave_fluid_force: Vector3<T>,
    history: VecDeque<(Vector3<T>, Vector3<T>)>,
    rng: ChaCha8Rng,
    events: Vec<Event>,
    faulted: Option<String>,
}

impl<T: Real> TeleopSession<T> {
    pub fn new(config: TeleopConfig<T>) -> Result<Self, TeleopError> {
        config.validate()?;
        let slave_body = config.slave.build()?;
        let neighbors = config
            .neighbors
            .iter()
            .map(|n| {
                Ok(NeighborState {
                    body: n.body.build()?,
                    state: RigidBodyState::at_rest(n.position),
                    armed: true,
                    in_contact: false,
                    fluid_force: Vector3::zeros(),
                })
            })
            .collect::<Result<Vec<_>, SlaveError>>()?;
        let dof = config.master.dof();
        let master = MasterState::rest(dof);
        let master_home = config.master.forward_kinematics(&master.q);
        let mut force_gains = config.force_gains;
        force_gains.state.reset();
        let mut position_gains = config.position_gains;
        position_gains.state.reset();
        Ok(Self {
            t: T::zero(),
            step_index: 0,
            master,
            slave: RigidBodyState::at_rest(config.slave_origin),
            slave_body,
            neighbors,
            force_gains,
            position_gains,
            observer: ObserverState::new(config.observer_bandwidth),
            master_home,
            reference_velocity: Vector3::zeros(),
            saturated: false,
            engulf_timer: T::zero(),
            engulfed: false,
            slave_fluid_force: Vector3::zeros(),
            history: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(config.channel.seed),
            events: Vec::new(),
            faulted: None,
            config,
        })
    }

    pub fn config(&self) -> &TeleopConfig<T> {
        &self.config
    }

    pub fn dt(&self) -> T {
        self.config.dt
    }

    pub fn slave_body(&self) -> &BodyProperties<T> {
        &self.slave_body
    }

    pub fn master_home(&self) -> Vector3<T> {
        self.master_home
    }

    pub fn faulted(&self) -> Option<&str> {
        self.faulted.as_deref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Handle position in master task space.
    pub fn master_position(&self) -> Vector3<T> {
        self.config.master.forward_kinematics(&self.master.q)
    }

    /// Slave reference for the current master pose.
    pub fn reference_position(&self) -> Vector3<T> {
        self.config.slave_origin + self.config.scaling.scale_motion(&(self.master_position() - self.master_home))
    }

    /// Total master energy (J).
    pub fn master_energy(&self) -> T {
        self.config.master.energy(&self.master)
    }

    /// Advances one step under the operator command.
    pub fn step(&mut self, cmd: &OperatorCommand<T>) -> Result<TelemetryFrame<T>, TeleopError> {
        self.step_with_probe(cmd, &Vector3::zeros())
    }

    /// Advances one step with an extra force `probe` that the slave exerts on
    /// its environment (the environment pushes back with `-probe`).
    pub fn step_with_probe(&mut self, cmd: &OperatorCommand<T>, probe: &Vector3<T>) -> Result<TelemetryFrame<T>, TeleopError> {
        if let Some(reason) = &self.faulted {
            return Err(TeleopError::Faulted { t: self.t.to_f64().unwrap_or(f64::NAN), reason: reason.clone() });
        }
        let result = self.advance(cmd, probe);
        if let Err(e) = &result {
            self.faulted = Some(e.to_string());
        }
        result
    }

    fn tether_force(&self, position: &Vector3<T>) -> Vector3<T> {
        self.config.tether.map_or_else(Vector3::zeros, |t| (t.anchor - position) * t.stiffness)
    }

    fn measure(&mut self) -> (Vector3<T>, Vector3<T>) {
        let sigma = self.config.channel.position_noise;
        let mut p = self.slave.position;
        if sigma > T::zero() {
            let normal = Normal::new(0.0, sigma.to_f64().unwrap_or(0.0)).expect("noise σ validated non-negative");
            for i in 0..3 {
                p[i] += lit::<T>(normal.sample(&mut self.rng));
            }
        }
        self.history.push_back((p, self.slave.velocity));
        while self.history.len() > self.config.channel.delay_steps + 1 {
            self.history.pop_front();
        }
        self.history[0]
    }

    fn partners_for_slave(&self) -> Vec<ContactPartner<T>> {
        self.neighbors
            .iter()
            .zip(&self.config.neighbors)
            .map(|(n, spec)| ContactPartner {
                shape: n.body.shape,
                position: n.state.position,
                orientation: n.state.orientation,
                velocity: n.state.velocity,
                params: spec.contact,
                adhesion_enabled: spec.adhesion && n.armed,
            })
            .collect()
    }

    fn advance(&mut self, cmd: &OperatorCommand<T>, probe: &Vector3<T>) -> Result<TelemetryFrame<T>, TeleopError> {
        let cfg = self.config.clone();
        let dt = cfg.dt;
        let ideal = cfg.coupling == CouplingMode::Ideal;

        // (1) master
        let terms = master_terms(&cfg.master, &self.master.q, &self.master.qd);
        let x_m = cfg.master.forward_kinematics(&self.master.q);
        let jv = &terms.jacobian * &self.master.qd;
        let v_m = Vector3::new(jv[0], jv[1], jv[2]);
        let mut hand = cmd.force;
        if cmd.engaged {
            hand += (cmd.pose - x_m) * cfg.operator.stiffness + (cmd.velocity - v_m) * cfg.operator.damping;
        }
        if ideal {
            let partners = self.partners_for_slave();
            let contact: Vector3<T> = partners
                .iter()
                .map(|p| {
                    let env = Environment { partners: std::slice::from_ref(p), ..Environment::free(&cfg.fluid) };
                    crate::slave::total_force(&self.slave, &self.slave_body, &env).contact
                })
                .fold(Vector3::zeros(), |a, b| a + b);
            self.observer.estimate = contact - probe + self.tether_force(&self.slave.position);
        }
        let f_predicted = self.observer.estimate;
        let u = force_control_law(&terms, &mut self.force_gains, &f_predicted, &self.master.qd, &cfg.scaling, dt, self.saturated)
            + terms.jacobian.transpose() * nalgebra::DVector::from_column_slice(hand.as_slice());
        let (master_next, _) = step_master(&cfg.master, &self.master, &u, &f_predicted, &cfg.scaling, dt)?;
        self.master = master_next;
        let master_force = cfg.scaling.scale_force(&f_predicted);

        // (2) scaled reference
        let x_m = cfg.master.forward_kinematics(&self.master.q);
        let jv = cfg.master.jacobian(&self.master.q) * &self.master.qd;
        let v_m = Vector3::new(jv[0], jv[1], jv[2]);
        let mut reference = Reference {
            position: cfg.slave_origin + cfg.scaling.scale_motion(&(x_m - self.master_home)),
            velocity: cfg.scaling.scale_motion(&v_m),
            acceleration: Vector3::zeros(),
        };
        reference.acceleration = (reference.velocity - self.reference_velocity) / dt;
        self.reference_velocity = reference.velocity;
        if cfg.planar {
            reference.position.z = cfg.slave_origin.z;
            reference.velocity.z = T::zero();
            reference.acceleration.z = T::zero();
        }

        let resistance = resistance_tensor(&self.slave_body.shape, &cfg.fluid).to_world(&self.slave.orientation);
        let gravity = crate::slave::gravity_buoyancy(&self.slave_body, &cfg.fluid);
        let mut flags = FrameFlags { engulfed: self.engulfed, ..FrameFlags::default() };
        let mut desired_force = Vector3::zeros();
        let mut commanded_force = Vector3::zeros();
        let mut currents = CurrentVector::zeros(cfg.coils.len());
        let mut field = Vector3::zeros();
        let mut field_gradient = Matrix3::zeros();

        if !ideal {
            // (3) position law on the measured slave state
            let (d_p, v_p) = self.measure();
            let m_model = resistance.translational * cfg.model_time_constant;
            let h_model = resistance.translational * reference.velocity - gravity;
            desired_force = position_control_law(&m_model, &h_model, &reference, &d_p, &v_p, &mut self.position_gains, dt, self.saturated);
            if cfg.planar {
                desired_force.z = T::zero();
            }

            // (4) fail-safe clamp, then the actuation limit of the coil system
            let (clamped, saturated) = saturate_force(&desired_force, cfg.force_gains.f_max);
            let cap = self
                .slave_body
                .magnetic
                .map_or(T::zero(), |c| c.moment_magnitude(cfg.actuation.alignment_field) * cfg.max_gradient);
            let (capped, limited) = saturate_force(&clamped, cap);
            commanded_force = capped;
            flags.saturation = saturated;
            flags.actuation_limited = limited;
            if saturated != self.saturated {
                self.push_event(if saturated { EventKind::SaturationStart } else { EventKind::SaturationEnd });
            }
            self.saturated = saturated;

            // (5) currents and the field they produce at the slave
            if let Some(cluster) = &self.slave_body.magnetic {
                let sol = solve_currents(&cfg.coils, &self.slave.position, &commanded_force, cluster, &cfg.actuation)?;
                currents = sol.currents;
                field = field_at(&cfg.coils, &currents, &self.slave.position)?;
                field_gradient = field_gradient_at(&cfg.coils, &currents, &self.slave.position)?;
            }
        }

        // (6) slave and neighbors
        let mut induced = Vector3::zeros();
        if cfg.hydrodynamic_coupling {
            for n in &self.neighbors {
                if n.fluid_force != Vector3::zeros() {
                    induced += stokeslet_velocity(&self.slave.position, &n.state.position, &n.fluid_force, &cfg.fluid)?;
                }
            }
        }
        let partners = self.partners_for_slave();
        let external = self.tether_force(&self.slave.position) - probe;
        let env = Environment {
            fluid: &cfg.fluid,
            field,
            field_gradient,
            induced_flow: induced,
            partners: &partners,
            external_force: external,
            planar: cfg.planar,
        };
        let previous = self.slave;
        let (mut next, loads) = step_slave(&self.slave, &self.slave_body, &env, dt, cfg.mode)?;
        if ideal {
            let mut v = cfg.scaling.scale_motion(&v_m);
            if cfg.planar {
                v.z = T::zero();
            }
            next = RigidBodyState { velocity: v, position: previous.position + v * dt, ..previous };
        }
        if self.engulfed {
            next = RigidBodyState { velocity: Vector3::zeros(), angular_velocity: Vector3::zeros(), ..previous };
        }
        let flow = cfg.fluid.flow_at(&next.position) + induced;
        let (drag, _) = drag_force(&self.slave_body.shape, &cfg.fluid, &(next.velocity - flow), &next.angular_velocity, &next.orientation);
        self.slave_fluid_force = -drag;
        self.slave = next;

        for (i, report) in loads.contacts.iter().enumerate() {
            let spec = &cfg.neighbors[i];
            let n = &mut self.neighbors[i];
            if n.armed && spec.adhesion && report.in_contact && report.separation_speed > spec.contact.breakaway_speed {
                n.armed = false;
                flags.adhesion_release = true;
                self.events.push(Event { t: self.t.to_f64().unwrap_or(f64::NAN) + dt.to_f64().unwrap_or(0.0), kind: EventKind::AdhesionRelease { neighbor: i } });
            } else if !n.armed && report.gap > spec.contact.adhesion_range {
                n.armed = true;
            }
            flags.adhesion |= report.adhesion_active && n.armed;
            flags.contact |= report.in_contact;
            if report.in_contact != n.in_contact {
                n.in_contact = report.in_contact;
                let kind = if report.in_contact { EventKind::ContactStart { neighbor: i } } else { EventKind::ContactEnd { neighbor: i } };
                self.push_event(kind);
            }
        }

        if let Some(rule) = cfg.engulfment {
            if !self.engulfed {
                let pressing = loads.contacts.get(rule.neighbor).is_some_and(|c| c.normal_force >= rule.threshold);
                self.engulf_timer = if pressing { self.engulf_timer + dt } else { T::zero() };
                if self.engulf_timer >= rule.hold_time && pressing {
                    self.engulfed = true;
                    flags.engulfed = true;
                    self.push_event(EventKind::Engulfed { neighbor: rule.neighbor });
                }
            }
        }

        self.step_neighbors(&cfg)?;

        // (7) observer
        if !ideal {
            let known = KnownForces { drag, actuation: loads.actuation.force, gravity: loads.gravity };
            let momentum = self.slave.velocity * self.slave_body.mass();
            self.observer = observe_force(&self.observer, cfg.mode, &momentum, &known, dt)?;
        }

        self.step_index += 1;
        self.t = lit::<T>(self.step_index as f64) * dt;
        let frame = TelemetryFrame {
            t: self.t,
            step: self.step_index,
            master_position: x_m,
            master_velocity: v_m,
            master_q: self.master.q.iter().copied().collect(),
            master_qd: self.master.qd.iter().copied().collect(),
            master_energy: self.master_energy(),
            slave_position: self.slave.position,
            slave_velocity: self.slave.velocity,
            reference: reference.position,
            f_predicted,
            master_force,
            desired_force,
            commanded_force,
            currents: currents.as_slice().to_vec(),
            forces: ForceTerms { drag, actuation: loads.actuation.force, contact: loads.contact, gravity: loads.gravity },
            neighbors: self.neighbors.iter().map(|n| n.state.position).collect(),
            flags,
        };
        let finite = |v: &Vector3<T>| v.iter().all(|x| x.is_finite());
        if !(finite(&frame.f_predicted) && finite(&frame.master_position) && finite(&frame.slave_position) && frame.master_energy.is_finite()) {
            return Err(TeleopError::Faulted { t: self.t.to_f64().unwrap_or(f64::NAN), reason: "non-finite telemetry".into() });
        }
        Ok(frame)
    }

    fn step_neighbors(&mut self, cfg: &TeleopConfig<T>) -> Result<(), TeleopError> {
        let dt = cfg.dt;
        for (i, spec) in cfg.neighbors.iter().enumerate() {
            if spec.fixed {
                continue;
            }
            let mut induced = Vector3::zeros();
            if cfg.hydrodynamic_coupling && self.slave_fluid_force != Vector3::zeros() {
                induced = stokeslet_velocity(&self.neighbors[i].state.position, &self.slave.position, &self.slave_fluid_force, &cfg.fluid)?;
            }
            let slave_partner = ContactPartner {
                shape: self.slave_body.shape,
                position: self.slave.position,
                orientation: self.slave.orientation,
                velocity: self.slave.velocity,
                params: spec.contact,
                adhesion_enabled: spec.adhesion && self.neighbors[i].armed,
            };
            let n = &mut self.neighbors[i];
            let env = Environment {
                induced_flow: induced,
                partners: std::slice::from_ref(&slave_partner),
                planar: cfg.planar,
                ..Environment::free(&cfg.fluid)
            };
            let (next, _) = step_slave(&n.state, &n.body, &env, dt, cfg.mode)?;
            let flow = cfg.fluid.flow_at(&next.position) + induced;
            let (drag, _) = drag_force(&n.body.shape, &cfg.fluid, &(next.velocity - flow), &next.angular_velocity, &next.orientation);
            n.fluid_force = -drag;
            n.state = next;
        }
        Ok(())
    }

    fn push_event(&mut self, kind: EventKind) {
        let t = (self.step_index + 1) as f64 * self.config.dt.to_f64().unwrap_or(f64::NAN);
        self.events.push(Event { t, kind });
    }
}
