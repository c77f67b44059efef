//! Scripted operators, the three usage cases and their metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ScalingMatrices;
use crate::hydrodynamics::{FluidMedium, ParticleShape};
use crate::magnetics::Magnetization;
use crate::scalar::{lit, Real};
use crate::slave::ContactParams;
use crate::teleop::{
    BodySpec, EngulfmentRule, Event, NeighborSpec, OperatorCommand, TeleopConfig, TeleopError, TeleopSession, TelemetryFrame,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Teleop(#[from] TeleopError),
    #[error("metrics need at least one frame")]
    EmptyTelemetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BeadPush,
    CellPenetration,
    BubbleManipulation,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BeadPush => "bead_push",
            Self::CellPenetration => "cell_penetration",
            Self::BubbleManipulation => "bubble_manipulation",
        }
    }

    pub fn default_config(&self) -> ScenarioConfig<f64> {
        match self {
            Self::BeadPush => bead_push(),
            Self::CellPenetration => cell_penetration(),
            Self::BubbleManipulation => bubble_manipulation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    #[default]
    Move,
    Approach,
    FastRetract,
    Hold,
}

/// The operator reaches `pose` at time `t`; `mode` describes the segment
/// ending here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Waypoint<T: Real> {
    pub t: T,
    pub pose: Vector3<T>,
    #[serde(default)]
    pub mode: SegmentMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct OperatorScript<T: Real> {
    pub waypoints: Vec<Waypoint<T>>,
}

impl<T: Real> OperatorScript<T> {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let first = self.waypoints.first().ok_or_else(|| ScenarioError::Config("script has no waypoints".into()))?;
        if first.t != T::zero() {
            return Err(ScenarioError::Config("first waypoint must be at t = 0".into()));
        }
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(ScenarioError::Config("waypoint times must strictly increase".into()));
        }
        Ok(())
    }

    /// Checks that every fast-retract segment moves the slave reference at
    /// least at `breakaway` speed.
    pub fn check_retracts(&self, scaling: &ScalingMatrices<T>, breakaway: T) -> Result<(), ScenarioError> {
        for w in self.waypoints.windows(2) {
            if w[1].mode == SegmentMode::FastRetract {
                let v = scaling.scale_motion(&((w[1].pose - w[0].pose) / (w[1].t - w[0].t))).norm();
                if v < breakaway {
                    return Err(ScenarioError::Config(format!(
                        "fast-retract segment ending at t = {:?} is slower than the breakaway speed",
                        w[1].t.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hand pose and velocity at time `t`, interpolated linearly between
/// waypoints and held after the last one.
pub fn scripted_operator<T: Real>(script: &OperatorScript<T>, t: T) -> OperatorCommand<T> {
    let w = &script.waypoints;
    let last = w[w.len() - 1];
    if t >= last.t {
        return OperatorCommand::hold(last.pose);
    }
    let i = w.partition_point(|p| p.t <= t).max(1);
    let (a, b) = (w[i - 1], w[i]);
    let span = b.t - a.t;
    let s = (t - a.t) / span;
    OperatorCommand {
        pose: a.pose + (b.pose - a.pose) * s,
        velocity: (b.pose - a.pose) / span,
        force: Vector3::zeros(),
        engaged: true,
    }
}

/// What the tracking error of a run is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub enum TrackingTarget<T: Real> {
    /// Slave position against its scaled reference.
    SlaveReference,
    /// A neighbor against a fixed goal.
    Neighbor { index: usize, goal: Vector3<T> },
}

impl<T: Real> TrackingTarget<T> {
    pub fn error(&self, frame: &TelemetryFrame<T>) -> T {
        match self {
            Self::SlaveReference => (frame.slave_position - frame.reference).norm(),
            Self::Neighbor { index, goal } => frame.neighbors.get(*index).map_or(T::zero(), |p| (p - goal).norm()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ScenarioConfig<T: Real> {
    pub kind: ScenarioKind,
    pub duration: T,
    pub teleop: TeleopConfig<T>,
    pub script: OperatorScript<T>,
    pub target: TrackingTarget<T>,
    /// Error band for the settling time (m).
    pub settling_band: T,
}

impl<T: Real> ScenarioConfig<T> {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > T::zero()) {
            return Err(ScenarioError::Config("duration must be positive".into()));
        }
        if !(self.settling_band > T::zero()) {
            return Err(ScenarioError::Config("settling_band must be positive".into()));
        }
        self.teleop.validate()?;
        self.script.validate()?;
        if let TrackingTarget::Neighbor { index, .. } = self.target {
            if index >= self.teleop.neighbors.len() {
                return Err(ScenarioError::Config("target neighbor out of range".into()));
            }
        }
        for n in &self.teleop.neighbors {
            if n.adhesion {
                self.script.check_retracts(&self.teleop.scaling, n.contact.breakaway_speed)?;
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.teleop.dt).round().to_usize().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Metrics<T: Real> {
    /// Largest tracking error over the final 10 % of the run (m).
    pub max_steady_state_error: T,
    /// Time after which the error stays inside the band, if it does.
    pub settling_time: Option<T>,
    pub peak_contact_force: T,
    pub peak_actuation_force: T,
    pub engulfment_time: Option<T>,
    /// Every adhesion release was followed by a clear adhesion flag within
    /// five frames, and at least one release happened.
    pub release_success: bool,
}

/// Metrics of a telemetry stream.
pub fn compute_metrics<T: Real>(
    frames: &[TelemetryFrame<T>],
    target: &TrackingTarget<T>,
    settling_band: T,
) -> Result<Metrics<T>, ScenarioError> {
    let last = frames.last().ok_or(ScenarioError::EmptyTelemetry)?;
    let errors: Vec<T> = frames.iter().map(|f| target.error(f)).collect();
    let window_start = last.t * lit(0.9);
    let max_steady_state_error = frames
        .iter()
        .zip(&errors)
        .filter(|(f, _)| f.t >= window_start)
        .fold(T::zero(), |m, (_, e)| m.max(*e));
    let settling_time = match errors.iter().rposition(|e| *e > settling_band) {
        None => Some(T::zero()),
        Some(i) if i + 1 < frames.len() => Some(frames[i + 1].t),
        Some(_) => None,
    };
    let peak = |f: fn(&TelemetryFrame<T>) -> T| frames.iter().fold(T::zero(), |m, fr| m.max(f(fr)));
    let releases: Vec<usize> = frames.iter().enumerate().filter(|(_, f)| f.flags.adhesion_release).map(|(i, _)| i).collect();
    let release_success = !releases.is_empty()
        && releases.iter().all(|&i| frames[i..frames.len().min(i + 6)].iter().any(|f| !f.flags.adhesion));
    Ok(Metrics {
        max_steady_state_error,
        settling_time,
        peak_contact_force: peak(|f| f.forces.contact.norm()),
        peak_actuation_force: peak(|f| f.forces.actuation.norm()),
        engulfment_time: frames.iter().find(|f| f.flags.engulfed).map(|f| f.t),
        release_success,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun<T: Real> {
    pub frames: Vec<TelemetryFrame<T>>,
    pub events: Vec<Event>,
    pub metrics: Metrics<T>,
}

/// A run that stopped early.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("scenario aborted after {} frames: {error}", frames.len())]
pub struct ScenarioFault<T: Real> {
    pub frames: Vec<TelemetryFrame<T>>,
    pub events: Vec<Event>,
    pub error: ScenarioError,
}

/// Runs `cfg` to completion, calling `on_frame` for every frame as it is
/// produced.
pub fn run_scenario_with<T: Real, F>(cfg: &ScenarioConfig<T>, mut on_frame: F) -> Result<ScenarioRun<T>, Box<ScenarioFault<T>>>
where
    F: FnMut(&TelemetryFrame<T>),
{
    let fault = |frames, events, error| Box::new(ScenarioFault { frames, events, error });
    if let Err(e) = cfg.validate() {
        return Err(fault(Vec::new(), Vec::new(), e));
    }
    let mut session = match TeleopSession::new(cfg.teleop.clone()) {
        Ok(s) => s,
        Err(e) => return Err(fault(Vec::new(), Vec::new(), e.into())),
    };
    let steps = cfg.steps();
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cmd = scripted_operator(&cfg.script, session.t);
        match session.step(&cmd) {
            Ok(frame) => {
                on_frame(&frame);
                frames.push(frame);
            }
            Err(e) => return Err(fault(frames, session.take_events(), e.into())),
        }
    }
    let events = session.take_events();
    match compute_metrics(&frames, &cfg.target, cfg.settling_band) {
        Ok(metrics) => Ok(ScenarioRun { frames, events, metrics }),
        Err(e) => Err(fault(frames, events, e)),
    }
}

pub fn run_scenario<T: Real>(cfg: &ScenarioConfig<T>) -> Result<ScenarioRun<T>, Box<ScenarioFault<T>>> {
    run_scenario_with(cfg, |_| {})
}

fn waypoint(t: f64, x: f64, y: f64, mode: SegmentMode) -> Waypoint<f64> {
    Waypoint { t, pose: Vector3::new(x, y, 0.0), mode }
}

/// Pushing a 50 µm polystyrene bead in water, breaking free with a fast
/// retract, then nudging it onto its goal through the flow alone.
pub fn bead_push() -> ScenarioConfig<f64> {
    use SegmentMode::*;
    let bead = NeighborSpec {
        name: "bead".into(),
        body: BodySpec { shape: ParticleShape::Sphere { radius: 50.0e-6 }, density: 1050.0, magnetization: None },
        position: Vector3::new(170.0e-6, 0.0, 0.0),
        fixed: false,
        contact: ContactParams {
            stiffness: 1.0e-9,
            decay_length: 5.0e-8,
            adhesion_force: 1.0e-11,
            adhesion_range: 5.0e-7,
            breakaway_speed: 1.5e-5,
        },
        adhesion: true,
    };
    let teleop = TeleopConfig {
        neighbors: vec![bead],
        hydrodynamic_coupling: true,
        ..TeleopConfig::default()
    };
    let script = OperatorScript {
        waypoints: vec![
            waypoint(0.0, 0.0, 0.0, Move),
            waypoint(7.0, 0.170, 0.0, Approach),
            waypoint(15.0, 0.250, 0.0, Move),
            waypoint(16.0, 0.250, 0.0, Hold),
            waypoint(16.4, 0.210, 0.0, FastRetract),
            waypoint(25.0, 0.210, 0.0, Hold),
        ],
    };
    ScenarioConfig {
        kind: ScenarioKind::BeadPush,
        duration: 25.0,
        teleop,
        script,
        target: TrackingTarget::Neighbor { index: 0, goal: Vector3::new(320.0e-6, 0.0, 0.0) },
        settling_band: 1.0e-5,
    }
}

/// A magnetic cluster driven into a cell at the full 5 T/m gradient until the
/// cell takes it up.
pub fn cell_penetration() -> ScenarioConfig<f64> {
    use SegmentMode::*;
    let shape = ParticleShape::ProlateSpheroid { semi_major: 30.0e-6, semi_minor: 20.0e-6 };
    let moment = 8.0e-8;
    let cell = NeighborSpec {
        name: "cell".into(),
        body: BodySpec { shape: ParticleShape::Sphere { radius: 60.0e-6 }, density: 1050.0, magnetization: None },
        position: Vector3::new(190.0e-6, 0.0, 0.0),
        fixed: true,
        contact: ContactParams {
            stiffness: 1.0e-6,
            decay_length: 1.0e-7,
            adhesion_force: 0.0,
            adhesion_range: 5.0e-7,
            breakaway_speed: 1.0e-3,
        },
        adhesion: false,
    };
    let mut teleop = TeleopConfig {
        slave: BodySpec {
            shape,
            density: 5000.0,
            magnetization: Some(Magnetization::Saturated { moment_density: moment / shape.volume() }),
        },
        fluid: FluidMedium::new(150.0, 1050.0).expect("valid fluid"),
        neighbors: vec![cell],
        engulfment: Some(EngulfmentRule { neighbor: 0, threshold: 3.0e-7, hold_time: 45.0 }),
        ..TeleopConfig::default()
    };
    teleop.position_gains.k_i = Matrix3::zeros();
    let script = OperatorScript {
        waypoints: vec![waypoint(0.0, 0.0, 0.0, Move), waypoint(2.0, 0.190, 0.0, Move)],
    };
    ScenarioConfig {
        kind: ScenarioKind::CellPenetration,
        duration: 80.0,
        teleop,
        script,
        target: TrackingTarget::SlaveReference,
        settling_band: 1.0e-5,
    }
}

/// Steering a non-magnetic gas bubble by pushing it with the slave.
pub fn bubble_manipulation() -> ScenarioConfig<f64> {
    use SegmentMode::*;
    let bubble = NeighborSpec {
        name: "bubble".into(),
        body: BodySpec { shape: ParticleShape::Sphere { radius: 40.0e-6 }, density: 1.2, magnetization: None },
        position: Vector3::new(0.0, 150.0e-6, 0.0),
        fixed: false,
        contact: ContactParams {
            stiffness: 1.0e-9,
            decay_length: 5.0e-8,
            adhesion_force: 0.0,
            adhesion_range: 5.0e-7,
            breakaway_speed: 5.0e-5,
        },
        adhesion: false,
    };
    let teleop = TeleopConfig { neighbors: vec![bubble], ..TeleopConfig::default() };
    let script = OperatorScript {
        waypoints: vec![
            waypoint(0.0, 0.0, 0.0, Move),
            waypoint(6.0, 0.0, 0.060, Approach),
            waypoint(14.0, 0.0, 0.140, Move),
            waypoint(16.0, 0.0, 0.100, Move),
        ],
    };
    ScenarioConfig {
        kind: ScenarioKind::BubbleManipulation,
        duration: 20.0,
        teleop,
        script,
        target: TrackingTarget::SlaveReference,
        settling_band: 1.0e-5,
    }
}
