//! Simulation and control of scaled bilateral tele-manipulation of
//! magnetically guided microrobots.
//!
//! Everything is generic over [`scalar::Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod hydrodynamics;
pub mod magnetics;
pub mod master;
pub mod scalar;
pub mod scenarios;
pub mod slave;
pub mod teleop;

pub use scalar::Real;

pub type CoilArray = magnetics::CoilArray<f64>;
pub type CurrentVector = magnetics::CurrentVector<f64>;
pub type MagneticCluster = magnetics::MagneticCluster<f64>;
pub type FluidMedium = hydrodynamics::FluidMedium<f64>;
pub type ParticleShape = hydrodynamics::ParticleShape<f64>;
pub type ResistanceTensor = hydrodynamics::ResistanceTensor<f64>;
pub type RigidBodyState = slave::RigidBodyState<f64>;
pub type BodyProperties = slave::BodyProperties<f64>;
pub type ContactParams = slave::ContactParams<f64>;
pub type MasterModel = master::MasterModel<f64>;
pub type MasterState = master::MasterState<f64>;
pub type ScalingMatrices = control::ScalingMatrices<f64>;
pub type ForceGains = control::ForceGains<f64>;
pub type PositionGains = control::PositionGains<f64>;
pub type ObserverState = control::ObserverState<f64>;
pub type TeleopConfig = teleop::TeleopConfig<f64>;
pub type TeleopSession = teleop::TeleopSession<f64>;
pub type TelemetryFrame = teleop::TelemetryFrame<f64>;
pub type ScenarioConfig = scenarios::ScenarioConfig<f64>;
