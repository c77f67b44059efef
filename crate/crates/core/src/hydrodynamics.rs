//! Low-Reynolds-number hydrodynamics: Stokes resistance of spheres and
//! prolate spheroids, linear drag, and the far-field Stokeslet used for
//! fluidic coupling between bodies.
//!
//! Spheroids use the body x-axis as their symmetry axis.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};

/// Stokeslets are not evaluated closer than this to their source (m).
pub const STOKESLET_CORE: f64 = 1.0e-9;

/// Below `ε^(1/8)` the closed-form friction factors lose more precision to
/// cancellation (≈ ε/e²) than the truncated series does (≈ e⁶).
fn series_eccentricity<T: Real>() -> T {
    T::default_epsilon().powf(lit(0.125))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HydroError {
    #[error("stokeslet evaluated within {0} m of its source")]
    SingularPoint(f64),
    #[error("invalid shape: {0}")]
    InvalidShape(&'static str),
    #[error("invalid fluid: {0}")]
    InvalidFluid(&'static str),
}

/// Background flow of the medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub enum AmbientFlow<T: Real> {
    #[default]
    Quiescent,
    Uniform { velocity: Vector3<T> },
}

/// Newtonian fluid surrounding the bodies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct FluidMedium<T: Real> {
    /// Dynamic viscosity (Pa·s).
    pub viscosity: T,
    /// Density (kg/m³).
    pub density: T,
    #[serde(default)]
    pub ambient_flow: AmbientFlow<T>,
}

impl<T: Real> FluidMedium<T> {
    pub fn new(viscosity: T, density: T) -> Result<Self, HydroError> {
        let f = Self { viscosity, density, ambient_flow: AmbientFlow::Quiescent };
        f.validate()?;
        Ok(f)
    }

    /// Water at room temperature.
    pub fn water() -> Self {
        Self { viscosity: lit(1.0e-3), density: lit(1000.0), ambient_flow: AmbientFlow::Quiescent }
    }

    pub fn validate(&self) -> Result<(), HydroError> {
        if !(self.viscosity > T::zero()) {
            return Err(HydroError::InvalidFluid("viscosity must be positive"));
        }
        if !(self.density > T::zero()) {
            return Err(HydroError::InvalidFluid("density must be positive"));
        }
        Ok(())
    }

    pub fn flow_at(&self, _p: &Vector3<T>) -> Vector3<T> {
        match self.ambient_flow {
            AmbientFlow::Quiescent => Vector3::zeros(),
            AmbientFlow::Uniform { velocity } => velocity,
        }
    }
}

/// Geometry of a rigid particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub enum ParticleShape<T: Real> {
    Sphere { radius: T },
    /// Symmetry axis along body x.
    ProlateSpheroid { semi_major: T, semi_minor: T },
}

impl<T: Real> ParticleShape<T> {
    pub fn validate(&self) -> Result<(), HydroError> {
        match *self {
            Self::Sphere { radius } if !(radius > T::zero()) => Err(HydroError::InvalidShape("radius must be positive")),
            Self::ProlateSpheroid { semi_major, semi_minor } if !(semi_minor > T::zero() && semi_major >= semi_minor) => {
                Err(HydroError::InvalidShape("spheroid needs semi_major >= semi_minor > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn volume(&self) -> T {
        let k = lit::<T>(4.0 / 3.0) * T::pi();
        match *self {
            Self::Sphere { radius } => k * radius * radius * radius,
            Self::ProlateSpheroid { semi_major, semi_minor } => k * semi_major * semi_minor * semi_minor,
        }
    }

    /// Distance from the center to the surface along the body-frame unit
    /// direction `dir`.
    pub fn radius_along(&self, dir: &Vector3<T>) -> T {
        match *self {
            Self::Sphere { radius } => radius,
            Self::ProlateSpheroid { semi_major, semi_minor } => {
                let c2 = dir.x * dir.x;
                let s2 = T::one() - c2;
                T::one() / (c2 / (semi_major * semi_major) + s2 / (semi_minor * semi_minor)).sqrt()
            }
        }
    }

    /// Radius of the smallest enclosing sphere.
    pub fn bounding_radius(&self) -> T {
        match *self {
            Self::Sphere { radius } => radius,
            Self::ProlateSpheroid { semi_major, .. } => semi_major,
        }
    }

    /// Principal moments of inertia per unit mass (m²), body frame.
    pub fn gyration(&self) -> Vector3<T> {
        let fifth = lit::<T>(0.2);
        match *self {
            Self::Sphere { radius } => Vector3::repeat(lit::<T>(0.4) * radius * radius),
            Self::ProlateSpheroid { semi_major: a, semi_minor: b } => {
                let axial = fifth * (b * b + b * b);
                let transverse = fifth * (a * a + b * b);
                Vector3::new(axial, transverse, transverse)
            }
        }
    }
}

/// Body-frame resistance blocks mapping velocity to hydrodynamic load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistanceTensor<T: Real> {
    /// Translational block (N·s/m).
    pub translational: Matrix3<T>,
    /// Rotational block (N·m·s).
    pub rotational: Matrix3<T>,
}

impl<T: Real> ResistanceTensor<T> {
    /// Both blocks expressed in the world frame for a body at `orientation`.
    pub fn to_world(&self, orientation: &UnitQuaternion<T>) -> Self {
        let r = orientation.to_rotation_matrix();
        let rm = r.matrix();
        Self {
            translational: rm * self.translational * rm.transpose(),
            rotational: rm * self.rotational * rm.transpose(),
        }
    }
}

/// Friction factors of a prolate spheroid relative to a sphere of radius
/// `semi_major`: (axial translation, transverse translation, axial rotation,
/// transverse rotation).
fn spheroid_factors<T: Real>(e: T) -> (T, T, T, T) {
    let e2 = e * e;
    if e < series_eccentricity() {
        let e4 = e2 * e2;
        return (
            T::one() - lit::<T>(2.0 / 5.0) * e2 - lit::<T>(17.0 / 175.0) * e4,
            T::one() - lit::<T>(3.0 / 10.0) * e2 - lit::<T>(57.0 / 700.0) * e4,
            T::one() - lit::<T>(6.0 / 5.0) * e2 + lit::<T>(27.0 / 175.0) * e4,
            T::one() - lit::<T>(9.0 / 10.0) * e2 + lit::<T>(18.0 / 175.0) * e4,
        );
    }
    let one = T::one();
    let two = lit::<T>(2.0);
    let e3 = e2 * e;
    let l = e.ln_1p() - (-e).ln_1p();
    let xa = lit::<T>(8.0 / 3.0) * e3 / (-two * e + (one + e2) * l);
    let ya = lit::<T>(16.0 / 3.0) * e3 / (two * e + (lit::<T>(3.0) * e2 - one) * l);
    let xc = lit::<T>(4.0 / 3.0) * e3 * (one - e2) / (two * e - (one - e2) * l);
    let yc = lit::<T>(4.0 / 3.0) * e3 * (two - e2) / (-two * e + (one + e2) * l);
    (xa, ya, xc, yc)
}

/// Stokes resistance of `shape` in `fluid`, body frame.
pub fn resistance_tensor<T: Real>(shape: &ParticleShape<T>, fluid: &FluidMedium<T>) -> ResistanceTensor<T> {
    let mu = fluid.viscosity;
    let pi = T::pi();
    match *shape {
        ParticleShape::Sphere { radius } => ResistanceTensor {
            translational: Matrix3::identity() * (lit::<T>(6.0) * pi * mu * radius),
            rotational: Matrix3::identity() * (lit::<T>(8.0) * pi * mu * radius * radius * radius),
        },
        ParticleShape::ProlateSpheroid { semi_major: a, semi_minor: b } => {
            let ratio = b / a;
            let e = (T::one() - ratio * ratio).max(T::zero()).sqrt();
            let (xa, ya, xc, yc) = spheroid_factors(e);
            let trans = lit::<T>(6.0) * pi * mu * a;
            let rot = lit::<T>(8.0) * pi * mu * a * a * a;
            ResistanceTensor {
                translational: Matrix3::from_diagonal(&Vector3::new(trans * xa, trans * ya, trans * ya)),
                rotational: Matrix3::from_diagonal(&Vector3::new(rot * xc, rot * yc, rot * yc)),
            }
        }
    }
}

/// Hydrodynamic force and torque on a body moving at `v_rel`, `omega_rel`
/// relative to the local fluid.
pub fn drag_force<T: Real>(
    shape: &ParticleShape<T>,
    fluid: &FluidMedium<T>,
    v_rel: &Vector3<T>,
    omega_rel: &Vector3<T>,
    orientation: &UnitQuaternion<T>,
) -> (Vector3<T>, Vector3<T>) {
    let r = resistance_tensor(shape, fluid).to_world(orientation);
    (-(r.translational * v_rel), -(r.rotational * omega_rel))
}

/// Fluid velocity at `p` induced by a point force `force` applied to the fluid
/// at `source` (Oseen tensor).
pub fn stokeslet_velocity<T: Real>(
    p: &Vector3<T>,
    source: &Vector3<T>,
    force: &Vector3<T>,
    fluid: &FluidMedium<T>,
) -> Result<Vector3<T>, HydroError> {
    let r = p - source;
    let dist = r.norm();
    if dist <= lit(STOKESLET_CORE) {
        return Err(HydroError::SingularPoint(STOKESLET_CORE));
    }
    let rhat = r / dist;
    let k = T::one() / (lit::<T>(8.0) * T::pi() * fluid.viscosity * dist);
    Ok((force + rhat * force.dot(&rhat)) * k)
}
