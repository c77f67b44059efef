//! Scalar abstraction shared by the physics and control modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by every generic routine in this crate.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Vacuum permeability (T·m/A).
#[inline]
pub fn mu0<T: Real>() -> T {
    lit(4.0e-7 * std::f64::consts::PI)
}

/// Standard gravity (m/s²), acting along −z.
pub const GRAVITY: f64 = 9.81;
