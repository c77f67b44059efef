//! Electromagnetic actuation: coil fields, gradients, cluster magnetization,
//! the magnetic wrench on a cluster and the inverse current allocation.
//!
//! Every coil is modelled as a point magnetic dipole whose moment is
//! `dipole_gain * current * axis`. The model is linear in the drive currents,
//! which keeps both the field and its Jacobian analytic. A Biot–Savart
//! solenoid model can be substituted behind the same functions.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydrodynamics::ParticleShape;
use crate::scalar::{lit, mu0, Real};

/// Minimum distance between an evaluation point and a coil center (m).
pub const SINGULAR_RADIUS: f64 = 1.0e-6;
const SVD_ITERATIONS: usize = 1000;
const MOMENT_ITERATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MagneticsError {
    #[error("evaluation point lies within {radius} m of coil {coil}")]
    SingularPoint { coil: usize, radius: f64 },
    #[error("current vector has {got} entries, coil array has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid coil {index}: {reason}")]
    InvalidCoil { index: usize, reason: String },
    #[error("coil array must contain at least one coil")]
    EmptyArray,
    #[error("non-finite input to the current solve")]
    NonFinite,
    #[error("current solve did not converge")]
    NoConvergence,
}

/// A single electromagnet, approximated as a point dipole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Coil<T: Real> {
    /// Coil center (m).
    pub position: Vector3<T>,
    /// Unit dipole axis.
    pub axis: Vector3<T>,
    /// Dipole moment produced per ampere of drive current (A·m²/A).
    pub dipole_gain: T,
    /// Current limit (A).
    pub max_current: T,
}

impl<T: Real> Coil<T> {
    pub fn new(
        position: Vector3<T>,
        axis: Vector3<T>,
        dipole_gain: T,
        max_current: T,
    ) -> Self {
        Self { position, axis, dipole_gain, max_current }
    }

    fn validate(&self, index: usize) -> Result<(), MagneticsError> {
        let bad = |reason: &str| MagneticsError::InvalidCoil { index, reason: reason.to_owned() };
        if (self.axis.norm() - T::one()).abs() > lit(1.0e-12) {
            return Err(bad("axis must have unit norm"));
        }
        if !(self.dipole_gain > T::zero()) {
            return Err(bad("dipole_gain must be positive"));
        }
        if !(self.max_current > T::zero()) {
            return Err(bad("max_current must be positive"));
        }
        Ok(())
    }

    /// Field of this coil at `p` for drive current `current`.
    fn field(&self, current: T, p: &Vector3<T>) -> Vector3<T> {
        let r = p - self.position;
        let dist = r.norm();
        let m = self.axis * (self.dipole_gain * current);
        let rhat = r / dist;
        let k = mu0::<T>() / (lit::<T>(4.0) * T::pi() * dist * dist * dist);
        (rhat * (lit::<T>(3.0) * m.dot(&rhat)) - m) * k
    }

    /// Jacobian `∂B_i/∂x_j` of this coil's field at `p`.
    fn gradient(&self, current: T, p: &Vector3<T>) -> Matrix3<T> {
        let r = p - self.position;
        let r2 = r.norm_squared();
        let dist = r2.sqrt();
        let m = self.axis * (self.dipole_gain * current);
        let mr = m.dot(&r);
        let k = lit::<T>(3.0) * mu0::<T>() / (lit::<T>(4.0) * T::pi() * r2 * r2 * dist);
        let five = lit::<T>(5.0);
        Matrix3::from_fn(|i, j| {
            let delta = if i == j { mr } else { T::zero() };
            k * (m[j] * r[i] + m[i] * r[j] + delta - five * mr * r[i] * r[j] / r2)
        })
    }
}

/// Ordered set of coils driven by one current vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct CoilArray<T: Real> {
    coils: Vec<Coil<T>>,
}

impl<T: Real> CoilArray<T> {
    pub fn new(coils: Vec<Coil<T>>) -> Result<Self, MagneticsError> {
        if coils.is_empty() {
            return Err(MagneticsError::EmptyArray);
        }
        for (i, c) in coils.iter().enumerate() {
            c.validate(i)?;
        }
        Ok(Self { coils })
    }

    /// Four coils in the horizontal plane on ±x and ±y at `distance` from the
    /// workspace center, axes pointing inward.
    pub fn four_coil(distance: T, dipole_gain: T, max_current: T) -> Result<Self, MagneticsError> {
        let o = T::zero();
        let l = T::one();
        let d = distance;
        let coils = [
            (Vector3::new(d, o, o), Vector3::new(-l, o, o)),
            (Vector3::new(-d, o, o), Vector3::new(l, o, o)),
            (Vector3::new(o, d, o), Vector3::new(o, -l, o)),
            (Vector3::new(o, -d, o), Vector3::new(o, l, o)),
        ]
        .into_iter()
        .map(|(p, a)| Coil::new(p, a, dipole_gain, max_current))
        .collect();
        Self::new(coils)
    }

    pub fn coils(&self) -> &[Coil<T>] {
        &self.coils
    }

    pub fn len(&self) -> usize {
        self.coils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coils.is_empty()
    }

    fn check(&self, currents: &CurrentVector<T>, p: &Vector3<T>) -> Result<(), MagneticsError> {
        if currents.len() != self.coils.len() {
            return Err(MagneticsError::LengthMismatch {
                expected: self.coils.len(),
                got: currents.len(),
            });
        }
        self.check_point(p)
    }

    fn check_point(&self, p: &Vector3<T>) -> Result<(), MagneticsError> {
        for (i, c) in self.coils.iter().enumerate() {
            if (p - c.position).norm() <= lit(SINGULAR_RADIUS) {
                return Err(MagneticsError::SingularPoint { coil: i, radius: SINGULAR_RADIUS });
            }
        }
        Ok(())
    }
}

impl Default for CoilArray<f64> {
    fn default() -> Self {
        Self::four_coil(0.05, 1.0, 50.0).expect("default layout is valid")
    }
}

/// Drive currents, one entry per coil (A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct CurrentVector<T: Real>(pub DVector<T>);

impl<T: Real> CurrentVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn from_slice(values: &[T]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.as_slice()
    }
}

/// Magnetization law of a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub enum Magnetization<T: Real> {
    /// Moment of fixed magnitude aligned with the applied field (A/m).
    Saturated { moment_density: T },
    /// Moment proportional to the applied field (dimensionless susceptibility).
    Linear { susceptibility: T },
}

/// Magnetizable aggregate carried by (or forming) the slave microrobot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct MagneticCluster<T: Real> {
    pub shape: ParticleShape<T>,
    /// Magnetic volume (m³).
    pub volume: T,
    pub magnetization: Magnetization<T>,
}

impl<T: Real> MagneticCluster<T> {
    /// Cluster whose magnetic volume equals the geometric volume of `shape`.
    pub fn solid(shape: ParticleShape<T>, magnetization: Magnetization<T>) -> Self {
        Self { shape, volume: shape.volume(), magnetization }
    }

    /// Moment magnitude reached in a field of magnitude `field` (A·m²).
    pub fn moment_magnitude(&self, field: T) -> T {
        match self.magnetization {
            Magnetization::Saturated { moment_density } => moment_density * self.volume,
            Magnetization::Linear { susceptibility } => susceptibility * self.volume / mu0::<T>() * field,
        }
    }
}

/// Force and torque exerted by the field on a magnetized body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct MagneticWrench<T: Real> {
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

impl<T: Real> MagneticWrench<T> {
    pub fn zero() -> Self {
        Self { force: Vector3::zeros(), torque: Vector3::zeros() }
    }
}

/// Magnetic flux density at `p` (T), superposed over all coils.
pub fn field_at<T: Real>(
    array: &CoilArray<T>,
    currents: &CurrentVector<T>,
    p: &Vector3<T>,
) -> Result<Vector3<T>, MagneticsError> {
    array.check(currents, p)?;
    Ok(array
        .coils
        .iter()
        .zip(currents.0.iter())
        .fold(Vector3::zeros(), |acc, (c, &i)| acc + c.field(i, p)))
}

/// Analytic field Jacobian `G[(i, j)] = ∂B_i/∂x_j` at `p` (T/m).
pub fn field_gradient_at<T: Real>(
    array: &CoilArray<T>,
    currents: &CurrentVector<T>,
    p: &Vector3<T>,
) -> Result<Matrix3<T>, MagneticsError> {
    array.check(currents, p)?;
    Ok(array
        .coils
        .iter()
        .zip(currents.0.iter())
        .fold(Matrix3::zeros(), |acc, (c, &i)| acc + c.gradient(i, p)))
}

/// Induced moment of `cluster` in the field `b` (A·m²).
pub fn cluster_moment<T: Real>(cluster: &MagneticCluster<T>, b: &Vector3<T>) -> Vector3<T> {
    match cluster.magnetization {
        Magnetization::Saturated { moment_density } => {
            let n = b.norm();
            if n < lit(1.0e-12) {
                Vector3::zeros()
            } else {
                b * (moment_density * cluster.volume / n)
            }
        }
        Magnetization::Linear { susceptibility } => b * (susceptibility * cluster.volume / mu0::<T>()),
    }
}

/// Wrench on a moment `m` sitting in field `b` with Jacobian `grad_b`.
///
/// The force is `(m·∇)B`, which equals `grad_bᵀ m` off sources where the
/// Jacobian is symmetric.
pub fn magnetic_wrench<T: Real>(m: &Vector3<T>, b: &Vector3<T>, grad_b: &Matrix3<T>) -> MagneticWrench<T> {
    MagneticWrench { force: grad_b.transpose() * m, torque: m.cross(b) }
}

/// Tunables of the inverse current allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ActuationSettings<T: Real> {
    /// Field magnitude requested along the force direction so the cluster
    /// moment has a defined orientation (T).
    pub alignment_field: T,
    /// Singular values below `rank_tolerance * σ_max` are treated as zero.
    pub rank_tolerance: T,
}

impl<T: Real> Default for ActuationSettings<T> {
    fn default() -> Self {
        Self { alignment_field: lit(1.0e-2), rank_tolerance: lit(1.0e-10) }
    }
}

/// Result of [`solve_currents`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSolution<T: Real> {
    pub currents: CurrentVector<T>,
    /// Cluster moment in the field produced by `currents` (A·m²).
    pub moment: Vector3<T>,
    /// At least one coil hit its limit; the vector was scaled down uniformly.
    pub saturated: bool,
    /// The actuation map was rank deficient.
    pub degenerate: bool,
    pub rank: usize,
    /// Norm of the unrealizable part of the requested force before
    /// saturation (N).
    pub residual: T,
}

/// Minimum-norm current vector realizing `desired_force` on `cluster` at `p`.
///
/// The map from currents to force depends on the cluster moment, which in turn
/// depends on the field. The force rows `G_kᵀ m`, built from a moment
/// estimate, are solved with a pseudoinverse; a field of
/// `settings.alignment_field` along the force direction is then fitted in
/// their null space so the moment is well defined. The moment is refreshed
/// from the resulting field until it stops changing.
/// If any coil exceeds its limit the whole vector is scaled down, which keeps
/// the force direction for saturated clusters.
pub fn solve_currents<T: Real>(
    array: &CoilArray<T>,
    p: &Vector3<T>,
    desired_force: &Vector3<T>,
    cluster: &MagneticCluster<T>,
    settings: &ActuationSettings<T>,
) -> Result<CurrentSolution<T>, MagneticsError> {
    if !(p.iter().chain(desired_force.iter()).all(|x| x.is_finite())) {
        return Err(MagneticsError::NonFinite);
    }
    array.check_point(p)?;
    let n = array.len();
    let fnorm = desired_force.norm();
    let zero_solution = |degenerate: bool| CurrentSolution {
        currents: CurrentVector::zeros(n),
        moment: Vector3::zeros(),
        saturated: false,
        degenerate,
        rank: 0,
        residual: fnorm,
    };
    if fnorm == T::zero() {
        let mut s = zero_solution(false);
        s.residual = T::zero();
        return Ok(s);
    }

    let direction = desired_force / fnorm;
    let target_field = direction * settings.alignment_field;
    let unit_fields: Vec<Vector3<T>> = array.coils.iter().map(|c| c.field(T::one(), p)).collect();
    let unit_grads: Vec<Matrix3<T>> = array.coils.iter().map(|c| c.gradient(T::one(), p)).collect();
    let mut field_rows = DMatrix::zeros(3, n);
    for (k, b) in unit_fields.iter().enumerate() {
        field_rows.fixed_view_mut::<3, 1>(0, k).copy_from(b);
    }
    let pinv = |m: DMatrix<T>| -> Result<(DMatrix<T>, usize), MagneticsError> {
        let svd = m.try_svd(true, true, T::default_epsilon(), SVD_ITERATIONS).ok_or(MagneticsError::NoConvergence)?;
        let tol = svd.singular_values.max() * settings.rank_tolerance;
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        Ok((svd.pseudo_inverse(tol).expect("u and v computed"), rank))
    };

    // The force is met first; the alignment field is fitted inside the null
    // space of the force rows.
    let solve = |moment: &Vector3<T>| -> Result<(DVector<T>, usize), MagneticsError> {
        let mut g = DMatrix::zeros(3, n);
        for (k, grad) in unit_grads.iter().enumerate() {
            g.fixed_view_mut::<3, 1>(0, k).copy_from(&(grad.transpose() * moment));
        }
        let (g_pinv, g_rank) = pinv(g.clone())?;
        let x_force = &g_pinv * DVector::from_column_slice(desired_force.as_slice());
        let null = DMatrix::identity(n, n) - &g_pinv * &g;
        let projected = &field_rows * &null;
        let (p_pinv, p_rank) = pinv(projected)?;
        let field_error = DVector::from_column_slice(target_field.as_slice()) - &field_rows * &x_force;
        let mut x = x_force + &null * (p_pinv * field_error);
        // the alignment currents dwarf the force currents; refine away what
        // leaks through the rounded projector
        for _ in 0..2 {
            let leak = DVector::from_column_slice(desired_force.as_slice()) - &g * &x;
            x += &g_pinv * leak;
        }
        Ok((x, g_rank + p_rank))
    };

    let moment0 = cluster_moment(cluster, &target_field);
    if moment0.norm() == T::zero() {
        return Ok(zero_solution(true));
    }
    // The moment follows the field the currents produce; iterate the pair to
    // a fixed point.
    let mut moment = moment0;
    let (mut currents, mut rank) = solve(&moment)?;
    for _ in 0..MOMENT_ITERATIONS {
        let b = field_at(array, &CurrentVector(currents.clone()), p)?;
        let m = cluster_moment(cluster, &b);
        if m.norm() == T::zero() {
            break;
        }
        let change = (m - moment).norm() / m.norm();
        moment = m;
        (currents, rank) = solve(&moment)?;
        if change <= T::default_epsilon() * lit(16.0) {
            break;
        }
    }

    let achieved = {
        let cv = CurrentVector(currents.clone());
        let b = field_at(array, &cv, p)?;
        let g = field_gradient_at(array, &cv, p)?;
        magnetic_wrench(&cluster_moment(cluster, &b), &b, &g).force
    };
    let residual = (achieved - desired_force).norm();

    let mut scale = T::one();
    for (c, i) in array.coils.iter().zip(currents.iter()) {
        if i.abs() > c.max_current {
            let s = c.max_current / i.abs();
            if s < scale {
                scale = s;
            }
        }
    }
    let saturated = scale < T::one();
    if saturated {
        currents *= scale;
    }
    let currents = CurrentVector(currents);
    let moment = cluster_moment(cluster, &field_at(array, &currents, p)?);
    Ok(CurrentSolution {
        currents,
        moment,
        saturated,
        degenerate: rank < n.min(6),
        rank,
        residual,
    })
}

/// Force actually produced on `cluster` at `p` by `currents`.
pub fn actuation_wrench<T: Real>(
    array: &CoilArray<T>,
    currents: &CurrentVector<T>,
    p: &Vector3<T>,
    cluster: &MagneticCluster<T>,
) -> Result<MagneticWrench<T>, MagneticsError> {
    let b = field_at(array, currents, p)?;
    let g = field_gradient_at(array, currents, p)?;
    Ok(magnetic_wrench(&cluster_moment(cluster, &b), &b, &g))
}
