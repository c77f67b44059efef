//! Small-signal two-port of the loop and the Llewellyn absolute-stability
//! test.
//!
//! Port 1 is the operator side (hand force in, handle velocity out), port 2
//! the environment side (force the slave exerts on its environment in, slave
//! velocity out). The one-step map is differentiated numerically around the
//! current session state; velocities are taken at step midpoints so that a
//! lossless mass stays lossless after discretization.

use nalgebra::{Complex, DMatrix, DVector, Vector3};

use super::{OperatorCommand, TeleopError, TeleopSession};
use crate::control::Integrator;
use crate::scalar::{lit, Real};
use crate::slave::DynamicsMode;

/// Relative finite-difference step on the normalized state.
pub const LINEARIZATION_STEP: f64 = 1.0e-8;
/// Largest residual load accepted at an operating point (N).
pub const EQUILIBRIUM_TOLERANCE: f64 = 1.0e-12;
/// Spectral radius still counted as marginally stable.
pub const MARGINAL_POLE_SLACK: f64 = 1.0e-6;
const SCHUR_ITERATIONS: usize = 10_000;
const GELFAND_SQUARINGS: usize = 40;

/// Hybrid parameters of one Cartesian axis, `[h11, h12, h21, h22]` per
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisHybrid<T: Real> {
    pub axis: usize,
    pub h: Vec<[Complex<T>; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTwoPort<T: Real> {
    /// Strictly increasing (rad/s).
    pub frequencies: Vec<T>,
    pub axes: Vec<AxisHybrid<T>>,
    /// Largest eigenvalue modulus of the linearized one-step map. Above one
    /// the loop is unstable on its own and the hybrid parameters describe no
    /// physical steady state.
    pub spectral_radius: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlewellynReport<T: Real> {
    pub stable: bool,
    /// The one-step map has all eigenvalues inside the unit circle.
    pub internally_stable: bool,
    /// Worst-case `2 Re h11 Re h22 − |h12 h21| − Re(h12 h21)`.
    pub margin: T,
    pub min_re_h11: T,
    pub min_re_h22: T,
    /// Frequency and axis where the margin is attained.
    pub worst_frequency: T,
    pub worst_axis: usize,
}

/// `n` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_grid<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * lit::<T>(i as f64) / lit::<T>((n - 1) as f64)).exp()).collect()
}

struct Layout<T: Real> {
    dof: usize,
    scale: Vec<T>,
}

impl<T: Real> Layout<T> {
    fn new(session: &TeleopSession<T>) -> Self {
        let dof = session.config().master.dof();
        let s = &session.config().scaling;
        let s1 = s.force.mean();
        let s2 = s.motion.mean();
        let inv = T::one() / s1;
        let mut scale = vec![T::one(); 2 * dof];
        // slave d, ḋ | observer estimate, momentum | position ∫, previous | force ∫, previous | reference velocity
        for block in [s2, s2, inv, inv, s2, s2, inv, inv, s2] {
            scale.extend(std::iter::repeat_n(block, 3));
        }
        Self { dof, scale }
    }

    fn len(&self) -> usize {
        self.scale.len()
    }

    fn pack(&self, s: &TeleopSession<T>) -> DVector<T> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(s.master.q.iter().copied());
        x.extend(s.master.qd.iter().copied());
        let prev = |i: &Integrator<T>| i.previous.unwrap_or_else(Vector3::zeros);
        for v in [
            s.slave.position,
            s.slave.velocity,
            s.observer.estimate,
            s.observer.momentum,
            s.position_gains.state.integral,
            prev(&s.position_gains.state),
            s.force_gains.state.integral,
            prev(&s.force_gains.state),
            s.reference_velocity,
        ] {
            x.extend(v.iter().copied());
        }
        DVector::from_vec(x)
    }

    fn unpack(&self, x: &DVector<T>, s: &mut TeleopSession<T>) {
        let n = self.dof;
        s.master.q = x.rows(0, n).into_owned();
        s.master.qd = x.rows(n, n).into_owned();
        let v = |k: usize| Vector3::new(x[2 * n + 3 * k], x[2 * n + 3 * k + 1], x[2 * n + 3 * k + 2]);
        s.slave.position = v(0);
        s.slave.velocity = v(1);
        s.observer.estimate = v(2);
        s.observer.momentum = v(3);
        s.position_gains.state = Integrator { integral: v(4), previous: Some(v(5)) };
        s.force_gains.state = Integrator { integral: v(6), previous: Some(v(7)) };
        s.reference_velocity = v(8);
    }
}

fn step_map<T: Real>(
    base: &TeleopSession<T>,
    layout: &Layout<T>,
    x: &DVector<T>,
    hand: &Vector3<T>,
    probe: &Vector3<T>,
) -> Result<DVector<T>, TeleopError> {
    let mut s = base.clone();
    layout.unpack(x, &mut s);
    let cmd = OperatorCommand { force: *hand, ..OperatorCommand::released() };
    s.step_with_probe(&cmd, probe)?;
    Ok(layout.pack(&s))
}

/// Numerical hybrid two-port of `session` around its current state.
pub fn linearize_two_port<T: Real>(session: &TeleopSession<T>, frequencies: &[T]) -> Result<HybridTwoPort<T>, TeleopError> {
    let cfg = session.config();
    if cfg.channel.delay_steps > 0 || cfg.channel.position_noise > T::zero() {
        return Err(TeleopError::Config("linearization needs an undelayed, noise-free measurement channel".into()));
    }
    if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TeleopError::Config("frequency grid must be strictly increasing".into()));
    }
    let layout = Layout::new(session);
    let x0 = layout.pack(session);
    let zero = Vector3::zeros();
    let dt = cfg.dt;

    // operating point check
    let x1 = step_map(session, &layout, &x0, &zero, &zero)?;
    let n = layout.dof;
    let d = cfg.master.inertia(&x0.rows(0, n).into_owned());
    let master_residual = (d * (x1.rows(n, n) - x0.rows(n, n)) / dt).norm();
    let r = crate::hydrodynamics::resistance_tensor(&session.slave_body().shape, &cfg.fluid).translational;
    let v0 = Vector3::new(x0[2 * n + 3], x0[2 * n + 4], x0[2 * n + 5]);
    let v1 = Vector3::new(x1[2 * n + 3], x1[2 * n + 4], x1[2 * n + 5]);
    let slave_residual = match cfg.mode {
        DynamicsMode::QuasiStatic => (r * v1).norm(),
        DynamicsMode::SecondOrder => ((v1 - v0) * (session.slave_body().mass() / dt)).norm(),
    };
    let residual = master_residual.max(slave_residual);
    if residual > lit(EQUILIBRIUM_TOLERANCE) {
        return Err(TeleopError::NotEquilibrium(residual.to_f64().unwrap_or(f64::NAN)));
    }

    // Jacobians in normalized coordinates
    let h = lit::<T>(LINEARIZATION_STEP);
    let dim = layout.len();
    let mut a = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let step = h * layout.scale[j];
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (step_map(session, &layout, &xp, &zero, &zero)? - step_map(session, &layout, &xm, &zero, &zero)?) / (step + step);
        for i in 0..dim {
            a[(i, j)] = col[i] * layout.scale[j] / layout.scale[i];
        }
    }
    let in_scale = [T::one(), T::one() / cfg.scaling.force.mean()];
    let mut b = DMatrix::zeros(dim, 6);
    for port in 0..2 {
        for axis in 0..3 {
            let mut e = Vector3::zeros();
            e[axis] = h * in_scale[port];
            let (hp, pp, hm, pm) = if port == 0 { (e, zero, -e, zero) } else { (zero, e, zero, -e) };
            let col = (step_map(session, &layout, &x0, &hp, &pp)? - step_map(session, &layout, &x0, &hm, &pm)?) / (e[axis] + e[axis]);
            for i in 0..dim {
                b[(i, 3 * port + axis)] = col[i] * in_scale[port] / layout.scale[i];
            }
        }
    }

    // outputs: handle velocity J q̇ and slave velocity, normalized
    let jac = cfg.master.jacobian(&x0.rows(0, n).into_owned());
    let s2 = cfg.scaling.motion.mean();
    let mut c = DMatrix::zeros(6, dim);
    for axis in 0..3 {
        for k in 0..n {
            c[(axis, n + k)] = jac[(axis, k)];
        }
        c[(3 + axis, 2 * n + 3 + axis)] = T::one();
    }
    let out_scale = [T::one(), s2];

    let half = lit::<T>(0.5);
    let cy = (&c * (DMatrix::identity(dim, dim) + &a)) * half;
    let dy = (&c * &b) * half;
    let to_c = |m: &DMatrix<T>| m.map(|v| Complex::new(v, T::zero()));
    let (ac, bc, cyc, dyc) = (to_c(&a), to_c(&b), to_c(&cy), to_c(&dy));

    let axes: Vec<usize> = if cfg.planar { vec![0, 1] } else { vec![0, 1, 2] };
    let mut per_axis: Vec<AxisHybrid<T>> = axes.iter().map(|&axis| AxisHybrid { axis, h: Vec::new() }).collect();
    for &w in frequencies {
        let z = Complex::new((w * dt).cos(), (w * dt).sin());
        let m = DMatrix::from_diagonal_element(dim, dim, z) - &ac;
        let resolvent = m
            .lu()
            .solve(&bc)
            .ok_or_else(|| TeleopError::Config(format!("loop is singular at ω = {:?}", w.to_f64())))?;
        let y = &cyc * resolvent + &dyc;
        for entry in per_axis.iter_mut() {
            let ax = entry.axis;
            // physical units: outputs × out_scale / in_scale
            let yv = |port_out: usize, port_in: usize| {
                y[(3 * port_out + ax, 3 * port_in + ax)] * (out_scale[port_out] / in_scale[port_in])
            };
            let (y11, y12, y21, y22) = (yv(0, 0), yv(0, 1), yv(1, 0), yv(1, 1));
            let h11 = Complex::new(T::one(), T::zero()) / y11;
            let h12 = -y12 / y11;
            let h21 = -y21 / y11;
            let h22 = y21 * y12 / y11 - y22;
            entry.h.push([h11, h12, h21, h22]);
        }
    }
    let spectral_radius = spectral_radius(&a);
    Ok(HybridTwoPort { frequencies: frequencies.to_vec(), axes: per_axis, spectral_radius })
}

/// Largest eigenvalue modulus of `a`. Falls back to Gelfand's formula on
/// repeated squares when the Schur iteration does not converge.
fn spectral_radius<T: Real>(a: &DMatrix<T>) -> T {
    if let Some(schur) = a.clone().try_schur(T::default_epsilon(), SCHUR_ITERATIONS) {
        return schur.complex_eigenvalues().iter().fold(T::zero(), |m, l| m.max(l.re.hypot(l.im)));
    }
    // rho = lim |A^k|^(1/k); keep the running log scale to avoid overflow.
    let mut p = a.clone();
    let mut log_scale = T::zero();
    let mut k = T::one();
    for _ in 0..GELFAND_SQUARINGS {
        let norm = p.norm();
        if norm == T::zero() {
            return T::zero();
        }
        p /= norm;
        log_scale += norm.ln() / k;
        p = &p * &p;
        k += k;
    }
    (log_scale + p.norm().ln() / k).exp()
}

/// Llewellyn's conditions over every axis and frequency.
pub fn llewellyn_margin<T: Real>(two_port: &HybridTwoPort<T>) -> LlewellynReport<T> {
    let mut report = LlewellynReport {
        stable: true,
        internally_stable: two_port.spectral_radius <= T::one() + lit(MARGINAL_POLE_SLACK),
        margin: T::max_value().unwrap_or_else(|| lit(f64::MAX)),
        min_re_h11: T::max_value().unwrap_or_else(|| lit(f64::MAX)),
        min_re_h22: T::max_value().unwrap_or_else(|| lit(f64::MAX)),
        worst_frequency: T::zero(),
        worst_axis: 0,
    };
    let two = lit::<T>(2.0);
    for axis in &two_port.axes {
        for (w, [h11, h12, h21, h22]) in two_port.frequencies.iter().zip(&axis.h) {
            let p = *h12 * *h21;
            let m = two * h11.re * h22.re - p.re.hypot(p.im) - p.re;
            if m < report.margin {
                report.margin = m;
                report.worst_frequency = *w;
                report.worst_axis = axis.axis;
            }
            report.min_re_h11 = report.min_re_h11.min(h11.re);
            report.min_re_h22 = report.min_re_h22.min(h22.re);
        }
    }
    report.stable = report.internally_stable
        && report.min_re_h11 >= T::zero() && report.min_re_h22 >= T::zero() && report.margin >= T::zero();
    report
}

/// Runs `session` with the hand released after giving the handle the
/// velocity `kick`, and returns `(initial energy, peak energy over the final
/// second)`.
pub fn energy_growth<T: Real>(mut session: TeleopSession<T>, kick: &Vector3<T>, duration: T) -> Result<(T, T), TeleopError> {
    let n = session.master.qd.len();
    for i in 0..n.min(3) {
        session.master.qd[i] = kick[i];
    }
    let initial = session.master_energy();
    let steps = (duration / session.dt()).round().to_usize().unwrap_or(0);
    let tail = (T::one() / session.dt()).round().to_usize().unwrap_or(1).min(steps);
    let mut peak = T::zero();
    for k in 0..steps {
        let frame = session.step(&OperatorCommand::released())?;
        if k + tail >= steps {
            peak = peak.max(frame.master_energy);
        }
    }
    Ok((initial, peak))
}
