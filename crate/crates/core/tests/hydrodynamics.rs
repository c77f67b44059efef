use std::f64::consts::PI;
use std::time::Instant;

use microteleop_core::hydrodynamics::{resistance_tensor, stokeslet_velocity, FluidMedium, ParticleShape};
use microteleop_core::slave::{step_slave, BodyProperties, DynamicsMode, Environment, RigidBodyState};
use nalgebra::Vector3;

/// Composite Simpson on [0, 1).
fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0 - 1e-15);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(k as f64 * h);
    }
    s * h / 3.0
}

/// Ellipsoid shape integrals (χ, α₁, α₂, α₃) by quadrature, with
/// λ = c·(t/(1−t))² mapping [0, ∞) onto [0, 1).
fn shape_integrals(a: [f64; 3]) -> (f64, [f64; 3]) {
    let c = a[0] * a[0];
    let map = |t: f64| {
        let u = t / (1.0 - t);
        let lambda = c * u * u;
        let jac = 2.0 * c * t / (1.0 - t).powi(3);
        let delta = ((a[0] * a[0] + lambda) * (a[1] * a[1] + lambda) * (a[2] * a[2] + lambda)).sqrt();
        (lambda, jac, delta)
    };
    let chi = simpson(
        |t| {
            let (_, j, d) = map(t);
            j / d
        },
        20000,
    );
    let alpha = [0, 1, 2].map(|i| {
        simpson(
            |t| {
                let (l, j, d) = map(t);
                j / ((a[i] * a[i] + l) * d)
            },
            20000,
        )
    });
    (chi, alpha)
}

#[test]
fn prolate_spheroid_matches_ellipsoid_quadrature() {
    let mu = 2.5e-3;
    let fluid = FluidMedium::new(mu, 1000.0).unwrap();
    for (a, b) in [(30e-6, 20e-6), (10e-6, 9.9e-6), (50e-6, 5e-6), (1e-6, 0.5e-6)] {
        let r = resistance_tensor(&ParticleShape::ProlateSpheroid { semi_major: a, semi_minor: b }, &fluid);
        let axes = [a, b, b];
        let (chi, alpha) = shape_integrals(axes);
        for i in 0..3 {
            let trans = 16.0 * PI * mu / (chi + axes[i] * axes[i] * alpha[i]);
            assert!((r.translational[(i, i)] / trans - 1.0).abs() < 1e-7, "trans {i} {a} {b}: {} vs {trans}", r.translational[(i, i)]);
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let rot = 16.0 * PI * mu * (axes[j].powi(2) + axes[k].powi(2))
                / (3.0 * (axes[j].powi(2) * alpha[j] + axes[k].powi(2) * alpha[k]));
            assert!((r.rotational[(i, i)] / rot - 1.0).abs() < 1e-7, "rot {i} {a} {b}: {} vs {rot}", r.rotational[(i, i)]);
        }
    }
}

#[test]
fn nearly_spherical_spheroid_approaches_stokes() {
    let fluid: FluidMedium<f64> = FluidMedium::water();
    let a = 20e-6;
    let r = resistance_tensor(&ParticleShape::ProlateSpheroid { semi_major: a, semi_minor: a * (1.0 - 1e-12) }, &fluid);
    assert!((r.translational[(0, 0)] / (6.0 * PI * 1e-3 * a) - 1.0).abs() < 1e-9);
    assert!((r.rotational[(1, 1)] / (8.0 * PI * 1e-3 * a.powi(3)) - 1.0).abs() < 1e-9);
}

#[test]
fn stokes_terminal_velocity() {
    let t0 = Instant::now();
    let fluid: FluidMedium<f64> = FluidMedium::water();
    let body = BodyProperties::uniform(ParticleShape::Sphere { radius: 50e-6 }, fluid.density, None).unwrap();
    let env = Environment { external_force: Vector3::new(9.4248e-11, 0.0, 0.0), ..Environment::free(&fluid) };
    let start = RigidBodyState::at_rest(Vector3::zeros());

    let (qs, _) = step_slave(&start, &body, &env, 1e-3, DynamicsMode::QuasiStatic).unwrap();
    assert!((qs.velocity.x / 1.0e-4 - 1.0).abs() < 1e-3, "{}", qs.velocity.x);

    let tau = body.mass() / (6.0 * PI * fluid.viscosity * 50e-6);
    let dt = tau / 100.0;
    let mut s = start;
    for _ in 0..1000 {
        s = step_slave(&s, &body, &env, dt, DynamicsMode::SecondOrder).unwrap().0;
    }
    assert!((s.velocity.x / qs.velocity.x - 1.0).abs() < 1e-3);
    assert!(t0.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn stokeslet_oracle() {
    let fluid: FluidMedium<f64> = FluidMedium::water();
    let f: Vector3<f64> = Vector3::new(1e-10, -2e-11, 3e-11);
    let src = Vector3::new(1e-5, 0.0, 0.0);
    let p = Vector3::new(1.2e-4, 4e-5, -2e-5);
    let r = p - src;
    let d = r.norm();
    let expected = (f / d + r * f.dot(&r) / d.powi(3)) / (8.0 * PI * fluid.viscosity);
    let u = stokeslet_velocity(&p, &src, &f, &fluid).unwrap();
    assert!((u - expected).norm() <= 1e-12 * expected.norm());
    // reciprocity: swapping source and target leaves the tensor unchanged
    let back = stokeslet_velocity(&src, &p, &f, &fluid).unwrap();
    assert!((u - back).norm() <= 1e-12 * u.norm());
    assert!(stokeslet_velocity(&src, &src, &f, &fluid).is_err());
}
