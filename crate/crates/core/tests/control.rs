use microteleop_core::control::{
    observe_force, position_control_law, saturate_force, KnownForces, ObserverState, PositionGains, Reference,
};
use microteleop_core::hydrodynamics::{FluidMedium, ParticleShape};
use microteleop_core::magnetics::Magnetization;
use microteleop_core::slave::{step_slave, BodyProperties, DynamicsMode, Environment, RigidBodyState};
use microteleop_core::teleop::{OperatorCommand, TeleopConfig, TeleopSession};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

const DT: f64 = 1e-3;

fn pressed(contact: f64) -> KnownForces<f64> {
    // slave at rest against a wall: actuation balances the contact exactly
    KnownForces { drag: Vector3::zeros(), actuation: Vector3::new(-contact, 0.0, 0.0), gravity: Vector3::zeros() }
}

#[test]
fn observer_step_response_follows_first_order_recurrence() {
    let bw = 50.0;
    let mut obs = ObserverState::new(bw);
    let n = (3.0 / (bw * DT)).round() as i32;
    for _ in 0..n {
        obs = observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &pressed(1e-6), DT).unwrap();
    }
    let expected = 1e-6 * (1.0 - (1.0 - bw * DT).powi(n));
    assert!((obs.estimate.x - expected).abs() <= 1e-12 * 1e-6);
    // four time constants are enough for 2 %
    for _ in 0..n / 3 {
        obs = observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &pressed(1e-6), DT).unwrap();
    }
    assert!((obs.estimate.x - 1e-6).abs() < 0.02 * 1e-6);
}

#[test]
fn observer_estimate_decays_without_contact() {
    let mut obs = ObserverState::new(50.0);
    obs.estimate = Vector3::new(1e-6, -1e-6, 0.0);
    for _ in 0..200 {
        obs = observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &pressed(0.0), DT).unwrap();
    }
    assert!(obs.estimate.norm() < 1e-9);
}

#[test]
fn momentum_observer_recovers_constant_disturbance() {
    // unit mass pushed by a hidden 1e-6 N with nothing else known
    let (bw, mass, f) = (50.0, 1e-6, 1e-6);
    let mut obs = ObserverState::new(bw);
    let mut v = 0.0;
    let known = KnownForces { drag: Vector3::zeros(), actuation: Vector3::zeros(), gravity: Vector3::zeros() };
    for _ in 0..400 {
        v += f / mass * DT;
        obs = observe_force(&obs, DynamicsMode::SecondOrder, &Vector3::new(mass * v, 0.0, 0.0), &known, DT).unwrap();
    }
    assert!((obs.estimate.x / f - 1.0).abs() < 1e-3, "{}", obs.estimate.x);
}

#[test]
fn observer_rejects_too_coarse_a_step() {
    let obs = ObserverState::new(50.0);
    assert!(observe_force(&obs, DynamicsMode::QuasiStatic, &Vector3::zeros(), &pressed(1e-6), 0.05).is_err());
}

#[test]
fn ramp_tracking_matches_linear_recurrence() {
    let fluid: FluidMedium<f64> = FluidMedium::water();
    let body = BodyProperties::uniform(ParticleShape::Sphere { radius: 50e-6 }, fluid.density, None).unwrap();
    let r = 6.0 * std::f64::consts::PI * fluid.viscosity * 50e-6;
    let tau = 1e-3;
    let gains = PositionGains { k_p: Matrix3::identity() * 1e4, k_i: Matrix3::zeros(), k_d: Matrix3::identity() * 500.0, state: Default::default() };
    let (kp, kd) = (gains.k_p[(0, 0)], gains.k_d[(0, 0)]);
    let mut gains = gains;
    let v0 = 2e-5;
    let e0 = 3e-6;

    let mut slave = RigidBodyState::at_rest(Vector3::new(-e0, 0.0, 0.0));
    let mut measured_velocity = Vector3::zeros();
    let steps = 1500;
    let mut errors = Vec::new();
    for k in 0..steps {
        let t = k as f64 * DT;
        let reference = Reference { position: Vector3::new(v0 * t, 0.0, 0.0), velocity: Vector3::new(v0, 0.0, 0.0), acceleration: Vector3::zeros() };
        errors.push(reference.position.x - slave.position.x);
        let u = position_control_law(&(Matrix3::identity() * (r * tau)), &(reference.velocity * r), &reference, &slave.position, &measured_velocity, &mut gains, DT, false);
        let env = Environment { external_force: u, ..Environment::free(&fluid) };
        slave = step_slave(&slave, &body, &env, DT, DynamicsMode::QuasiStatic).unwrap().0;
        measured_velocity = slave.velocity;
    }

    // oracle: state (e_k, w_{k-1}) with w = v − v0 evolves by a fixed matrix
    let a = Matrix2::new(1.0 - DT * tau * kp, DT * tau * kd, tau * kp, -tau * kd);
    let x0 = Vector2::new(e0, -v0);
    for (k, e) in errors.iter().enumerate() {
        let expected = (a.pow(k as u32) * x0).x;
        assert!((e - expected).abs() <= 1e-9 * e0, "step {k}: {e} vs {expected}");
    }
    assert!(errors.last().unwrap().abs() < 1e-3 * e0);
}

#[test]
fn saturation_clamps_magnitude_and_keeps_direction() {
    let f: Vector3<f64> = Vector3::new(3e-5, -4e-5, 0.0);
    let (c, hit) = saturate_force(&f, 1e-5);
    assert!(hit);
    assert!((c.norm() - 1e-5).abs() < 1e-20);
    assert!((c.normalize() - f.normalize()).norm() < 1e-15);
    let (same, hit) = saturate_force(&(f * 0.1), 1e-5);
    assert!(!hit);
    assert_eq!(same, f * 0.1);
}

#[test]
fn integrals_are_frozen_while_saturated() {
    let mut cfg = TeleopConfig::default();
    cfg.slave.magnetization = Some(Magnetization::Saturated { moment_density: 1e6 });
    cfg.max_gradient = 100.0;
    cfg.position_gains.k_i = Matrix3::identity() * 1e3;
    cfg.force_gains.k_i = Matrix3::identity() * 1.0;
    cfg.force_gains.f_max = 1e-12;
    let mut s = TeleopSession::new(cfg).unwrap();
    s.slave.position = Vector3::new(-2e-4, 0.0, 0.0);
    let f_max = s.config().force_gains.f_max;
    let mut saturated_steps = 0;
    let mut previous = None;
    for _ in 0..200 {
        let frame = s.step(&OperatorCommand::hold(Vector3::zeros())).unwrap();
        assert!(frame.commanded_force.norm() <= f_max * (1.0 + 1e-12));
        let now = (s.position_gains.state.integral, s.force_gains.state.integral);
        if frame.flags.saturation {
            if let Some((was_sat, p, f)) = previous {
                if was_sat {
                    saturated_steps += 1;
                    assert_eq!(now.0, p);
                    assert_eq!(now.1, f);
                }
            }
        }
        previous = Some((frame.flags.saturation, now.0, now.1));
    }
    assert!(saturated_steps > 10);
}
