use approx::assert_relative_eq;
use microteleop_core::control::ScalingMatrices;
use microteleop_core::master::MasterModel;
use microteleop_core::teleop::{
    energy_growth, linearize_two_port, llewellyn_margin, log_grid, CouplingMode, TeleopConfig, TeleopSession, Tether,
};
use nalgebra::{Matrix3, Vector3};

fn bare_master(friction: f64) -> MasterModel<f64> {
    MasterModel::PointMass {
        inertia: Vector3::repeat(0.1),
        friction: Vector3::repeat(friction),
        stiffness: Vector3::zeros(),
        transducer: Vector3::zeros(),
    }
}

fn ideal(friction: f64) -> TeleopConfig<f64> {
    let mut cfg = TeleopConfig { coupling: CouplingMode::Ideal, master: bare_master(friction), scaling: ScalingMatrices::identity(), ..TeleopConfig::default() };
    cfg.force_gains.k_damp = Matrix3::zeros();
    cfg
}

pub fn unstable() -> TeleopConfig<f64> {
    let mut cfg = TeleopConfig { master: bare_master(0.0), scaling: ScalingMatrices::uniform(1e9, 1e-3), ..TeleopConfig::default() };
    cfg.force_gains.k_damp = Matrix3::zeros();
    cfg.tether = Some(Tether { stiffness: 1e-3, anchor: Vector3::zeros() });
    cfg
}

fn grid() -> Vec<f64> {
    log_grid(0.1, 1570.0, 120)
}

#[test]
fn ideal_transparent_loop_is_marginal() {
    let s = TeleopSession::new(ideal(0.0)).unwrap();
    let h = linearize_two_port(&s, &grid()).unwrap();
    for axis in &h.axes {
        for [h11, h12, h21, h22] in &axis.h {
            assert!(h11.re.abs() < 1e-9, "{h11}");
            assert!(h22.norm() < 1e-9, "{h22}");
            assert!((h12 * h21 + 1.0).norm() < 1e-9, "{}", h12 * h21);
        }
    }
    let r = llewellyn_margin(&h);
    println!("ideal margin {:e}", r.margin);
    assert!(r.margin.abs() <= 1e-9);
}

#[test]
fn master_damping_is_re_h11() {
    let s = TeleopSession::new(ideal(0.7)).unwrap();
    let h = linearize_two_port(&s, &grid()).unwrap();
    for axis in &h.axes {
        for hh in &axis.h {
            assert_relative_eq!(hh[0].re, 0.7, max_relative = 1e-6);
        }
    }
}

#[test]
fn default_loop_is_stable() {
    let s = TeleopSession::new(TeleopConfig::default()).unwrap();
    let h = linearize_two_port(&s, &grid()).unwrap();
    let r = llewellyn_margin(&h);
    println!("default {r:?}");
    assert!(r.stable);
    // regression value for the shipped defaults
    assert_relative_eq!(r.margin, 477.3556784404426, max_relative = 1e-6);
}

#[test]
fn high_force_scale_without_damping_is_unstable_and_diverges() {
    let s = TeleopSession::new(unstable()).unwrap();
    let h = linearize_two_port(&s, &grid()).unwrap();
    let r = llewellyn_margin(&h);
    println!("unstable {r:?}");
    assert!(!r.stable);
    assert!(h.spectral_radius > 1.0);
    let (e0, e1) = energy_growth(s, &Vector3::new(1e-3, 0.0, 0.0), 10.0).unwrap();
    println!("energy {e0:e} -> {e1:e}");
    assert!(e1 >= 10.0 * e0);
}
