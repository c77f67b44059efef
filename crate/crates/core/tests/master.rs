use microteleop_core::control::ScalingMatrices;
use microteleop_core::master::{master_terms, step_master, MasterModel, MasterState, TwoLinkParams};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

fn arm(friction: f64) -> MasterModel<f64> {
    MasterModel::TwoLink(TwoLinkParams {
        lengths: [0.3, 0.25],
        masses: [1.2, 0.8],
        inertias: [0.01, 0.006],
        friction: [friction, friction],
        transducer: [0.0, 0.0],
        stiffness: [0.0, 0.0],
        gravity: true,
    })
}

fn random_states(n: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new(-3.0, 3.0).unwrap();
    let rate = Uniform::new(-4.0, 4.0).unwrap();
    (0..n)
        .map(|_| {
            (
                DVector::from_vec(vec![angle.sample(&mut rng), angle.sample(&mut rng)]),
                DVector::from_vec(vec![rate.sample(&mut rng), rate.sample(&mut rng)]),
            )
        })
        .collect()
}

#[test]
fn inertia_rate_minus_twice_coriolis_is_skew() {
    let model = arm(0.0);
    let h = 1e-6;
    for (q, qd) in random_states(1000, 11) {
        // dD/dt along the motion, by central differences in time
        let d_dot: DMatrix<f64> = (model.inertia(&(&q + &qd * h)) - model.inertia(&(&q - &qd * h))) / (2.0 * h);
        let c = master_terms(&model, &q, &qd).coriolis;
        let n = &d_dot - &c * 2.0;
        let scale = d_dot.norm().max(c.norm()).max(1e-12);
        assert!((&n + n.transpose()).norm() <= 1e-6 * scale, "{n}");
    }
}

#[test]
fn unforced_master_energy_never_increases() {
    let scaling = ScalingMatrices::identity();
    for model in [arm(0.05), arm(0.0), MasterModel::default()] {
        let dof = model.dof();
        for (q, qd) in random_states(20, 5) {
            let mut s = MasterState { q: q.rows(0, dof.min(2)).into_owned(), qd: qd.rows(0, dof.min(2)).into_owned() };
            if dof == 3 {
                s = MasterState { q: DVector::zeros(3), qd: DVector::from_vec(vec![qd[0], qd[1], 0.3]) };
            }
            let u = DVector::zeros(dof);
            for _ in 0..2000 {
                let (next, report) = step_master(&model, &s, &u, &Vector3::zeros(), &scaling, 1e-3).unwrap();
                assert!(report.energy_after - report.energy_before <= 1e-12, "{report:?}");
                s = next;
            }
        }
    }
}
