mod common;

use std::sync::Arc;

use common::{random_cooperative, random_lagrangian, random_vector, rng, vector};
use hjweave::caratheodory::{
    integrate_general, integrate_general_with, integrate_linear, integrate_linear_rk4, BoundaryMode,
    CoupledLagrangian, GeneralOptions, LinearCoupling, Trajectory,
};
use hjweave::coupling::CouplingMatrix;
use hjweave::lagrangian::{LagrangianRef, TonelliLagrangian, Vector};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn wavy_curve(r: &mut ChaCha8Rng, dim: usize, t: f64, n: usize) -> Trajectory {
    let (x0, amp, freq) = (random_vector(r, dim, 1.0), random_vector(r, dim, 1.0), random_vector(r, dim, 2.0));
    Trajectory::from_fn(t, n, |s| Vector::from_fn(dim, |k, _| x0[k] + amp[k] * (freq[k] * s).sin())).unwrap()
}

/// `u̇ = 2s² - α u`, `u(0) = u0`: the cost of `ξ = s²` under `½v²` with a
/// scalar coupling `α`.
fn parabola_cost(alpha: f64, u0: f64, s: f64) -> f64 {
    let particular = |s: f64| 2.0 / alpha * s * s - 4.0 / (alpha * alpha) * s + 4.0 / alpha.powi(3);
    (u0 - particular(0.0)) * (-alpha * s).exp() + particular(s)
}

#[test]
fn scalar_closed_form_converges_at_second_order() {
    let (alpha, u0, t) = (0.8, 0.3, 1.5);
    let a = CouplingMatrix::from_rows(&[vec![alpha]]).unwrap();
    let set: Vec<LagrangianRef> = vec![Arc::new(TonelliLagrangian::kinetic(1))];
    let data = DVector::from_element(1, u0);
    let mut errors = Vec::new();
    for n in [20, 40, 80, 160] {
        let curve = Trajectory::from_fn(t, n, |s| vector(&[s * s])).unwrap();
        let st = integrate_linear(&a, &set, &curve, &data, BoundaryMode::Initial).unwrap();
        let err = (0..=n).map(|k| (st.at(k)[0] - parabola_cost(alpha, u0, curve.time(k))).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.9..2.1).contains(&order), "{errors:?}");
    }
}

#[test]
fn general_path_matches_a_logistic_closed_form() {
    #[derive(Debug)]
    struct Logistic;
    impl CoupledLagrangian for Logistic {
        fn value(&self, _: &Vector, _: &Vector, u: &DVector<f64>) -> f64 {
            1.0 - u[0] * u[0]
        }
        fn grad_u(&self, _: &Vector, _: &Vector, u: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, -2.0 * u[0])
        }
        fn u_lipschitz(&self) -> f64 {
            2.0
        }
    }
    let curve = Trajectory::straight_line(2.0, &vector(&[0.0]), &vector(&[1.0]), 20).unwrap();
    let gs: Vec<Arc<dyn CoupledLagrangian>> = vec![Arc::new(Logistic)];
    let st = integrate_general(&gs, std::slice::from_ref(&curve), &DVector::zeros(1)).unwrap();
    for k in 0..=20 {
        assert!((st.at(k)[0] - curve.time(k).tanh()).abs() < 1e-8);
    }
}

#[test]
fn general_linear_coupling_agrees_with_the_propagator() {
    let mut r = rng(31);
    let a = random_cooperative(&mut r, 3, 1.0);
    let set: Vec<LagrangianRef> = (0..3).map(|_| random_lagrangian(&mut r, 2)).collect();
    let curve = wavy_curve(&mut r, 2, 1.2, 60);
    let data = DVector::from_vec(vec![0.2, -0.4, 1.0]);
    let linear = integrate_linear(&a, &set, &curve, &data, BoundaryMode::Initial).unwrap();
    let gs = LinearCoupling::system(&a, &set);
    let general = integrate_general_with(
        &gs,
        &vec![curve.clone(); 3],
        &data,
        BoundaryMode::Initial,
        &GeneralOptions { tolerance: 1e-12, max_halvings: 8 },
    )
    .unwrap();
    for k in 0..=60 {
        assert!((linear.at(k) - general.at(k)).amax() < 1e-9);
    }
}

#[test]
fn zero_coupling_is_the_plain_action() {
    let set: Vec<LagrangianRef> = (0..2).map(|_| Arc::new(TonelliLagrangian::kinetic(1)) as LagrangianRef).collect();
    let curve = Trajectory::straight_line(2.0, &vector(&[0.0]), &vector(&[3.0]), 10).unwrap();
    let st = integrate_linear(&CouplingMatrix::zeros(2), &set, &curve, &DVector::from_vec(vec![1.0, -1.0]), BoundaryMode::Initial)
        .unwrap();
    assert!((st.last()[0] - (1.0 + 2.25)).abs() < 1e-13);
    assert!((st.last()[1] - (-1.0 + 2.25)).abs() < 1e-13);
    assert!(st.to_csv().starts_with("s,u1,u2\n0,1,-1\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn propagator_matches_rk4(seed in any::<u64>(), m in 1usize..=3, dim in 1usize..=2) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, m, 1.5);
        let set: Vec<LagrangianRef> = (0..m).map(|_| random_lagrangian(&mut r, dim)).collect();
        let t = r.random_range(0.2..2.0);
        let curve = wavy_curve(&mut r, dim, t, 40);
        let data = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
        for mode in [BoundaryMode::Initial, BoundaryMode::Terminal] {
            let exact = integrate_linear(&a, &set, &curve, &data, mode).unwrap();
            let rk4 = integrate_linear_rk4(&a, &set, &curve, &data, mode).unwrap();
            for k in 0..=40 {
                prop_assert!((exact.at(k) - rk4.at(k)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn costs_are_affine_in_the_boundary_data(seed in any::<u64>(), m in 1usize..=3, lambda in -2.0..2.0f64) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, m, 1.0);
        let set: Vec<LagrangianRef> = (0..m).map(|_| random_lagrangian(&mut r, 1)).collect();
        let curve = wavy_curve(&mut r, 1, 1.0, 30);
        let a1 = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
        let a2 = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
        let mix = &a1 * lambda + &a2 * (1.0 - lambda);
        let run = |d: &DVector<f64>| integrate_linear(&a, &set, &curve, d, BoundaryMode::Initial).unwrap();
        let (u1, u2, um) = (run(&a1), run(&a2), run(&mix));
        for k in 0..=30 {
            let combo = u1.at(k) * lambda + u2.at(k) * (1.0 - lambda);
            prop_assert!((um.at(k) - combo).amax() < 1e-10);
        }
    }

    #[test]
    fn initial_and_terminal_modes_invert_each_other(seed in any::<u64>(), m in 1usize..=3) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, m, 1.0);
        let set: Vec<LagrangianRef> = (0..m).map(|_| random_lagrangian(&mut r, 2)).collect();
        let curve = wavy_curve(&mut r, 2, 1.5, 50);
        let data = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
        let forward = integrate_linear(&a, &set, &curve, &data, BoundaryMode::Initial).unwrap();
        let back = integrate_linear(&a, &set, &curve, forward.last(), BoundaryMode::Terminal).unwrap();
        for k in 0..=50 {
            prop_assert!((forward.at(k) - back.at(k)).amax() < 1e-8);
        }
    }
}
