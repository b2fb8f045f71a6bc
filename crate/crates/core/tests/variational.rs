mod common;

use common::{fd_gradient, harmonic, kinetic, random_cooperative, random_lagrangian, random_quadratic, random_vector, rng, vector};
use hjweave::caratheodory::{integrate_linear, BoundaryMode, Trajectory};
use hjweave::coupling::{matrix_exponential, CouplingMatrix};
use hjweave::lagrangian::{LagrangianRef, Vector};
use hjweave::Error;
use hjweave::variational::{
    action_gradient, discretized_action, el_residual, minimize_fundamental, minimize_fundamental_terminal,
    minimize_fundamental_terminal_direct, weighted_el_residual, VariationalOptions, WeightedAction,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

/// Least action of `½v² + ½ω²x²` between `x0` and `x1` in time `t`.
fn oscillator_action(omega: f64, t: f64, x0: f64, x1: f64) -> f64 {
    let (c, s) = ((omega * t).cosh(), (omega * t).sinh());
    omega / (2.0 * s) * ((x0 * x0 + x1 * x1) * c - 2.0 * x0 * x1)
}

fn opts(segments: usize) -> VariationalOptions {
    VariationalOptions { segments, ..Default::default() }
}

#[test]
fn minimum_converges_to_the_oscillator_action_at_second_order() {
    let omega = 1.3;
    let set = vec![harmonic(1, 1.0, omega * omega)];
    let a = CouplingMatrix::zeros(1);
    let exact = oscillator_action(omega, 1.5, -0.4, 0.9);
    let errors: Vec<f64> = [25, 50, 100]
        .iter()
        .map(|&n| {
            let sol = minimize_fundamental(0, 1.5, &vector(&[-0.4]), &vector(&[0.9]), &DVector::zeros(1), &a, &set, &opts(n))
                .unwrap();
            (sol.value - exact).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..2.2).contains(&order), "{errors:?}");
    }
    assert!(errors[2] < 1e-4);
}

#[test]
fn zero_row_sums_with_one_lagrangian_reduce_to_the_single_problem() {
    let omega = 0.8;
    let set = vec![harmonic(1, 1.0, omega * omega); 2];
    let a = CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-0.5, 0.5]]).unwrap();
    let data = DVector::from_vec(vec![0.3, -0.6]);
    let (t, x, y) = (1.2, vector(&[0.2]), vector(&[-0.7]));
    let b = matrix_exponential(&a, -t).unwrap();
    let single = minimize_fundamental(0, t, &x, &y, &DVector::zeros(1), &CouplingMatrix::zeros(1), &set[..1], &opts(200))
        .unwrap();
    for i in 0..2 {
        let sol = minimize_fundamental(i, t, &x, &y, &data, &a, &set, &opts(200)).unwrap();
        let expected = single.value + b.row(i).transpose().dot(&data) - data[i];
        assert!((sol.value - expected).abs() < 1e-9, "{} vs {expected}", sol.value);
        assert!(sol.minimizer.max_distance(&single.minimizer) < 1e-6);
    }
}

#[test]
fn herglotz_residual_is_second_order_on_the_relaxation_curve() {
    let (alpha, v0) = (0.7, 1.4);
    let a = CouplingMatrix::from_rows(&[vec![alpha]]).unwrap();
    let set = kinetic(1, 1);
    let residual = |n| {
        let c = Trajectory::from_fn(2.0, n, |s| vector(&[v0 * (1.0 - (-alpha * s).exp()) / alpha])).unwrap();
        el_residual(0, &c, &a, &set).unwrap()
    };
    let r: Vec<f64> = [40, 80, 160].iter().map(|&n| residual(n)).collect();
    for w in r.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..2.2).contains(&order), "{r:?}");
    }
}

#[test]
fn coupled_minimizer_solves_the_weighted_euler_lagrange_equation() {
    let a = CouplingMatrix::from_rows(&[vec![0.6, -0.4], vec![-0.9, 0.2]]).unwrap();
    let set = vec![harmonic(2, 1.0, 0.5), harmonic(2, 2.0, -0.2)];
    let data = DVector::from_vec(vec![0.1, 0.4]);
    for i in 0..2 {
        let sol = minimize_fundamental(i, 1.0, &vector(&[0.0, 0.3]), &vector(&[1.0, -0.5]), &data, &a, &set, &opts(200))
            .unwrap();
        let r = weighted_el_residual(i, &sol.minimizer, &a, &set).unwrap();
        assert!(r < 1e-4, "equation {i}: {r:e}");
    }
}

#[test]
fn discretized_action_is_the_propagated_cost() {
    let mut r = rng(4);
    let a = random_cooperative(&mut r, 3, 1.0);
    let set: Vec<LagrangianRef> = (0..3).map(|_| random_lagrangian(&mut r, 2)).collect();
    let curve = Trajectory::from_fn(1.3, 80, |s| vector(&[s.sin(), s * s - 0.2])).unwrap();
    let data = DVector::from_vec(vec![0.5, -0.1, 0.2]);
    let costs = integrate_linear(&a, &set, &curve, &data, BoundaryMode::Initial).unwrap();
    for i in 0..3 {
        let u = discretized_action(i, &curve, &a, &set, &data).unwrap();
        assert!((u - costs.last()[i]).abs() < 1e-10);
    }
}

#[test]
fn symmetric_terminal_problem_equals_the_forward_one() {
    let mut r = rng(17);
    let set: Vec<LagrangianRef> = (0..2).map(|_| random_lagrangian(&mut r, 1)).collect();
    let a = CouplingMatrix::zeros(2);
    let data = DVector::from_vec(vec![0.7, -0.3]);
    let (x, y) = (vector(&[-0.5]), vector(&[0.6]));
    for i in 0..2 {
        let fwd = minimize_fundamental(i, 1.0, &x, &y, &data, &a, &set, &opts(100)).unwrap();
        let term = minimize_fundamental_terminal(i, 1.0, &x, &y, &data, &a, &set, &opts(100)).unwrap();
        assert!((fwd.value - term.value).abs() < 1e-9);
        assert!(fwd.minimizer.max_distance(&term.minimizer) < 1e-6);
    }
}

#[test]
fn coupled_terminal_routes_agree() {
    let a = CouplingMatrix::from_rows(&[vec![0.3, -0.2], vec![-0.1, 0.2]]).unwrap();
    let set = vec![harmonic(1, 1.0, 0.4), harmonic(1, 1.5, -0.1)];
    let data = DVector::from_vec(vec![0.2, -0.5]);
    for i in 0..2 {
        let rev = minimize_fundamental_terminal(i, 1.0, &vector(&[0.1]), &vector(&[0.8]), &data, &a, &set, &opts(100)).unwrap();
        let direct =
            minimize_fundamental_terminal_direct(i, 1.0, &vector(&[0.1]), &vector(&[0.8]), &data, &a, &set, &opts(100)).unwrap();
        assert!((rev.value - direct.value).abs() < 1e-6);
        assert!((rev.costs.last()[i] - data[i]).abs() < 1e-12);
    }
}

#[test]
fn strong_terminal_coupling_loses_convexity() {
    // exp(A) has off-diagonal entries near -27, which outweigh the heavier
    // second mass in the terminal weights of the first equation.
    let a = CouplingMatrix::from_rows(&[vec![2.0, -2.0], vec![-2.0, 2.0]]).unwrap();
    let set = vec![harmonic(1, 0.5, 0.0), harmonic(1, 2.0, 0.0)];
    let data = DVector::zeros(2);
    let err = minimize_fundamental_terminal_direct(0, 1.0, &vector(&[0.0]), &vector(&[1.0]), &data, &a, &set, &opts(50)).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)), "{err}");
}

#[test]
fn action_gradient_is_local() {
    let mut r = rng(23);
    let a = random_cooperative(&mut r, 2, 1.0);
    let set: Vec<LagrangianRef> = (0..2).map(|_| random_lagrangian(&mut r, 2)).collect();
    let data = DVector::zeros(2);
    let base = Trajectory::from_fn(1.0, 20, |s| vector(&[s.cos(), 2.0 * s])).unwrap();
    let mut nodes = base.nodes().to_vec();
    nodes[10] += vector(&[0.1, -0.2]);
    let moved = Trajectory::new(1.0, nodes).unwrap();
    let g0 = action_gradient(0, &base, &a, &set, &data).unwrap();
    let g1 = action_gradient(0, &moved, &a, &set, &data).unwrap();
    // Interior node l sits at index l - 1; only nodes 9, 10, 11 see node 10.
    for (idx, (p, q)) in g0.iter().zip(&g1).enumerate() {
        let node = idx + 1;
        if (9..=11).contains(&node) {
            assert!((p - q).amax() > 0.0);
        } else {
            assert_eq!(p, q, "node {node}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn boundary_data_shifts_the_value_and_keeps_the_curve(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, 2, 1.0);
        let set: Vec<LagrangianRef> = (0..2).map(|_| random_quadratic(&mut r, 1)).collect();
        let t = r.random_range(0.5..1.5);
        let (x, y) = (random_vector(&mut r, 1, 1.0), random_vector(&mut r, 1, 1.0));
        let d1 = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let d2 = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let b = matrix_exponential(&a, -t).unwrap();
        let s1 = minimize_fundamental(0, t, &x, &y, &d1, &a, &set, &opts(100)).unwrap();
        let s2 = minimize_fundamental(0, t, &x, &y, &d2, &a, &set, &opts(100)).unwrap();
        let delta = &d2 - &d1;
        let shift = b.row(0).transpose().dot(&delta) - delta[0];
        prop_assert!((s2.value - s1.value - shift).abs() < 1e-8);
        prop_assert!(s1.minimizer.max_distance(&s2.minimizer) < 1e-8);
    }

    #[test]
    fn minimization_improves_on_the_straight_line(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, 2, 1.0);
        let set: Vec<LagrangianRef> = (0..2).map(|_| random_lagrangian(&mut r, 2)).collect();
        let (x, y) = (random_vector(&mut r, 2, 1.0), random_vector(&mut r, 2, 1.0));
        let data = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let sol = minimize_fundamental(1, 1.0, &x, &y, &data, &a, &set, &opts(60)).unwrap();
        let line = Trajectory::straight_line(1.0, &x, &y, 60).unwrap();
        let line_value = discretized_action(1, &line, &a, &set, &data).unwrap() - data[1];
        prop_assert!(sol.value <= line_value + 1e-12);
        let h = &sol.action_history;
        prop_assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
    }

    #[test]
    fn terminal_routes_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, 2, 0.5);
        let set: Vec<LagrangianRef> = (0..2).map(|_| random_quadratic(&mut r, 1)).collect();
        let (x, y) = (random_vector(&mut r, 1, 1.0), random_vector(&mut r, 1, 1.0));
        let data = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let i = r.random_range(0..2);
        let line = Trajectory::straight_line(1.0, &x, &y, 100).unwrap();
        let convex = WeightedAction::terminal(i, &a, &set, 1.0, 100)
            .unwrap()
            .velocity_hessians(line.nodes())
            .iter()
            .all(|hv| hv.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        if !convex {
            let err = minimize_fundamental_terminal(i, 1.0, &x, &y, &data, &a, &set, &opts(100)).unwrap_err();
            prop_assert!(matches!(err, Error::Precondition(_)));
            return Ok(());
        }
        let rev = minimize_fundamental_terminal(i, 1.0, &x, &y, &data, &a, &set, &opts(100)).unwrap();
        let direct = minimize_fundamental_terminal_direct(i, 1.0, &x, &y, &data, &a, &set, &opts(100)).unwrap();
        prop_assert!((rev.value - direct.value).abs() < 1e-6, "{} vs {}", rev.value, direct.value);
        prop_assert!(rev.minimizer.max_distance(&direct.minimizer) < 1e-5);
    }

    #[test]
    fn action_gradient_matches_finite_differences(seed in any::<u64>(), dim in 1usize..=2) {
        let mut r = rng(seed);
        let a = random_cooperative(&mut r, 2, 1.0);
        let set: Vec<LagrangianRef> = (0..2).map(|_| random_lagrangian(&mut r, dim)).collect();
        let data = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let nodes: Vec<Vector> = (0..=12).map(|_| random_vector(&mut r, dim, 1.0)).collect();
        let curve = Trajectory::new(0.8, nodes.clone()).unwrap();
        let grad = action_gradient(0, &curve, &a, &set, &data).unwrap();
        let l = r.random_range(1..12);
        let at = |z: &Vector| {
            let mut n = nodes.clone();
            n[l] = z.clone();
            discretized_action(0, &Trajectory::new(0.8, n).unwrap(), &a, &set, &data).unwrap()
        };
        let fd = fd_gradient(at, &nodes[l], 1e-5);
        prop_assert!((&grad[l - 1] - &fd).amax() < 1e-6 * (1.0 + fd.amax()), "{} vs {}", grad[l - 1], fd);
    }
}
