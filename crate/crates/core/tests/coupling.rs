mod common;

use common::{random_cooperative, rng};
use hjweave::coupling::{
    certify, matrix_exponential, propagator, short_horizon, verify_positivity, CouplingMatrix, Horizon,
    HorizonOptions,
};
use hjweave::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn swap_pair() -> CouplingMatrix {
    CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap()
}

#[test]
fn symmetric_pair_exponential_matches_eigen_decomposition() {
    let e = (-2.0f64).exp();
    let expected = DMatrix::from_row_slice(2, 2, &[1.0 + e, 1.0 - e, 1.0 - e, 1.0 + e]) * 0.5;
    let got = matrix_exponential(&swap_pair(), -1.0).unwrap();
    assert!((got - expected).amax() < 1e-14);
}

#[test]
fn symmetric_pair_is_positive_at_all_sampled_times() {
    let a = swap_pair();
    assert!(verify_positivity(&a, &[0.01, 0.1, 1.0, 10.0]).unwrap());
    let b = propagator(&a, 1.0).unwrap();
    assert!(b.b_horizon().iter().all(|&x| x > 0.0));
}

#[test]
fn reducible_positivity_is_a_precondition_error() {
    let a = CouplingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(verify_positivity(&a, &[1.0]), Err(Error::Precondition(_))));
    assert!(matches!(verify_positivity(&swap_pair(), &[0.0]), Err(Error::Domain(_))));
}

#[test]
fn certification_examples() {
    let upper = CouplingMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let r = certify(&upper);
    assert!(!r.cooperative && !r.irreducible);
    assert_eq!(r.violations, vec![(0, 1)]);
    let cycle =
        CouplingMatrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![0.0, 1.0, -1.0], vec![-1.0, 0.0, 1.0]]).unwrap();
    let r = certify(&cycle);
    assert!(r.cooperative && r.irreducible);
}

/// `t̄` by scanning the margin on 10⁵ uniform points of `[-T, 0]`.
fn brute_force_horizon(a: &CouplingMatrix, c: f64, kappa: f64, cap: f64) -> f64 {
    let n = 100_000;
    let m = a.size();
    for k in 1..=n {
        let tau = -cap * k as f64 / n as f64;
        let g = matrix_exponential(a, tau).unwrap();
        let margin = (0..m)
            .map(|i| g[(i, i)] - c * (0..m).filter(|&j| j != i).map(|j| g[(i, j)].abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if margin < kappa {
            return cap * (k - 1) as f64 / n as f64;
        }
    }
    cap
}

#[test]
fn short_horizon_matches_dense_sampling() {
    let a = swap_pair();
    let got = short_horizon(&a, 1.0, 1.0, 0.5, HorizonOptions::default()).unwrap().value();
    let brute = brute_force_horizon(&a, 1.0, 0.5, 1.0);
    assert!((got - brute).abs() < 1e-5, "{got} vs {brute}");
    assert!((got - 0.5 * 2f64.ln()).abs() < 1e-5);
}

#[test]
fn derivative_residual_is_small() {
    let mut r = rng(3);
    for _ in 0..10 {
        let m = r.random_range(2..=5);
        let a = random_cooperative(&mut r, m, 1.5);
        let p = propagator(&a, 2.0).unwrap();
        let samples: Vec<f64> = (1..20).map(|k| 0.1 * k as f64).collect();
        assert!(p.derivative_residual(&samples, 1e-5).unwrap() < 1e-6);
    }
}

fn small_matrix(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    // Entries bounded by 5/m keep the row norm at most 5.
    let bound = 5.0 / m as f64;
    proptest::collection::vec(-bound..bound, m * m).prop_map(move |v| DMatrix::from_row_slice(m, m, &v))
}

fn cooperative(m: usize) -> impl Strategy<Value = CouplingMatrix> {
    (proptest::collection::vec(0.0..2.0f64, m), proptest::collection::vec(0.01..2.0f64, m * m)).prop_map(
        move |(diag, off)| {
            let a = DMatrix::from_fn(m, m, |i, j| if i == j { diag[i] } else { -off[i * m + j] });
            CouplingMatrix::new(a).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law(a in (1usize..=4).prop_flat_map(small_matrix), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let a = CouplingMatrix::new(a).unwrap();
        let whole = matrix_exponential(&a, s + t).unwrap();
        let split = matrix_exponential(&a, s).unwrap() * matrix_exponential(&a, t).unwrap();
        let scale = whole.amax().max(1.0);
        prop_assert!((whole - split).amax() <= 1e-10 * scale);
    }

    #[test]
    fn inverse_identity(a in (1usize..=6).prop_flat_map(cooperative), tau in 0.0..3.0f64) {
        let p = propagator(&a, 3.0).unwrap();
        let (b, c) = (p.b(tau).unwrap(), p.c(tau).unwrap());
        // Round-off in the product grows with the size of the factors.
        let row_norm = |m: &DMatrix<f64>| m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        let scale = (row_norm(&b) * row_norm(&c)).max(1.0);
        let id = b * c;
        prop_assert!((id - DMatrix::identity(a.size(), a.size())).amax() < 1e-10 * scale);
    }

    #[test]
    fn d_factors_through_b_and_c(a in (1usize..=4).prop_flat_map(cooperative), s in 0.0..1.0f64) {
        let t = 1.0;
        let p = propagator(&a, t).unwrap();
        let direct = matrix_exponential(&a, s - t).unwrap();
        prop_assert!((p.d(s).unwrap() - direct).amax() < 1e-10);
    }

    #[test]
    fn cooperative_irreducible_propagators_are_positive(a in (2usize..=6).prop_flat_map(cooperative)) {
        prop_assert!(verify_positivity(&a, &[0.01, 0.1, 1.0, 10.0]).unwrap());
    }

    #[test]
    fn short_horizon_is_monotone(
        a in (2usize..=3).prop_flat_map(small_matrix),
        c in 1.0..3.0f64,
        dc in 0.0..2.0f64,
        kappa in 0.05..0.5f64,
        dk in 0.0..0.4f64,
    ) {
        let a = CouplingMatrix::new(a).unwrap();
        let opts = HorizonOptions::default();
        let base = short_horizon(&a, c, c, kappa, opts).unwrap().value();
        let bigger_c = short_horizon(&a, c + dc, c + dc, kappa, opts).unwrap().value();
        let bigger_k = short_horizon(&a, c, c, (kappa + dk).min(0.95), opts).unwrap().value();
        // The bisection resolves each horizon to its tolerance.
        prop_assert!(bigger_c <= base + 2.0 * opts.tolerance);
        prop_assert!(bigger_k <= base + 2.0 * opts.tolerance);
    }
}

#[test]
fn zero_coupling_has_no_horizon_limit() {
    let h = short_horizon(&CouplingMatrix::zeros(3), 2.0, 2.0, 0.1, HorizonOptions::default()).unwrap();
    assert_eq!(h, Horizon::Unbounded);
}
