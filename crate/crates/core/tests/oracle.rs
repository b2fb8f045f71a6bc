mod common;

use common::{harmonic, kinetic, quartic, rng};
use hjweave::coupling::{matrix_exponential, CouplingMatrix};
use hjweave::lagrangian::{LagrangianRef, Potential, Vector};
use hjweave::lax_oleinik::{Datum, Grid, InitialData, ValueField};
use hjweave::oracle::{compare, numerical_hamiltonian, solve_system, solve_system_positive, Boundary, SchemeConfig};
use proptest::prelude::*;
use rand::Rng;

fn periodic_data() -> InitialData {
    InitialData::new(
        vec![
            Datum::Cosine { amplitude: 0.5, wavenumber: vec![1.0], phase: 0.0 },
            Datum::Cosine { amplitude: 0.3, wavenumber: vec![2.0], phase: 0.4 },
        ],
        1,
    )
    .unwrap()
}

/// Potentials on the periodic grid must themselves be 2π-periodic, or the
/// Hamiltonian jumps across the seam.
fn periodic_set() -> Vec<LagrangianRef> {
    vec![
        quartic(1, 0.2, Potential::Cosine { amplitude: 0.3, wavenumber: Vector::from_element(1, 1.0) }),
        harmonic(1, 2.0, 0.0),
    ]
}

fn periodic_config(points: usize, t: f64) -> SchemeConfig {
    let grid = Grid::line(0.0, 2.0 * std::f64::consts::PI, points).unwrap();
    SchemeConfig { boundary: Boundary::Periodic, alpha: Some(vec![1.0, 1.0]), ..SchemeConfig::new(grid, t) }
}

#[test]
fn scheme_converges_at_first_order_on_smooth_data() {
    let a = CouplingMatrix::from_rows(&[vec![0.8, -0.8], vec![-0.5, 0.5]]).unwrap();
    let set = vec![harmonic(1, 1.0, 0.0), harmonic(1, 1.5, 0.0)];
    let (phi, t) = (periodic_data(), 0.3);
    let fine_points = 6401;
    let (reference, _) = solve_system(&set, &a, &phi, &periodic_config(fine_points, t)).unwrap();
    let sizes = [51usize, 101, 201, 401];
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&p| {
            let (coarse, _) = solve_system(&set, &a, &phi, &periodic_config(p, t)).unwrap();
            let stride = (fine_points - 1) / (p - 1);
            (0..2)
                .flat_map(|i| (0..p).map(move |k| (i, k)))
                .map(|(i, k)| (coarse.value(i, k) - reference.value(i, k * stride)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|&p| ((p - 1) as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((0.8..=1.2).contains(&-slope), "order {} from {errors:?}", -slope);
}

#[test]
fn constant_data_decay_through_the_exact_coupling_step() {
    let a = CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let set = kinetic(2, 1);
    let phi = InitialData::constants(&[1.0, 0.0]);
    let config = SchemeConfig::new(Grid::line(-1.0, 1.0, 21).unwrap(), 1.0);
    let (neg, _) = solve_system(&set, &a, &phi, &config).unwrap();
    let (pos, _) = solve_system_positive(&set, &a, &phi, &config).unwrap();
    let (b, c) = (matrix_exponential(&a, -1.0).unwrap(), matrix_exponential(&a, 1.0).unwrap());
    for k in 0..21 {
        for i in 0..2 {
            assert!((neg.value(i, k) - b[(i, 0)]).abs() < 1e-12);
            assert!((pos.value(i, k) - c[(i, 0)]).abs() < 1e-12);
        }
    }
}

#[test]
fn positive_system_mirrors_the_negative_one() {
    // With H even in p, the positive system for (φ, A) is minus the negative
    // system for (-φ, -A).
    let a = CouplingMatrix::from_rows(&[vec![0.4, -0.4], vec![-0.2, 0.2]]).unwrap();
    let set = periodic_set();
    let phi = periodic_data();
    let config = SchemeConfig { alpha: Some(vec![2.0, 2.0]), ..periodic_config(101, 0.3) };
    let (pos, _) = solve_system_positive(&set, &a, &phi, &config).unwrap();
    let (neg, _) = solve_system(&set, &a.negated(), &phi.negated(), &config).unwrap();
    assert!(compare(&pos, &neg.negated()).unwrap().linf < 1e-12);
}

#[test]
fn fixed_viscosity_below_the_wave_speed_is_a_stability_error() {
    let set = kinetic(2, 1);
    let a = CouplingMatrix::zeros(2);
    let config = SchemeConfig { alpha: Some(vec![0.01, 0.01]), ..periodic_config(51, 0.3) };
    let err = solve_system(&set, &a, &periodic_data(), &config).unwrap_err();
    assert!(matches!(err, hjweave::Error::Stability(_)), "{err}");
}

#[test]
fn numerical_hamiltonian_is_consistent() {
    let ls: Vec<LagrangianRef> =
        vec![harmonic(1, 1.3, 0.4), quartic(1, 0.3, Potential::Cosine { amplitude: 0.2, wavenumber: Vector::from_element(1, 1.5) })];
    let mut r = rng(3);
    for l in &ls {
        for _ in 0..200 {
            let (x, p) = (r.random_range(-2.0..2.0), r.random_range(-3.0..3.0));
            let h = l.hamiltonian(&Vector::from_element(1, x), &Vector::from_element(1, p)).unwrap().value;
            assert_eq!(numerical_hamiltonian(l.as_ref(), x, p, p, 0.7).unwrap(), h);
        }
    }
}

fn field_leq(f: &ValueField, g: &ValueField, slack: f64) -> bool {
    f.values.iter().flatten().zip(g.values.iter().flatten()).all(|(a, b)| *a <= *b + slack)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn numerical_hamiltonian_is_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let l = harmonic(1, r.random_range(0.5..2.0), r.random_range(-0.5..1.0));
        // |H_p| = |p| / mass ≤ 6 on |p| ≤ 3 when mass ≥ 0.5.
        let alpha = 6.6;
        let x = r.random_range(-1.0..1.0);
        for _ in 0..50 {
            let (pm, pp) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            let bump = r.random_range(0.0..0.5);
            let base = numerical_hamiltonian(l.as_ref(), x, pm, pp, alpha).unwrap();
            prop_assert!(numerical_hamiltonian(l.as_ref(), x, (pm + bump).min(3.0), pp, alpha).unwrap() >= base - 1e-12);
            prop_assert!(numerical_hamiltonian(l.as_ref(), x, pm, (pp + bump).min(3.0), alpha).unwrap() <= base + 1e-12);
        }
    }

    #[test]
    fn scheme_preserves_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = CouplingMatrix::from_rows(&[
            vec![r.random_range(0.0..1.0), -r.random_range(0.1..1.0)],
            vec![-r.random_range(0.1..1.0), r.random_range(0.0..1.0)],
        ])
        .unwrap();
        let set = periodic_set();
        let phi = periodic_data();
        // Centred at least 2 away from the seam, so the lift is periodic to 3e-4.
        let lift = Datum::Gaussian { amplitude: r.random_range(0.0..0.5), center: vec![r.random_range(2.0..4.3)], sigma: 0.5 };
        let psi = InitialData::new(
            vec![Datum::Sum { terms: vec![phi.component(0).clone(), lift] }, phi.component(1).clone()],
            1,
        )
        .unwrap();
        let config = SchemeConfig { alpha: Some(vec![2.0, 2.0]), ..periodic_config(81, 0.4) };
        let (lo, _) = solve_system(&set, &a, &phi, &config).unwrap();
        let (hi, _) = solve_system(&set, &a, &psi, &config).unwrap();
        prop_assert!(field_leq(&lo, &hi, 1e-12));
    }
}
