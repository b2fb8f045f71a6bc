mod common;

use common::{harmonic, kinetic, vector};
use hjweave::coupling::{matrix_exponential, CouplingMatrix};
use hjweave::lagrangian::LagrangianRef;
use hjweave::lax_oleinik::{
    bolza_value, differentiability_identities, evolve_field, evolve_field_positive, evolve_field_positive_direct,
    BolzaOptions, Datum, Grid, InitialData, SearchBox, ValueField,
};
use hjweave::variational::VariationalOptions;

fn fast(segments: usize) -> BolzaOptions {
    BolzaOptions { variational: VariationalOptions { segments, ..Default::default() }, ..Default::default() }
}

fn zero_row_sum() -> CouplingMatrix {
    CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-0.5, 0.5]]).unwrap()
}

fn bumps() -> InitialData {
    InitialData::new(
        vec![
            Datum::Gaussian { amplitude: 1.0, center: vec![0.3], sigma: 0.4 },
            Datum::Cosine { amplitude: 0.5, wavenumber: vec![2.0], phase: 0.0 },
        ],
        1,
    )
    .unwrap()
}

fn max_gap(f: &ValueField, g: &ValueField) -> f64 {
    f.values.iter().flatten().zip(g.values.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn one_kinetic_energy_and_zero_row_sums_give_a_hopf_lax_formula() {
    let (a, set, phi, t) = (zero_row_sum(), kinetic(2, 1), bumps(), 0.5);
    let grid = Grid::line(-1.0, 1.0, 11).unwrap();
    let field = evolve_field(t, &phi, &a, &set, &grid, &fast(20)).unwrap();
    let b = matrix_exponential(&a, -t).unwrap();
    // Dense scan of min_z Σ_j b_ij φ_j(z) + |x - z|² / 2t.
    let zs: Vec<f64> = (0..=60000).map(|k| -3.0 + 6.0 * k as f64 / 60000.0).collect();
    for node in 0..grid.len() {
        let x = grid.node(node)[0];
        for i in 0..2 {
            let best = zs
                .iter()
                .map(|&z| {
                    let pz = phi.values(&vector(&[z]));
                    b.row(i).transpose().dot(&pz) + (x - z).powi(2) / (2.0 * t)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((field.value(i, node) - best).abs() < 2e-3, "node {node}, eq {i}");
        }
    }
}

#[test]
fn short_horizon_stays_close_to_the_data() {
    let (a, set, phi) = (zero_row_sum(), vec![harmonic(1, 1.0, 0.3), harmonic(1, 2.0, 0.0)], bumps());
    let grid = Grid::line(-1.0, 1.0, 9).unwrap();
    let field = evolve_field(1e-3, &phi, &a, &set, &grid, &fast(8)).unwrap();
    for node in 0..grid.len() {
        for i in 0..2 {
            assert!((field.value(i, node) - phi.value(i, &grid.node(node))).abs() < 5e-3);
        }
    }
}

#[test]
fn evolution_is_monotone_and_shifts_constants() {
    let (a, set, phi, t) = (zero_row_sum(), vec![harmonic(1, 1.0, 0.3), harmonic(1, 1.5, 0.0)], bumps(), 0.4);
    let grid = Grid::line(-1.0, 1.0, 9).unwrap();
    let opts = fast(20);
    let base = evolve_field(t, &phi, &a, &set, &grid, &opts).unwrap();

    let raised = InitialData::new(
        vec![
            phi.component(0).clone(),
            Datum::Sum {
                terms: vec![
                    phi.component(1).clone(),
                    Datum::Gaussian { amplitude: 0.3, center: vec![-0.2], sigma: 0.3 },
                ],
            },
        ],
        1,
    )
    .unwrap();
    let above = evolve_field(t, &raised, &a, &set, &grid, &opts).unwrap();
    for i in 0..2 {
        for node in 0..grid.len() {
            assert!(above.value(i, node) >= base.value(i, node) - 1e-9);
        }
    }

    let c = [0.7, -1.2];
    let shifted = evolve_field(t, &phi.shifted(&c), &a, &set, &grid, &opts).unwrap();
    let b = matrix_exponential(&a, -t).unwrap();
    for i in 0..2 {
        let bc = b[(i, 0)] * c[0] + b[(i, 1)] * c[1];
        for node in 0..grid.len() {
            assert!((shifted.value(i, node) - base.value(i, node) - bc).abs() < 1e-8);
        }
    }
}

#[test]
fn constant_data_mirror_between_the_two_evolutions() {
    let a = CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let (set, c, t) = (kinetic(2, 1), [1.0, 0.0], 1.0);
    let phi = InitialData::constants(&c);
    let grid = Grid::line(-1.0, 1.0, 5).unwrap();
    let opts = fast(10);
    let neg = evolve_field(t, &phi, &a, &set, &grid, &opts).unwrap();
    let pos = evolve_field_positive(t, &phi, &a, &set, &grid, &opts).unwrap();
    let (b, e) = (matrix_exponential(&a, -t).unwrap(), matrix_exponential(&a, t).unwrap());
    for i in 0..2 {
        for node in 0..grid.len() {
            assert!((neg.value(i, node) - (b[(i, 0)] * c[0] + b[(i, 1)] * c[1])).abs() < 1e-10);
            assert!((pos.value(i, node) - (e[(i, 0)] * c[0] + e[(i, 1)] * c[1])).abs() < 1e-10);
        }
    }
}

#[test]
fn positive_evolution_routes_agree_and_mirror_the_negative_one() {
    let a = CouplingMatrix::from_rows(&[vec![0.3, -0.2], vec![-0.1, 0.2]]).unwrap();
    let set: Vec<LagrangianRef> = vec![harmonic(1, 1.0, 0.2), harmonic(1, 1.3, 0.0)];
    let (phi, t) = (bumps(), 0.4);
    let grid = Grid::line(-1.0, 1.0, 7).unwrap();
    let opts = fast(20);
    let reversal = evolve_field_positive(t, &phi, &a, &set, &grid, &opts).unwrap();
    let direct = evolve_field_positive_direct(t, &phi, &a, &set, &grid, &opts).unwrap();
    assert!(max_gap(&reversal, &direct) < 1e-6, "{}", max_gap(&reversal, &direct));

    // -T̆φ = T(-φ) for the reversed Lagrangians (here even in v) and -A.
    let mirrored = evolve_field(t, &phi.negated(), &a.negated(), &set, &grid, &opts).unwrap().negated();
    assert!(max_gap(&reversal, &mirrored) < 1e-12);
}

#[test]
fn free_particle_satisfies_the_differentiability_identities() {
    // φ = ½z²: u(t, x) = x² / 2(1 + t).
    let a = CouplingMatrix::zeros(1);
    let set = kinetic(1, 1);
    let phi = InitialData::new(vec![Datum::Quadratic { kappa: 1.0 }], 1).unwrap();
    let grid = Grid::line(-1.0, 1.0, 21).unwrap();
    let opts = fast(100);
    let fields: Vec<ValueField> =
        [0.95, 1.0, 1.05].iter().map(|&t| evolve_field(t, &phi, &a, &set, &grid, &opts).unwrap()).collect();
    for node in [3, 10, 16] {
        let x = grid.node(node);
        assert!((fields[1].value(0, node) - x[0] * x[0] / 4.0).abs() < 1e-8);
        let s = bolza_value(0, 1.0, &x, &phi, &a, &set, &SearchBox::around(&grid, 2.0).unwrap(), &opts).unwrap();
        let r = differentiability_identities([&fields[0], &fields[1], &fields[2]], 0, node, &s.minimizer, &a, &set)
            .unwrap()
            .unwrap();
        assert!(r.dx < 1e-3 && r.dt < 1e-3, "node {node}: {r:?}");
    }
}

#[test]
fn symmetric_two_well_data_flags_the_kink() {
    let a = CouplingMatrix::zeros(1);
    let set = kinetic(1, 1);
    let phi = InitialData::new(vec![Datum::Cosine { amplitude: 1.0, wavenumber: vec![std::f64::consts::PI], phase: 0.0 }], 1)
        .unwrap();
    let grid = Grid::line(-0.5, 0.5, 5).unwrap();
    let opts = fast(40);
    let fields: Vec<ValueField> =
        [0.45, 0.5, 0.55].iter().map(|&t| evolve_field(t, &phi, &a, &set, &grid, &opts).unwrap()).collect();
    let centre = 2;
    assert!(fields[1].metadata.multiple_minimizers.contains(&(0, centre)), "{:?}", fields[1].metadata);
    let s = bolza_value(0, 0.5, &grid.node(centre), &phi, &a, &set, &SearchBox::around(&grid, 2.0).unwrap(), &opts).unwrap();
    assert!(s.multiple_minimizers);
    let r = differentiability_identities([&fields[0], &fields[1], &fields[2]], 0, centre, &s.minimizer, &a, &set).unwrap();
    assert!(r.is_none());
}
