//! Builders and oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use hjweave::coupling::CouplingMatrix;
use hjweave::lagrangian::{Lagrangian, LagrangianRef, Potential, TonelliLagrangian, Vector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

pub fn kinetic(m: usize, dim: usize) -> Vec<LagrangianRef> {
    (0..m).map(|_| Arc::new(TonelliLagrangian::kinetic(dim)) as LagrangianRef).collect()
}

/// `½ mass |v|² + ½ stiffness |x|²`.
pub fn harmonic(dim: usize, mass: f64, stiffness: f64) -> LagrangianRef {
    Arc::new(
        TonelliLagrangian::quadratic(DMatrix::identity(dim, dim) * mass, Potential::Harmonic { stiffness }).unwrap(),
    )
}

pub fn quartic(dim: usize, epsilon: f64, potential: Potential) -> LagrangianRef {
    Arc::new(TonelliLagrangian::quartic(dim, epsilon, potential).unwrap())
}

/// A symmetric positive definite mass matrix with eigenvalues in `[0.5, 2]`.
pub fn random_mass(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let eig = DMatrix::from_diagonal(&Vector::from_fn(dim, |_, _| rng.random_range(0.5..2.0)));
    &q * eig * q.transpose()
}

/// One of the built-in families with random parameters.
pub fn random_lagrangian(rng: &mut ChaCha8Rng, dim: usize) -> LagrangianRef {
    let potential = match rng.random_range(0..3) {
        0 => Potential::Zero,
        1 => Potential::Harmonic { stiffness: rng.random_range(-0.5..1.0) },
        _ => Potential::Cosine {
            amplitude: rng.random_range(-0.5..0.5),
            wavenumber: Vector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0)),
        },
    };
    if rng.random_bool(0.5) {
        Arc::new(TonelliLagrangian::quadratic(random_mass(rng, dim), potential).unwrap())
    } else {
        quartic(dim, rng.random_range(0.05..0.5), potential)
    }
}

/// Quadratic kinetic energy with a random mass and any built-in potential.
pub fn random_quadratic_kinetic(rng: &mut ChaCha8Rng, dim: usize) -> LagrangianRef {
    let potential = match rng.random_range(0..3) {
        0 => Potential::Zero,
        1 => Potential::Harmonic { stiffness: rng.random_range(-0.5..1.0) },
        _ => Potential::Cosine {
            amplitude: rng.random_range(-0.5..0.5),
            wavenumber: Vector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0)),
        },
    };
    Arc::new(TonelliLagrangian::quadratic(random_mass(rng, dim), potential).unwrap())
}

/// Random quadratic Lagrangian `½⟨v, M v⟩ + ½k|x|²`.
pub fn random_quadratic(rng: &mut ChaCha8Rng, dim: usize) -> LagrangianRef {
    let potential = Potential::Harmonic { stiffness: rng.random_range(-0.3..1.0) };
    Arc::new(TonelliLagrangian::quadratic(random_mass(rng, dim), potential).unwrap())
}

/// Cooperative irreducible matrix: every off-diagonal entry strictly
/// negative, so the sparsity graph is complete.
pub fn random_cooperative(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> CouplingMatrix {
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = if i == j { rng.random_range(0.0..scale) } else { -rng.random_range(0.05 * scale..scale) };
        }
    }
    CouplingMatrix::new(a).unwrap()
}

/// Cooperative matrix scaled so that the max row norm is at most `bound`.
pub fn bounded_cooperative(rng: &mut ChaCha8Rng, m: usize, bound: f64) -> CouplingMatrix {
    let a = random_cooperative(rng, m, 1.0);
    let norm = a.row_norm();
    CouplingMatrix::new(a.entries() * (bound / norm.max(bound))).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vector {
    Vector::from_fn(dim, |_, _| rng.random_range(-r..r))
}

/// Central difference of a scalar function along every coordinate.
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |k, _| {
        let (mut p, mut q) = (x.clone(), x.clone());
        p[k] += h;
        q[k] -= h;
        (f(&p) - f(&q)) / (2.0 * h)
    })
}

/// `|a − b| / max(1, |b|)` in the max norm.
pub fn relative_error(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Velocity Hessian by differencing the analytic velocity gradient.
pub fn fd_hess_v(l: &dyn Lagrangian, x: &Vector, v: &Vector, h: f64) -> DMatrix<f64> {
    let d = v.len();
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let (mut p, mut q) = (v.clone(), v.clone());
        p[k] += h;
        q[k] -= h;
        out.set_column(k, &((l.grad_v(x, &p) - l.grad_v(x, &q)) / (2.0 * h)));
    }
    out
}
