use nalgebra::DMatrix;

use super::{Growth, HamiltonianPoint, HessianBound, Lagrangian, TonelliCertificate, Vector};
use crate::error::{Error, Result};

/// Velocity part of a built-in Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub enum Kinetic {
    /// `½⟨v, M v⟩` with `M` symmetric positive definite.
    Quadratic { mass: DMatrix<f64>, inverse: DMatrix<f64>, eig_min: f64, eig_max: f64 },
    /// `½|v|² + ε|v|⁴`.
    Quartic { epsilon: f64 },
}

/// State part `V(x)` of a built-in Lagrangian `L = K(v) + V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `½ k |x|²`. A negative stiffness gives an inverted well, whose dual
    /// Hamiltonian `½|p|² + ½|k||x|²` is the harmonic oscillator.
    Harmonic { stiffness: f64 },
    /// `a cos(k·x)`.
    Cosine { amplitude: f64, wavenumber: Vector },
}

impl Potential {
    fn value(&self, x: &Vector) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic { stiffness } => 0.5 * stiffness * x.norm_squared(),
            Potential::Cosine { amplitude, wavenumber } => amplitude * wavenumber.dot(x).cos(),
        }
    }

    fn grad(&self, x: &Vector) -> Vector {
        match self {
            Potential::Zero => Vector::zeros(x.len()),
            Potential::Harmonic { stiffness } => x * *stiffness,
            Potential::Cosine { amplitude, wavenumber } => wavenumber * (-amplitude * wavenumber.dot(x).sin()),
        }
    }

    /// `(min V, max V)` over `|x| ≤ r`.
    fn range(&self, r: f64) -> (f64, f64) {
        match self {
            Potential::Zero => (0.0, 0.0),
            Potential::Harmonic { stiffness } => {
                let edge = 0.5 * stiffness * r * r;
                (edge.min(0.0), edge.max(0.0))
            }
            Potential::Cosine { amplitude, .. } => (-amplitude.abs(), amplitude.abs()),
        }
    }
}

/// A built-in Tonelli Lagrangian `L(x, v) = K(v) + V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TonelliLagrangian {
    dim: usize,
    kinetic: Kinetic,
    potential: Potential,
}

impl TonelliLagrangian {
    /// The free particle `½|v|²`.
    pub fn kinetic(dim: usize) -> Self {
        Self::quadratic(DMatrix::identity(dim, dim), Potential::Zero).expect("identity mass is valid")
    }

    pub fn quadratic(mass: DMatrix<f64>, potential: Potential) -> Result<Self> {
        let dim = mass.nrows();
        if dim == 0 || !mass.is_square() {
            return Err(Error::InvalidInput("mass matrix must be square and non-empty".into()));
        }
        if (&mass - mass.transpose()).amax() > 1e-12 * mass.amax().max(1.0) {
            return Err(Error::InvalidInput("mass matrix must be symmetric".into()));
        }
        let eig = mass.clone().symmetric_eigen().eigenvalues;
        let eig_min = eig.min();
        let eig_max = eig.max();
        if !(eig_min > 0.0) {
            return Err(Error::InvalidInput(format!("mass matrix must be positive definite, smallest eigenvalue {eig_min}")));
        }
        let inverse = mass.clone().cholesky().expect("positive definite").inverse();
        check_potential(&potential, dim)?;
        Ok(Self { dim, kinetic: Kinetic::Quadratic { mass, inverse, eig_min, eig_max }, potential })
    }

    pub fn quartic(dim: usize, epsilon: f64, potential: Potential) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("quartic coefficient must be positive, got {epsilon}")));
        }
        check_potential(&potential, dim)?;
        Ok(Self { dim, kinetic: Kinetic::Quartic { epsilon }, potential })
    }

    pub fn kinetic_part(&self) -> &Kinetic {
        &self.kinetic
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }
}

fn check_potential(p: &Potential, dim: usize) -> Result<()> {
    match p {
        Potential::Harmonic { stiffness } if !stiffness.is_finite() => {
            Err(Error::InvalidInput("harmonic stiffness must be finite".into()))
        }
        Potential::Cosine { wavenumber, .. } if wavenumber.len() != dim => Err(Error::InvalidInput(format!(
            "cosine wavenumber has {} components, state dimension is {dim}",
            wavenumber.len()
        ))),
        _ => Ok(()),
    }
}

impl Lagrangian for TonelliLagrangian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Vector, v: &Vector) -> f64 {
        let k = match &self.kinetic {
            Kinetic::Quadratic { mass, .. } => 0.5 * v.dot(&(mass * v)),
            Kinetic::Quartic { epsilon } => {
                let r2 = v.norm_squared();
                0.5 * r2 + epsilon * r2 * r2
            }
        };
        k + self.potential.value(x)
    }

    fn grad_x(&self, x: &Vector, _v: &Vector) -> Vector {
        self.potential.grad(x)
    }

    fn grad_v(&self, _x: &Vector, v: &Vector) -> Vector {
        match &self.kinetic {
            Kinetic::Quadratic { mass, .. } => mass * v,
            Kinetic::Quartic { epsilon } => v * (1.0 + 4.0 * epsilon * v.norm_squared()),
        }
    }

    fn hess_v(&self, _x: &Vector, v: &Vector) -> DMatrix<f64> {
        match &self.kinetic {
            Kinetic::Quadratic { mass, .. } => mass.clone(),
            Kinetic::Quartic { epsilon } => {
                let n = v.len();
                DMatrix::identity(n, n) * (1.0 + 4.0 * epsilon * v.norm_squared()) + (v * v.transpose()) * (8.0 * epsilon)
            }
        }
    }

    fn hess_vx(&self, _x: &Vector, v: &Vector) -> DMatrix<f64> {
        DMatrix::zeros(v.len(), v.len())
    }

    fn hamiltonian(&self, x: &Vector, p: &Vector) -> Result<HamiltonianPoint> {
        match &self.kinetic {
            Kinetic::Quadratic { inverse, .. } => {
                let v = inverse * p;
                Ok(HamiltonianPoint {
                    value: 0.5 * p.dot(&v) - self.potential.value(x),
                    grad_p: v,
                    grad_x: -self.potential.grad(x),
                })
            }
            Kinetic::Quartic { .. } => {
                let (value, v) = super::legendre_transform(self, x, p, &super::NewtonOptions::default())?;
                Ok(HamiltonianPoint { value, grad_p: v, grad_x: -self.potential.grad(x) })
            }
        }
    }

    fn certificate(&self, state_radius: f64) -> Option<TonelliCertificate> {
        let (vmin, vmax) = self.potential.range(state_radius);
        let (theta0, theta1, hess_lower, hess_upper) = match &self.kinetic {
            Kinetic::Quadratic { eig_min, eig_max, .. } => (
                Growth { constant: 0.0, quadratic: 0.5 * eig_min, quartic: 0.0 },
                Growth { constant: vmax.max(0.0), quadratic: 0.5 * eig_max, quartic: 0.0 },
                HessianBound { constant: *eig_min, quadratic: 0.0 },
                HessianBound { constant: *eig_max, quadratic: 0.0 },
            ),
            Kinetic::Quartic { epsilon } => (
                Growth { constant: 0.0, quadratic: 0.5, quartic: *epsilon },
                Growth { constant: vmax.max(0.0), quadratic: 0.5, quartic: *epsilon },
                HessianBound { constant: 1.0, quadratic: 4.0 * epsilon },
                HessianBound { constant: 1.0, quadratic: 12.0 * epsilon },
            ),
        };
        Some(TonelliCertificate { theta0, theta1, c0: (-vmin).max(0.0), hess_lower, hess_upper, state_radius })
    }
}
