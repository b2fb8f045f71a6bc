use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::Vector;

/// One scalar initial datum `φ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    Constant { value: f64 },
    /// `a exp(-|x - x₀|² / 2σ²)`.
    Gaussian { amplitude: f64, center: Vec<f64>, sigma: f64 },
    /// `a cos(k·x + phase)`.
    Cosine {
        amplitude: f64,
        wavenumber: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// `½ κ |x|²`; coercive, so outside the bounded class.
    Quadratic { kappa: f64 },
    /// Pointwise sum.
    Sum { terms: Vec<Datum> },
    /// `factor · φ`.
    Scaled { factor: f64, inner: Box<Datum> },
}

impl Datum {
    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Datum::Constant { value } => *value,
            Datum::Gaussian { amplitude, center, sigma } => {
                amplitude * (-squared_distance(x, center) / (2.0 * sigma * sigma)).exp()
            }
            Datum::Cosine { amplitude, wavenumber, phase } => amplitude * (dot(wavenumber, x) + phase).cos(),
            Datum::Quadratic { kappa } => 0.5 * kappa * x.norm_squared(),
            Datum::Sum { terms } => terms.iter().map(|d| d.value(x)).sum(),
            Datum::Scaled { factor, inner } => factor * inner.value(x),
        }
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        match self {
            Datum::Constant { .. } => Vector::zeros(x.len()),
            Datum::Gaussian { center, sigma, .. } => {
                let c = Vector::from_column_slice(center);
                (x - c) * (-self.value(x) / (sigma * sigma))
            }
            Datum::Cosine { amplitude, wavenumber, phase } => {
                Vector::from_column_slice(wavenumber) * (-amplitude * (dot(wavenumber, x) + phase).sin())
            }
            Datum::Quadratic { kappa } => x * *kappa,
            Datum::Sum { terms } => terms.iter().fold(Vector::zeros(x.len()), |acc, d| acc + d.grad(x)),
            Datum::Scaled { factor, inner } => inner.grad(x) * *factor,
        }
    }

    /// Whether the datum is bounded and uniformly continuous.
    pub fn is_buc(&self) -> bool {
        match self {
            Datum::Quadratic { kappa } => *kappa == 0.0,
            Datum::Sum { terms } => terms.iter().all(Datum::is_buc),
            Datum::Scaled { factor, inner } => *factor == 0.0 || inner.is_buc(),
            _ => true,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let bad = |what: &str, n: usize| {
            Err(Error::InvalidInput(format!("{what} has {n} components, state dimension is {dim}")))
        };
        match self {
            Datum::Gaussian { center, sigma, .. } => {
                if center.len() != dim {
                    return bad("gaussian center", center.len());
                }
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidInput(format!("gaussian width must be positive, got {sigma}")));
                }
                Ok(())
            }
            Datum::Cosine { wavenumber, .. } if wavenumber.len() != dim => bad("cosine wavenumber", wavenumber.len()),
            Datum::Sum { terms } => terms.iter().try_for_each(|d| d.check(dim)),
            Datum::Scaled { inner, .. } => inner.check(dim),
            _ => Ok(()),
        }
    }
}

fn dot(a: &[f64], x: &Vector) -> f64 {
    a.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

fn squared_distance(x: &Vector, c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// The initial data `φ = (φ_1, …, φ_m)` of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    components: Vec<Datum>,
}

impl InitialData {
    pub fn new(components: Vec<Datum>, dim: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("initial data needs at least one component".into()));
        }
        components.iter().try_for_each(|d| d.check(dim))?;
        Ok(Self { components })
    }

    /// Constant data `φ_i ≡ c_i`.
    pub fn constants(values: &[f64]) -> Self {
        Self { components: values.iter().map(|&value| Datum::Constant { value }).collect() }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &Datum {
        &self.components[i]
    }

    pub fn value(&self, i: usize, x: &Vector) -> f64 {
        self.components[i].value(x)
    }

    pub fn grad(&self, i: usize, x: &Vector) -> Vector {
        self.components[i].grad(x)
    }

    /// `(φ_1(x), …, φ_m(x))`.
    pub fn values(&self, x: &Vector) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.len(), self.components.iter().map(|d| d.value(x)))
    }

    pub fn is_buc(&self) -> bool {
        self.components.iter().all(Datum::is_buc)
    }

    /// `-φ`.
    pub fn negated(&self) -> Self {
        self.map(|d| Datum::Scaled { factor: -1.0, inner: Box::new(d.clone()) })
    }

    /// `φ + c` for a vector of constants.
    pub fn shifted(&self, c: &[f64]) -> Self {
        let mut k = 0;
        self.map(|d| {
            let value = c[k];
            k += 1;
            Datum::Sum { terms: vec![d.clone(), Datum::Constant { value }] }
        })
    }

    fn map(&self, mut f: impl FnMut(&Datum) -> Datum) -> Self {
        Self { components: self.components.iter().map(&mut f).collect() }
    }
}
