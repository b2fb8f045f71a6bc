//! Component Lagrangians and their convex duals.
//!
//! Every component `L^j(x, v)` is a Tonelli Lagrangian: `C²`, strictly convex
//! and superlinear in the velocity. The weighted Lagrangian of equation `i`,
//! `𝕃^i(s, x, v) = Σ_j d^i_j(s) L^j(x, v)`, is again Tonelli whenever all the
//! weights are positive, and its Hamiltonian is the inf-convolution of the
//! rescaled component Hamiltonians.

mod certificate;
mod family;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::coupling::Propagator;
use crate::error::{Error, Result};

pub use certificate::{set_constants, Growth, HessianBound, SetConstants, TonelliCertificate};
pub use family::{Kinetic, Potential, TonelliLagrangian};

pub type Vector = DVector<f64>;

/// Shared handle to a component Lagrangian.
pub type LagrangianRef = Arc<dyn Lagrangian>;

/// Value and derivatives of a Hamiltonian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianPoint {
    pub value: f64,
    /// `H_p`, which is also the maximizing velocity.
    pub grad_p: Vector,
    pub grad_x: Vector,
}

/// A velocity-convex Lagrangian with its second-order jet.
pub trait Lagrangian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector, v: &Vector) -> f64;
    fn grad_x(&self, x: &Vector, v: &Vector) -> Vector;
    fn grad_v(&self, x: &Vector, v: &Vector) -> Vector;
    fn hess_v(&self, x: &Vector, v: &Vector) -> DMatrix<f64>;
    /// Mixed derivative `∂²L/∂v∂x`; row index is the velocity component.
    fn hess_vx(&self, x: &Vector, v: &Vector) -> DMatrix<f64>;

    /// `H(x, p) = sup_v {p·v - L(x, v)}` with its gradients. The default runs
    /// the damped Newton Legendre transform.
    fn hamiltonian(&self, x: &Vector, p: &Vector) -> Result<HamiltonianPoint> {
        let (value, v) = legendre_transform(self, x, p, &NewtonOptions::default())?;
        let grad_x = -self.grad_x(x, &v);
        Ok(HamiltonianPoint { value, grad_p: v, grad_x })
    }

    /// Growth and convexity bounds valid for `|x| ≤ state_radius`, when known
    /// in closed form.
    fn certificate(&self, _state_radius: f64) -> Option<TonelliCertificate> {
        None
    }
}

/// Settings for the damped Newton iteration behind every Legendre transform.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

/// Minimizes the strictly convex `F(v) - p·v` by Newton's method with Armijo
/// backtracking. `jet` returns `(F, ∇F, ∇²F)`. Returns the minimizer and the
/// minimum value.
pub(crate) fn convex_newton(
    jet: impl Fn(&Vector) -> (f64, Vector, DMatrix<f64>),
    p: &Vector,
    start: Vector,
    opts: &NewtonOptions,
) -> Result<(Vector, f64)> {
    let tol = opts.tolerance * (1.0 + p.amax());
    let mut v = start;
    let (mut f, mut g, mut h) = jet(&v);
    let mut phi = f - p.dot(&v);
    for _ in 0..opts.max_iterations {
        let grad = &g - p;
        if grad.amax() <= tol {
            return Ok(polish(&jet, p, v, phi, grad, &h));
        }
        let dir = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&dir);
        let slack = 1e-14 * phi.abs().max(1.0);
        let mut alpha = 1.0;
        loop {
            let trial = &v + &dir * alpha;
            let (tf, tg, th) = jet(&trial);
            let tphi = tf - p.dot(&trial);
            if tphi <= phi + 1e-4 * alpha * slope + slack || alpha < 1e-12 {
                v = trial;
                f = tf;
                g = tg;
                h = th;
                phi = tphi;
                break;
            }
            alpha *= 0.5;
        }
        let _ = f;
    }
    let grad = &g - p;
    if grad.amax() <= tol {
        return Ok((v, phi));
    }
    Err(Error::convergence("Legendre Newton", opts.max_iterations, grad.amax(), v.as_slice().to_vec()))
}

/// One undamped Newton step past the stopping test. Inside the quadratic
/// basin it takes the residual `∇F(v) - p` from the tolerance to round-off,
/// which the inf-convolution splits rely on to sum to `p`.
fn polish(
    jet: &impl Fn(&Vector) -> (f64, Vector, DMatrix<f64>),
    p: &Vector,
    v: Vector,
    phi: f64,
    grad: Vector,
    h: &DMatrix<f64>,
) -> (Vector, f64) {
    let Some(ch) = h.clone().cholesky() else { return (v, phi) };
    let trial = &v - ch.solve(&grad);
    let (tf, tg, _) = jet(&trial);
    if (&tg - p).amax() < grad.amax() {
        (trial.clone(), tf - p.dot(&trial))
    } else {
        (v, phi)
    }
}

/// `H(x, p) = sup_v {p·v - L(x, v)}` and its maximizer `v*`, found by damped
/// Newton from `v = 0` on `p = L_v(x, v)`.
pub fn legendre_transform<L: Lagrangian + ?Sized>(
    l: &L,
    x: &Vector,
    p: &Vector,
    opts: &NewtonOptions,
) -> Result<(f64, Vector)> {
    let start = Vector::zeros(l.dim());
    let (v, phi) = convex_newton(|v| (l.value(x, v), l.grad_v(x, v), l.hess_v(x, v)), p, start, opts)?;
    Ok((-phi, v))
}

/// Legendre transform of `Σ_k w_k L^k(x, ·)` at `p` from the initial velocity
/// `start`; returns `(value, v*)`. Terms with zero weight are skipped.
pub fn weighted_legendre(
    terms: &[(f64, &dyn Lagrangian)],
    x: &Vector,
    p: &Vector,
    start: Vector,
    opts: &NewtonOptions,
) -> Result<(f64, Vector)> {
    let n = p.len();
    let jet = |v: &Vector| {
        let mut f = 0.0;
        let mut g = Vector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for &(w, l) in terms.iter().filter(|(w, _)| *w != 0.0) {
            f += w * l.value(x, v);
            g += l.grad_v(x, v) * w;
            h += l.hess_v(x, v) * w;
        }
        (f, g, h)
    };
    let (v, phi) = convex_newton(jet, p, start, opts)?;
    Ok((-phi, v))
}

/// `L̆(x, v) = L(x, -v)`, the time-reversed Lagrangian.
#[derive(Debug, Clone)]
pub struct Reversed(pub LagrangianRef);

impl Lagrangian for Reversed {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &Vector, v: &Vector) -> f64 {
        self.0.value(x, &-v)
    }
    fn grad_x(&self, x: &Vector, v: &Vector) -> Vector {
        self.0.grad_x(x, &-v)
    }
    fn grad_v(&self, x: &Vector, v: &Vector) -> Vector {
        -self.0.grad_v(x, &-v)
    }
    fn hess_v(&self, x: &Vector, v: &Vector) -> DMatrix<f64> {
        self.0.hess_v(x, &-v)
    }
    fn hess_vx(&self, x: &Vector, v: &Vector) -> DMatrix<f64> {
        -self.0.hess_vx(x, &-v)
    }
    fn hamiltonian(&self, x: &Vector, p: &Vector) -> Result<HamiltonianPoint> {
        let h = self.0.hamiltonian(x, &-p)?;
        Ok(HamiltonianPoint { value: h.value, grad_p: -h.grad_p, grad_x: h.grad_x })
    }
    fn certificate(&self, state_radius: f64) -> Option<TonelliCertificate> {
        self.0.certificate(state_radius)
    }
}

/// Reverses every Lagrangian of a set.
pub fn reversed_set(set: &[LagrangianRef]) -> Vec<LagrangianRef> {
    set.iter().map(|l| Arc::new(Reversed(l.clone())) as LagrangianRef).collect()
}

/// Checks that a set is non-empty, matches `m` equations and shares one
/// state dimension; returns that dimension.
pub fn check_set(set: &[LagrangianRef], m: usize) -> Result<usize> {
    if set.len() != m {
        return Err(Error::InvalidInput(format!("{} Lagrangians for a {m}x{m} coupling matrix", set.len())));
    }
    let dim = set[0].dim();
    if let Some((j, l)) = set.iter().enumerate().find(|(_, l)| l.dim() != dim) {
        return Err(Error::InvalidInput(format!("Lagrangian {j} has dimension {}, Lagrangian 0 has {dim}", l.dim())));
    }
    Ok(dim)
}

/// Value and velocity jet of a weighted Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad_x: Vector,
    pub grad_v: Vector,
    pub hess_v: DMatrix<f64>,
}

/// `𝕃^i(s, x, v) = Σ_j d^i_j(s) L^j(x, v)` on the horizon of a propagator.
#[derive(Debug, Clone)]
pub struct WeightedLagrangian {
    index: usize,
    lagrangians: Vec<LagrangianRef>,
    propagator: Propagator,
}

impl WeightedLagrangian {
    pub fn new(index: usize, lagrangians: Vec<LagrangianRef>, propagator: Propagator) -> Result<Self> {
        check_set(&lagrangians, propagator.size())?;
        if index >= lagrangians.len() {
            return Err(Error::InvalidInput(format!("equation index {index} out of range")));
        }
        Ok(Self { index, lagrangians, propagator })
    }

    pub fn horizon(&self) -> f64 {
        self.propagator.horizon()
    }

    /// The weights `d^i_j(s)`.
    pub fn weights(&self, s: f64) -> Result<Vec<f64>> {
        let d = self.propagator.d(s)?;
        Ok(d.row(self.index).iter().copied().collect())
    }

    /// Weighted sum of the component jets.
    pub fn jet(&self, s: f64, x: &Vector, v: &Vector) -> Result<Jet> {
        let w = self.weights(s)?;
        Ok(weighted_jet(&self.lagrangians, &w, x, v))
    }
}

pub(crate) fn weighted_jet(set: &[LagrangianRef], w: &[f64], x: &Vector, v: &Vector) -> Jet {
    let n = x.len();
    let mut jet =
        Jet { value: 0.0, grad_x: Vector::zeros(n), grad_v: Vector::zeros(n), hess_v: DMatrix::zeros(n, n) };
    for (l, &wj) in set.iter().zip(w) {
        if wj == 0.0 {
            continue;
        }
        jet.value += wj * l.value(x, v);
        jet.grad_x += l.grad_x(x, v) * wj;
        jet.grad_v += l.grad_v(x, v) * wj;
        jet.hess_v += l.hess_v(x, v) * wj;
    }
    jet
}

/// Operation form of [`WeightedLagrangian::jet`].
pub fn weighted_value_jet(w: &WeightedLagrangian, s: f64, x: &Vector, v: &Vector) -> Result<Jet> {
    w.jet(s, x, v)
}

/// The inf-convolution Hamiltonian `ℍ^i(s, x, p)` with its optimal split.
#[derive(Debug, Clone, PartialEq)]
pub struct InfConvolution {
    pub value: f64,
    /// `q_j = d^i_j(s) L^j_v(x, v*)`, summing to `p`; zero for vanishing weights.
    pub splits: Vec<Vector>,
    /// Common gradient `ℍ^i_p = H^j_p(x, q_j / d^i_j)`.
    pub velocity: Vector,
}

/// `ℍ^i(s, x, p) = inf { Σ_j d^i_j H^j(x, q_j / d^i_j) : Σ_j q_j = p }`,
/// computed as the Legendre transform of `𝕃^i(s, x, ·)`.
pub fn inf_convolution_hamiltonian(
    i: usize,
    propagator: &Propagator,
    set: &[LagrangianRef],
    s: f64,
    x: &Vector,
    p: &Vector,
) -> Result<InfConvolution> {
    inf_convolution_from(i, propagator, set, s, x, p, Vector::zeros(p.len()), &NewtonOptions::default())
}

/// [`inf_convolution_hamiltonian`] with an explicit Newton starting velocity.
#[allow(clippy::too_many_arguments)]
pub fn inf_convolution_from(
    i: usize,
    propagator: &Propagator,
    set: &[LagrangianRef],
    s: f64,
    x: &Vector,
    p: &Vector,
    start: Vector,
    opts: &NewtonOptions,
) -> Result<InfConvolution> {
    check_set(set, propagator.size())?;
    let d = propagator.d(s)?;
    let weights: Vec<f64> = d.row(i).iter().copied().collect();
    inf_convolution_with_weights(&weights, set, x, p, start, opts)
}

pub(crate) fn inf_convolution_with_weights(
    weights: &[f64],
    set: &[LagrangianRef],
    x: &Vector,
    p: &Vector,
    start: Vector,
    opts: &NewtonOptions,
) -> Result<InfConvolution> {
    // Propagator entries that vanish exactly, such as off-diagonal entries of
    // d(t) = I, come out of the exponential as round-off of either sign.
    let scale = weights.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let weights: Vec<f64> =
        weights.iter().map(|&w| if w < 0.0 && -w <= 1e-12 * scale { 0.0 } else { w }).collect();
    let weights = weights.as_slice();
    if let Some((j, w)) = weights.iter().enumerate().find(|(_, w)| **w < 0.0) {
        return Err(Error::Precondition(format!("weight {j} is negative ({w:.3e})")));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Precondition("all inf-convolution weights vanish".into()));
    }
    let terms: Vec<(f64, &dyn Lagrangian)> = weights.iter().zip(set).map(|(&w, l)| (w, l.as_ref())).collect();
    let (value, v) = weighted_legendre(&terms, x, p, start, opts)?;
    let splits = weights
        .iter()
        .zip(set)
        .map(|(&w, l)| if w == 0.0 { Vector::zeros(p.len()) } else { l.grad_v(x, &v) * w })
        .collect();
    Ok(InfConvolution { value, splits, velocity: v })
}
