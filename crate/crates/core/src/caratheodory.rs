//! Running costs along a fixed curve.
//!
//! Given a curve `ξ` and boundary data `a`, the costs `u_i(s)` solve the
//! coupled equations `u̇_i = L^i(ξ, ξ̇, u)`. With the linear coupling
//! `L^i(x, v) - Σ_j a_ij u_j` the solution is available in closed form through
//! the propagator; general couplings are integrated with classical RK4.
//!
//! Curves are piecewise linear on a uniform grid, so the velocity is constant
//! on each segment. The integrand of every segment is evaluated once, at the
//! segment midpoint, and the coupling kernel is integrated exactly over the
//! segment. The linear recurrence is therefore exact for segmentwise-constant
//! integrands and second-order accurate in general.

use std::sync::Arc;

use nalgebra::DVector;

use crate::coupling::{exponential_integral, matrix_exponential, CouplingMatrix};
use crate::csv::join_row;
use crate::error::{Error, Result};
use crate::lagrangian::{check_set, LagrangianRef, Vector};

/// A piecewise-linear curve on `[0, t]` sampled at `s_k = k t / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: f64,
    nodes: Vec<Vector>,
}

impl Trajectory {
    pub fn new(horizon: f64, nodes: Vec<Vector>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("trajectory horizon must be positive, got {horizon}")));
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("a trajectory needs at least one segment".into()));
        }
        let dim = nodes[0].len();
        if dim == 0 || nodes.iter().any(|n| n.len() != dim) {
            return Err(Error::InvalidInput("trajectory nodes must share a positive dimension".into()));
        }
        Ok(Self { horizon, nodes })
    }

    /// The constant-speed segment from `start` to `end` with `n` segments.
    pub fn straight_line(horizon: f64, start: &Vector, end: &Vector, n: usize) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::InvalidInput("endpoints differ in dimension".into()));
        }
        let n = n.max(1);
        let mut nodes: Vec<Vector> = (0..=n).map(|k| start + (end - start) * (k as f64 / n as f64)).collect();
        nodes[n] = end.clone();
        Self::new(horizon, nodes)
    }

    /// Samples a curve given as a function of time.
    pub fn from_fn(horizon: f64, n: usize, f: impl Fn(f64) -> Vector) -> Result<Self> {
        let n = n.max(1);
        Self::new(horizon, (0..=n).map(|k| f(horizon * k as f64 / n as f64)).collect())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of segments `N`.
    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.segments() as f64
    }

    pub fn nodes(&self) -> &[Vector] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &Vector {
        &self.nodes[k]
    }

    pub fn start(&self) -> &Vector {
        &self.nodes[0]
    }

    pub fn end(&self) -> &Vector {
        &self.nodes[self.segments()]
    }

    /// Constant velocity of segment `k`.
    pub fn velocity(&self, k: usize) -> Vector {
        (&self.nodes[k + 1] - &self.nodes[k]) / self.step()
    }

    pub fn midpoint(&self, k: usize) -> Vector {
        (&self.nodes[k + 1] + &self.nodes[k]) * 0.5
    }

    pub fn midpoint_time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.step()
    }

    /// `η(s) = ξ(t - s)`.
    pub fn reversed(&self) -> Self {
        Self { horizon: self.horizon, nodes: self.nodes.iter().rev().cloned().collect() }
    }

    /// Position at an arbitrary time by linear interpolation.
    pub fn at(&self, s: f64) -> Vector {
        let x = (s / self.step()).clamp(0.0, self.segments() as f64);
        let k = (x.floor() as usize).min(self.segments() - 1);
        let w = x - k as f64;
        &self.nodes[k] * (1.0 - w) + &self.nodes[k + 1] * w
    }

    /// Largest node-wise distance to another curve with the same node count.
    pub fn max_distance(&self, other: &Trajectory) -> f64 {
        self.nodes.iter().zip(&other.nodes).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }
}

/// Which end of the curve carries the boundary data `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// `u(0) = a`.
    Initial,
    /// `u(t) = a`.
    Terminal,
}

/// Running costs `u(s_k)` at every node of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CaratheodoryState {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
    mode: BoundaryMode,
}

impl CaratheodoryState {
    pub(crate) fn from_parts(times: Vec<f64>, values: Vec<DVector<f64>>, mode: BoundaryMode) -> Self {
        Self { times, values, mode }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `u(s_k)` as an `m`-vector.
    pub fn at(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.values.last().expect("states have at least two nodes")
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// CSV with header `s,u1..um`.
    pub fn to_csv(&self) -> String {
        let m = self.values[0].len();
        let mut out = String::from("s");
        for i in 1..=m {
            out.push_str(&format!(",u{i}"));
        }
        out.push('\n');
        for (s, u) in self.times.iter().zip(&self.values) {
            out.push_str(&join_row(std::iter::once(*s).chain(u.iter().copied())));
            out.push('\n');
        }
        out
    }
}

/// `(L^j(ξ(m_k), v_k))_j` for every segment `k`.
pub(crate) fn segment_costs(set: &[LagrangianRef], curve: &Trajectory) -> Vec<DVector<f64>> {
    (0..curve.segments())
        .map(|k| {
            let (x, v) = (curve.midpoint(k), curve.velocity(k));
            DVector::from_iterator(set.len(), set.iter().map(|l| l.value(&x, &v)))
        })
        .collect()
}

fn check_linear(a: &CouplingMatrix, set: &[LagrangianRef], curve: &Trajectory, data: &DVector<f64>) -> Result<()> {
    let dim = check_set(set, a.size())?;
    if dim != curve.dim() {
        return Err(Error::InvalidInput(format!("curve dimension {} vs Lagrangian dimension {dim}", curve.dim())));
    }
    if data.len() != a.size() {
        return Err(Error::InvalidInput(format!("boundary data has {} entries for {} equations", data.len(), a.size())));
    }
    Ok(())
}

/// Solves `u̇ = L(ξ, ξ̇) - A u` along `curve` with `u(0) = data` or
/// `u(t) = data`, through the one-step propagator
/// `U_{k+1} = e^{-Ah} U_k + (∫_0^h e^{-Aσ} dσ) L_k`.
pub fn integrate_linear(
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    curve: &Trajectory,
    data: &DVector<f64>,
    mode: BoundaryMode,
) -> Result<CaratheodoryState> {
    check_linear(a, set, curve, data)?;
    let h = curve.step();
    let n = curve.segments();
    let costs = segment_costs(set, curve);
    let mut values = vec![DVector::zeros(a.size()); n + 1];
    match mode {
        BoundaryMode::Initial => {
            let e = matrix_exponential(a, -h)?;
            let kernel = exponential_integral(&a.negated(), h)?;
            values[0] = data.clone();
            for k in 0..n {
                values[k + 1] = &e * &values[k] + &kernel * &costs[k];
            }
        }
        BoundaryMode::Terminal => {
            let e = matrix_exponential(a, h)?;
            let kernel = exponential_integral(a, h)?;
            values[n] = data.clone();
            for k in (0..n).rev() {
                values[k] = &e * &values[k + 1] - &kernel * &costs[k];
            }
        }
    }
    Ok(CaratheodoryState { times: (0..=n).map(|k| curve.time(k)).collect(), values, mode })
}

/// A running cost `L^i(x, v, u)` depending on the full cost vector.
pub trait CoupledLagrangian: Send + Sync + std::fmt::Debug {
    fn value(&self, x: &Vector, v: &Vector, u: &DVector<f64>) -> f64;
    fn grad_u(&self, x: &Vector, v: &Vector, u: &DVector<f64>) -> DVector<f64>;
    /// Bound `K` on `|∂L/∂u_j|`.
    fn u_lipschitz(&self) -> f64;
}

/// `L^i(x, v) - Σ_j a_ij u_j` as a general coupled Lagrangian.
#[derive(Debug, Clone)]
pub struct LinearCoupling {
    row: DVector<f64>,
    lagrangian: LagrangianRef,
}

impl LinearCoupling {
    pub fn new(a: &CouplingMatrix, i: usize, lagrangian: LagrangianRef) -> Self {
        Self { row: a.entries().row(i).transpose(), lagrangian }
    }

    /// One adapter per equation.
    pub fn system(a: &CouplingMatrix, set: &[LagrangianRef]) -> Vec<Arc<dyn CoupledLagrangian>> {
        set.iter()
            .enumerate()
            .map(|(i, l)| Arc::new(Self::new(a, i, l.clone())) as Arc<dyn CoupledLagrangian>)
            .collect()
    }
}

impl CoupledLagrangian for LinearCoupling {
    fn value(&self, x: &Vector, v: &Vector, u: &DVector<f64>) -> f64 {
        self.lagrangian.value(x, v) - self.row.dot(u)
    }
    fn grad_u(&self, _x: &Vector, _v: &Vector, _u: &DVector<f64>) -> DVector<f64> {
        -&self.row
    }
    fn u_lipschitz(&self) -> f64 {
        self.row.amax()
    }
}

/// Settings for the RK4 integration of general couplings.
#[derive(Debug, Clone, Copy)]
pub struct GeneralOptions {
    /// Accepted difference between a pass and the pass with half the step,
    /// after the order-4 Richardson factor.
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for GeneralOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_halvings: 6 }
    }
}

fn general_pass(
    gs: &[Arc<dyn CoupledLagrangian>],
    frozen: &[Vec<(Vector, Vector)>],
    h: f64,
    data: &DVector<f64>,
    mode: BoundaryMode,
    substeps: usize,
) -> Vec<DVector<f64>> {
    let n = frozen[0].len();
    let m = gs.len();
    let rhs = |k: usize, u: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(m, (0..m).map(|i| gs[i].value(&frozen[i][k].0, &frozen[i][k].1, u)))
    };
    // Backward integration runs the same scheme on `w(r) = u(t - r)`.
    let sign = if mode == BoundaryMode::Initial { 1.0 } else { -1.0 };
    let dt = h / substeps as f64;
    let mut values = vec![DVector::zeros(m); n + 1];
    let order: Vec<usize> = match mode {
        BoundaryMode::Initial => (0..n).collect(),
        BoundaryMode::Terminal => (0..n).rev().collect(),
    };
    let mut u = data.clone();
    let first = if mode == BoundaryMode::Initial { 0 } else { n };
    values[first] = u.clone();
    for k in order {
        for _ in 0..substeps {
            let f = |w: &DVector<f64>| rhs(k, w) * sign;
            let k1 = f(&u);
            let k2 = f(&(&u + &k1 * (0.5 * dt)));
            let k3 = f(&(&u + &k2 * (0.5 * dt)));
            let k4 = f(&(&u + &k3 * dt));
            u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let next = if mode == BoundaryMode::Initial { k + 1 } else { k };
        values[next] = u.clone();
    }
    values
}

/// Integrates `u̇_i = L^i(ξ_i, ξ̇_i, u)` from `u(0) = data`, one curve per
/// equation; see [`integrate_general_with`].
pub fn integrate_general(
    gs: &[Arc<dyn CoupledLagrangian>],
    curves: &[Trajectory],
    data: &DVector<f64>,
) -> Result<CaratheodoryState> {
    integrate_general_with(gs, curves, data, BoundaryMode::Initial, &GeneralOptions::default())
}

/// RK4 with fixed step `t / N`; the step is halved until two successive
/// passes agree to `tolerance` (Richardson estimate), or `max_halvings` is
/// exhausted.
pub fn integrate_general_with(
    gs: &[Arc<dyn CoupledLagrangian>],
    curves: &[Trajectory],
    data: &DVector<f64>,
    mode: BoundaryMode,
    opts: &GeneralOptions,
) -> Result<CaratheodoryState> {
    let m = gs.len();
    if m == 0 || curves.len() != m || data.len() != m {
        return Err(Error::InvalidInput(format!(
            "{m} coupled Lagrangians, {} curves, {} boundary values",
            curves.len(),
            data.len()
        )));
    }
    let (t, n) = (curves[0].horizon(), curves[0].segments());
    if curves.iter().any(|c| c.segments() != n || (c.horizon() - t).abs() > 1e-14 * t) {
        return Err(Error::InvalidInput("curves must share horizon and node count".into()));
    }
    let frozen: Vec<Vec<(Vector, Vector)>> =
        curves.iter().map(|c| (0..n).map(|k| (c.midpoint(k), c.velocity(k))).collect()).collect();
    let h = t / n as f64;

    let mut substeps = 1;
    let mut coarse = general_pass(gs, &frozen, h, data, mode, substeps);
    let mut estimate = f64::INFINITY;
    for _ in 0..=opts.max_halvings {
        let fine = general_pass(gs, &frozen, h, data, mode, 2 * substeps);
        estimate = coarse.iter().zip(&fine).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max) / 15.0;
        substeps *= 2;
        coarse = fine;
        if estimate <= opts.tolerance {
            return Ok(CaratheodoryState { times: (0..=n).map(|k| curves[0].time(k)).collect(), values: coarse, mode });
        }
        if coarse.iter().any(|u| u.iter().any(|x| !x.is_finite())) {
            break;
        }
    }
    Err(Error::Accuracy(format!(
        "RK4 error estimate {estimate:.3e} above {:.1e} after {} halvings",
        opts.tolerance, opts.max_halvings
    )))
}

/// The linear system solved through the general RK4 path instead of the
/// propagator, as an independent check of [`integrate_linear`].
pub fn integrate_linear_rk4(
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    curve: &Trajectory,
    data: &DVector<f64>,
    mode: BoundaryMode,
) -> Result<CaratheodoryState> {
    check_linear(a, set, curve, data)?;
    let gs = LinearCoupling::system(a, set);
    let curves = vec![curve.clone(); a.size()];
    integrate_general_with(&gs, &curves, data, mode, &GeneralOptions { tolerance: 1e-12, max_halvings: 8 })
}
