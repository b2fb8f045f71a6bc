//! Bolza value functions and the Lax–Oleinik evolutions on state grids.
//!
//! The negative evolution of equation `i` at `(t, x)` is
//! `min_z Σ_j b^i_j(t) φ_j(z) + A^i(z, x)`, where `A^i(z, x)` is the least
//! weighted action of a curve from `z` to `x`. The positive evolution runs
//! the curve from `x` to the free end `z` with the data imposed at the
//! terminal time.

mod bolza;
mod data;
mod field;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::caratheodory::Trajectory;
use crate::coupling::{matrix_exponential, CouplingMatrix};
use crate::error::{Error, Result};
use crate::lagrangian::{check_set, reversed_set, LagrangianRef, Vector};
use crate::optimize::{lbfgs, LbfgsOptions, Preconditioner};
use crate::variational::{minimize_fundamental_from, VariationalOptions, WeightedAction};

use bolza::{EndCost, FreeEnd, FreeEndProblem, FreeEndSolution};
pub use data::{Datum, InitialData};
pub use field::{FieldMetadata, Grid, ValueField};

/// Axis-aligned box searched for the free endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lower: Vector,
    pub upper: Vector,
}

impl SearchBox {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.is_empty()
            || lower.len() != upper.len()
            || lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::InvalidInput("search box needs finite lower < upper on every axis".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The cube of half-width `radius` around `x`.
    pub fn centered(x: &Vector, radius: f64) -> Result<Self> {
        Self::new(x.add_scalar(-radius), x.add_scalar(radius))
    }

    /// The grid box scaled by `dilation` about its center.
    pub fn around(grid: &Grid, dilation: f64) -> Result<Self> {
        let (lower, upper) = grid.dilated_box(dilation);
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn dilated(&self, factor: f64) -> Self {
        let c = (&self.lower + &self.upper) * 0.5;
        let r = (&self.upper - &self.lower) * (0.5 * factor);
        Self { lower: &c - &r, upper: c + r }
    }

    /// Smallest lattice spacing of a scan with `points` per axis.
    pub fn cell(&self, points: usize) -> f64 {
        (&self.upper - &self.lower).min() / (points.max(2) - 1) as f64
    }

    pub fn lattice_point(&self, idx: &[usize], points: usize) -> Vector {
        let p = (points.max(2) - 1) as f64;
        Vector::from_iterator(
            self.dim(),
            idx.iter().enumerate().map(|(a, &i)| self.lower[a] + (self.upper[a] - self.lower[a]) * i as f64 / p),
        )
    }

    pub fn contains_with_margin(&self, z: &Vector, margin: f64) -> bool {
        z.iter().enumerate().all(|(a, &c)| c > self.lower[a] + margin && c < self.upper[a] - margin)
    }
}

/// Settings of the Bolza solvers and grid sweeps.
#[derive(Debug, Clone, Copy)]
pub struct BolzaOptions {
    pub variational: VariationalOptions,
    /// Coarse-scan points per axis of the search box.
    pub scan_points: usize,
    /// Scan minima refined by the joint minimization.
    pub max_candidates: usize,
    /// Search box of a grid sweep relative to the grid box.
    pub dilation: f64,
    /// Grid nodes on which the marginal formulation is recomputed.
    pub cross_check_nodes: usize,
}

impl Default for BolzaOptions {
    fn default() -> Self {
        Self {
            variational: VariationalOptions::default(),
            scan_points: 33,
            max_candidates: 3,
            dilation: 2.0,
            cross_check_nodes: 3,
        }
    }
}

/// Minimizer of a single-point Bolza problem.
#[derive(Debug, Clone)]
pub struct BolzaSolution {
    pub value: f64,
    /// The optimal free endpoint `z*`.
    pub endpoint: Vector,
    pub minimizer: Trajectory,
    pub multiple_minimizers: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// The box finally searched (possibly widened once).
    pub search_box: SearchBox,
    candidates: Vec<Vector>,
}

impl From<FreeEndSolution> for BolzaSolution {
    fn from(s: FreeEndSolution) -> Self {
        Self {
            value: s.value,
            endpoint: s.endpoint,
            minimizer: s.curve,
            multiple_minimizers: s.multiple,
            iterations: s.iterations,
            gradient_norm: s.gradient_norm,
            search_box: s.search_box,
            candidates: s.candidates,
        }
    }
}

fn check_system(
    t: f64,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    state_dim: usize,
) -> Result<usize> {
    let dim = check_set(set, a.size())?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    if phi.len() != a.size() {
        return Err(Error::InvalidInput(format!("{} data components for {} equations", phi.len(), a.size())));
    }
    if state_dim != dim {
        return Err(Error::InvalidInput(format!("points have dimension {state_dim}, Lagrangians have {dim}")));
    }
    Ok(dim)
}

/// `Σ_j w_j φ_j(z)` and its gradient.
fn combined_datum(phi: &InitialData, w: Vec<f64>) -> impl Fn(&Vector) -> (f64, Vector) + Sync + '_ {
    move |z: &Vector| {
        let mut value = 0.0;
        let mut grad = Vector::zeros(z.len());
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                value += wj * phi.value(j, z);
                grad += phi.grad(j, z) * wj;
            }
        }
        (value, grad)
    }
}

fn mix(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shared pieces of the negative problem for equation `i`.
struct NegativeSetup {
    action: WeightedAction,
    b_row: Vec<f64>,
}

impl NegativeSetup {
    fn new(i: usize, t: f64, a: &CouplingMatrix, set: &[LagrangianRef], n: usize) -> Result<Self> {
        let b = matrix_exponential(a, -t)?;
        Ok(Self { action: WeightedAction::negative(i, a, set, t, n)?, b_row: b.row(i).iter().copied().collect() })
    }

    fn solve(&self, x: &Vector, phi: &InitialData, bx: &SearchBox, opts: &BolzaOptions, seed: u64) -> Result<BolzaSolution> {
        let cost = combined_datum(phi, self.b_row.clone());
        let problem = FreeEndProblem { action: &self.action, pinned: x.clone(), free: FreeEnd::Start, cost: &cost as &EndCost };
        Ok(problem.solve(bx, opts.scan_points, opts.max_candidates, &opts.variational, seed)?.into())
    }
}

/// Terminal-data problem for equation `i`, minimized directly.
struct PositiveSetup {
    action: WeightedAction,
    c_row: Vec<f64>,
}

impl PositiveSetup {
    fn new(i: usize, t: f64, a: &CouplingMatrix, set: &[LagrangianRef], n: usize) -> Result<Self> {
        let c = matrix_exponential(a, t)?;
        Ok(Self { action: WeightedAction::terminal(i, a, set, t, n)?, c_row: c.row(i).iter().map(|c| -c).collect() })
    }

    fn solve(&self, x: &Vector, phi: &InitialData, bx: &SearchBox, opts: &BolzaOptions, seed: u64) -> Result<BolzaSolution> {
        let cost = combined_datum(phi, self.c_row.clone());
        let problem = FreeEndProblem { action: &self.action, pinned: x.clone(), free: FreeEnd::End, cost: &cost as &EndCost };
        let mut s: BolzaSolution = problem.solve(bx, opts.scan_points, opts.max_candidates, &opts.variational, seed)?.into();
        s.value = -s.value;
        Ok(s)
    }
}

/// `u^i(t, x) = min_z Σ_j b^i_j(t) φ_j(z) + A^i(z, x)`.
///
/// The endpoint is located by a coarse scan of `search_box` with the
/// straight-line action, and the best scan minima are refined jointly over
/// the curve and its free end. If the optimum is not inside the box, the box
/// is doubled once; a second miss is a [`Error::SearchBoxExhausted`].
#[allow(clippy::too_many_arguments)]
pub fn bolza_value(
    i: usize,
    t: f64,
    x: &Vector,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    search_box: &SearchBox,
    opts: &BolzaOptions,
) -> Result<BolzaSolution> {
    check_system(t, phi, a, set, x.len())?;
    check_index(i, a)?;
    NegativeSetup::new(i, t, a, set, opts.variational.segments)?.solve(x, phi, search_box, opts, opts.variational.seed)
}

/// The positive evolution `T̆^i_t φ(x) = sup_z [e^{At} φ(z)]_i - ∫ [e^{As} L]_i`
/// over curves from `x` to `z`, computed directly with terminal weights.
///
/// This does not go through the reversal reduction used by
/// [`evolve_field_positive`], so the two serve as checks on each other.
#[allow(clippy::too_many_arguments)]
pub fn positive_value(
    i: usize,
    t: f64,
    x: &Vector,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    search_box: &SearchBox,
    opts: &BolzaOptions,
) -> Result<BolzaSolution> {
    check_system(t, phi, a, set, x.len())?;
    check_index(i, a)?;
    PositiveSetup::new(i, t, a, set, opts.variational.segments)?.solve(x, phi, search_box, opts, opts.variational.seed)
}

fn check_index(i: usize, a: &CouplingMatrix) -> Result<()> {
    if i >= a.size() {
        return Err(Error::InvalidInput(format!("equation index {i} out of range for {} equations", a.size())));
    }
    Ok(())
}

struct Scale(f64);

impl Preconditioner for Scale {
    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        g * self.0
    }
}

/// The marginal form `min_z φ_i(z) + h_i(t, z, x, φ(z))`, minimized over `z`
/// from each of `starts` with a fixed-end solve for every trial `z`.
///
/// The gradient in `z` comes from the envelope theorem: the data gradient
/// plus the partial derivative of the discrete action in its first node.
#[allow(clippy::too_many_arguments)]
pub fn marginal_value(
    i: usize,
    t: f64,
    x: &Vector,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    starts: &[Vector],
    opts: &BolzaOptions,
) -> Result<(f64, Vector)> {
    check_system(t, phi, a, set, x.len())?;
    check_index(i, a)?;
    if starts.is_empty() {
        return Err(Error::InvalidInput("marginal minimization needs a starting endpoint".into()));
    }
    let setup = NegativeSetup::new(i, t, a, set, opts.variational.segments)?;
    let cost = combined_datum(phi, setup.b_row.clone());
    let mut best: Option<(f64, Vector)> = None;
    for z0 in starts {
        let mut warm: Option<Trajectory> = None;
        let mut failure: Option<Error> = None;
        let outer = LbfgsOptions { gradient_tolerance: 1e-7, max_iterations: 200, ..opts.variational.lbfgs };
        let report = lbfgs(
            |z| {
                let data = phi.values(z);
                match minimize_fundamental_from(i, t, z, x, &data, a, set, warm.as_ref(), &opts.variational) {
                    Ok(sol) => {
                        let (_, g) = setup.action.integral_with_gradient(sol.minimizer.nodes());
                        let value = phi.value(i, z) + sol.value;
                        warm = Some(sol.minimizer);
                        (value, cost(z).1 + &g[0])
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        (f64::INFINITY, Vector::zeros(z.len()))
                    }
                }
            },
            z0.clone(),
            Scale(t),
            &outer,
        );
        if !report.value.is_finite() {
            return Err(failure.unwrap_or_else(|| Error::Range("marginal value is not finite".into())));
        }
        if !report.converged && report.gradient_norm() > 100.0 * outer.gradient_tolerance {
            return Err(Error::convergence(
                "marginal endpoint minimization",
                report.iterations,
                report.gradient_norm(),
                report.x.iter().copied().collect(),
            ));
        }
        if best.as_ref().is_none_or(|(v, _)| report.value < *v) {
            best = Some((report.value, report.x));
        }
    }
    Ok(best.expect("starts is not empty"))
}

fn sweep<F>(grid: &Grid, m: usize, solve: F) -> Result<Vec<Vec<BolzaSolution>>>
where
    F: Fn(usize, usize, &Vector) -> Result<BolzaSolution> + Sync,
{
    let n = grid.len();
    let flat: Vec<BolzaSolution> =
        (0..m * n).into_par_iter().map(|k| solve(k / n, k % n, &grid.node(k % n))).collect::<Result<_>>()?;
    let mut out: Vec<Vec<BolzaSolution>> = vec![Vec::with_capacity(n); m];
    for (k, s) in flat.into_iter().enumerate() {
        out[k / n].push(s);
    }
    Ok(out)
}

fn assemble(grid: &Grid, t: f64, solutions: &[Vec<BolzaSolution>]) -> Result<ValueField> {
    let values = solutions.iter().map(|row| row.iter().map(|s| s.value).collect()).collect();
    let mut field = ValueField::new(grid.clone(), t, values)?;
    field.endpoints = Some(solutions.iter().map(|row| row.iter().map(|s| s.endpoint.clone()).collect()).collect());
    for (i, row) in solutions.iter().enumerate() {
        for (node, s) in row.iter().enumerate() {
            if s.multiple_minimizers {
                field.metadata.multiple_minimizers.push((i, node));
            }
        }
    }
    Ok(field)
}

/// Evenly spaced node subsample of size `count`.
fn subsample(n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![n / 2];
    }
    (0..count).map(|k| k * (n - 1) / (count - 1)).collect()
}

/// The negative evolution `T_t φ` at every grid node and every equation.
///
/// Each node is solved independently with [`bolza_value`] semantics on the
/// grid box dilated by `opts.dilation`. On `opts.cross_check_nodes` nodes the
/// marginal formulation ([`marginal_value`]) is recomputed from the same scan
/// minima and the largest difference is stored in the field metadata.
pub fn evolve_field(
    t: f64,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    grid: &Grid,
    opts: &BolzaOptions,
) -> Result<ValueField> {
    grid.validate()?;
    check_system(t, phi, a, set, grid.dim())?;
    let bx = SearchBox::around(grid, opts.dilation)?;
    let m = a.size();
    let setups =
        (0..m).map(|i| NegativeSetup::new(i, t, a, set, opts.variational.segments)).collect::<Result<Vec<_>>>()?;
    let n = grid.len();
    let seed = opts.variational.seed;
    let solutions =
        sweep(grid, m, |i, node, x| setups[i].solve(x, phi, &bx, opts, mix(seed, i * n + node)))?;
    let mut field = assemble(grid, t, &solutions)?;

    let checks: Vec<(usize, usize)> =
        (0..m).flat_map(|i| subsample(n, opts.cross_check_nodes).into_iter().map(move |node| (i, node))).collect();
    let defects: Vec<f64> = checks
        .par_iter()
        .map(|&(i, node)| {
            let s = &solutions[i][node];
            let (value, _) = marginal_value(i, t, &grid.node(node), phi, a, set, &s.candidates, opts)?;
            Ok((value - s.value).abs())
        })
        .collect::<Result<_>>()?;
    field.metadata.cross_checked_nodes = checks.len();
    field.metadata.cross_check_defect = (!checks.is_empty()).then(|| defects.iter().copied().fold(0.0, f64::max));
    Ok(field)
}

/// The positive evolution `T̆_t φ` through the reversal reduction
/// `T̆^{L,A} φ = -T^{L̆,-A}(-φ)`, with `L̆(x, v) = L(x, -v)`.
pub fn evolve_field_positive(
    t: f64,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    grid: &Grid,
    opts: &BolzaOptions,
) -> Result<ValueField> {
    let mut field = evolve_field(t, &phi.negated(), &a.negated(), &reversed_set(set), grid, opts)?.negated();
    field.metadata.notes.push("computed as -T(-data) for the reversed Lagrangians and negated coupling".into());
    Ok(field)
}

/// The positive evolution solved node by node with [`positive_value`], the
/// direct terminal-data formulation.
pub fn evolve_field_positive_direct(
    t: f64,
    phi: &InitialData,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    grid: &Grid,
    opts: &BolzaOptions,
) -> Result<ValueField> {
    grid.validate()?;
    check_system(t, phi, a, set, grid.dim())?;
    let bx = SearchBox::around(grid, opts.dilation)?;
    let m = a.size();
    let setups =
        (0..m).map(|i| PositiveSetup::new(i, t, a, set, opts.variational.segments)).collect::<Result<Vec<_>>>()?;
    let n = grid.len();
    let seed = opts.variational.seed;
    let solutions =
        sweep(grid, m, |i, node, x| setups[i].solve(x, phi, &bx, opts, mix(seed, i * n + node)))?;
    assemble(grid, t, &solutions)
}

/// Residuals of the gradient and time-derivative identities at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `‖D_x u^i − L^i_v(ξ(t), ξ̇(t))‖`.
    pub dx: f64,
    /// `|D_t u^i + H^i(x, L^i_v) + Σ_k a_ik u^k|`.
    pub dt: f64,
}

/// Checks the identities satisfied at differentiability points of `u^i`:
/// the spatial gradient is the terminal momentum of the minimizer, and the
/// equation holds with that momentum.
///
/// `fields` are the same grid at three increasing times; the middle one is
/// the evaluation time and `minimizer` its optimal curve at `node`. Spatial
/// derivatives are central differences, the time derivative is the
/// three-level difference, and the terminal velocity is the second-order
/// one-sided difference of the last three nodes. Returns `None` when the
/// node is flagged with several minimizers.
pub fn differentiability_identities(
    fields: [&ValueField; 3],
    i: usize,
    node: usize,
    minimizer: &Trajectory,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
) -> Result<Option<IdentityResiduals>> {
    let [f0, f1, f2] = fields;
    let dim = check_set(set, a.size())?;
    check_index(i, a)?;
    if f0.grid != f1.grid || f2.grid != f1.grid || !(f0.time < f1.time && f1.time < f2.time) {
        return Err(Error::InvalidInput("three fields on one grid at increasing times are required".into()));
    }
    if f1.grid.dim() != dim || f1.components() != a.size() || node >= f1.grid.len() {
        return Err(Error::InvalidInput("field inconsistent with the system or node out of range".into()));
    }
    if f1.metadata.multiple_minimizers.contains(&(i, node)) {
        return Ok(None);
    }
    let idx = f1.grid.multi_index(node);
    if idx.iter().zip(&f1.grid.points).any(|(&k, &p)| k == 0 || k + 1 == p) {
        return Err(Error::Precondition(format!("node {node} has no interior difference stencil")));
    }
    let n = minimizer.segments();
    if n < 2 || minimizer.dim() != dim {
        return Err(Error::InvalidInput("minimizer needs at least two segments in the state dimension".into()));
    }
    let x = f1.grid.node(node);
    let mut du = Vector::zeros(dim);
    for axis in 0..dim {
        let (mut lo, mut hi) = (idx.clone(), idx.clone());
        lo[axis] -= 1;
        hi[axis] += 1;
        let (l, h) = (f1.grid.flat_index(&lo), f1.grid.flat_index(&hi));
        du[axis] = (f1.value(i, h) - f1.value(i, l)) / (2.0 * f1.grid.spacing(axis));
    }
    let step = minimizer.step();
    let velocity =
        (minimizer.node(n) * 3.0 - minimizer.node(n - 1) * 4.0 + minimizer.node(n - 2)) / (2.0 * step);
    let end = minimizer.end();
    let p = set[i].grad_v(end, &velocity);
    let dx = (&du - &p).norm();

    let (d1, d2) = (f1.time - f0.time, f2.time - f1.time);
    let ut = -d2 / (d1 * (d1 + d2)) * f0.value(i, node)
        + (d2 - d1) / (d1 * d2) * f1.value(i, node)
        + d1 / (d2 * (d1 + d2)) * f2.value(i, node);
    let coupling: f64 = (0..a.size()).map(|k| a.get(i, k) * f1.value(k, node)).sum();
    let h = set[i].hamiltonian(&x, &p)?.value;
    Ok(Some(IdentityResiduals { dx, dt: (ut + h + coupling).abs() }))
}
