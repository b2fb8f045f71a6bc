//! Direct-method minimization of the discretized weighted action.
//!
//! For a curve with `u(0) = a` the running cost of equation `i` at the final
//! time is `u_i(t) = Σ_j b^i_j(t) a_j + ∫_0^t 𝕃^i(s, ξ, ξ̇) ds`, so minimizing
//! `u_i(t)` over curves with fixed ends is a classical problem for the
//! time-dependent Lagrangian `𝕃^i`. The discretization keeps the nodes of a
//! piecewise-linear curve as unknowns and minimizes with preconditioned L-BFGS.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caratheodory::{integrate_linear, BoundaryMode, CaratheodoryState, Trajectory};
use crate::coupling::{exponential_integral, matrix_exponential, CouplingMatrix, Propagator};
use crate::error::{Error, Result};
use crate::lagrangian::{check_set, reversed_set, weighted_jet, Jet, LagrangianRef, Vector};
use crate::optimize::{lbfgs, BlockTridiagonal, LbfgsOptions, LbfgsReport, Preconditioner};

/// Settings shared by every variational solve.
#[derive(Debug, Clone, Copy)]
pub struct VariationalOptions {
    /// Number of curve segments `N`.
    pub segments: usize,
    pub lbfgs: LbfgsOptions,
    /// Seed of the perturbation used by the multistart retry.
    pub seed: u64,
    /// Size of that perturbation relative to `1 + |end - start|`.
    pub retry_amplitude: f64,
    /// A run that stalls with `‖∇‖∞` below `stall_factor` times the gradient
    /// tolerance is accepted.
    pub stall_factor: f64,
}

impl Default for VariationalOptions {
    fn default() -> Self {
        Self { segments: 200, lbfgs: LbfgsOptions::default(), seed: 0, retry_amplitude: 0.25, stall_factor: 100.0 }
    }
}

/// The discretized integral `Σ_k h 𝕃_k(ξ(m_k), v_k)` with segment weights.
#[derive(Debug, Clone)]
pub struct WeightedAction {
    set: Vec<LagrangianRef>,
    weights: Vec<Vec<f64>>,
    horizon: f64,
    dim: usize,
}

impl WeightedAction {
    /// Weights of equation `i` for initial data: segment averages of
    /// `d(s) = exp(A(s - t))`.
    pub fn negative(i: usize, a: &CouplingMatrix, set: &[LagrangianRef], t: f64, n: usize) -> Result<Self> {
        let prop = Propagator::new(a, t)?;
        let rows = prop.segment_weights(n.max(1))?.iter().map(|w| w.row(i).iter().copied().collect()).collect();
        Self::from_weights(set, rows, t)
    }

    /// Weights of equation `i` for terminal data: segment averages of
    /// `exp(A s)`.
    pub fn terminal(i: usize, a: &CouplingMatrix, set: &[LagrangianRef], t: f64, n: usize) -> Result<Self> {
        let n = n.max(1);
        let h = t / n as f64;
        let avg = exponential_integral(a, h)? / h;
        let rows = (0..n)
            .map(|k| Ok((matrix_exponential(a, k as f64 * h)? * &avg).row(i).iter().copied().collect()))
            .collect::<Result<_>>()?;
        Self::from_weights(set, rows, t)
    }

    /// An action with explicit per-segment weight rows.
    pub fn from_weights(set: &[LagrangianRef], weights: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        let dim = check_set(set, set.len())?;
        if weights.is_empty() || weights.iter().any(|w| w.len() != set.len()) {
            return Err(Error::InvalidInput("one weight per Lagrangian and segment expected".into()));
        }
        Ok(Self { set: set.to_vec(), weights, horizon, dim })
    }

    pub fn segments(&self) -> usize {
        self.weights.len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    fn segment(&self, k: usize, nodes: &[Vector]) -> Jet {
        let h = self.step();
        let x = (&nodes[k] + &nodes[k + 1]) * 0.5;
        let v = (&nodes[k + 1] - &nodes[k]) / h;
        weighted_jet(&self.set, &self.weights[k], &x, &v)
    }

    fn check_nodes(&self, nodes: &[Vector]) -> Result<()> {
        if nodes.len() != self.segments() + 1 || nodes.iter().any(|n| n.len() != self.dim) {
            return Err(Error::InvalidInput(format!(
                "expected {} nodes of dimension {}, got {}",
                self.segments() + 1,
                self.dim,
                nodes.len()
            )));
        }
        Ok(())
    }

    pub fn integral(&self, nodes: &[Vector]) -> f64 {
        let h = self.step();
        (0..self.segments()).map(|k| h * self.segment(k, nodes).value).sum()
    }

    /// The integral and its gradient with respect to every node.
    pub fn integral_with_gradient(&self, nodes: &[Vector]) -> (f64, Vec<Vector>) {
        let h = self.step();
        let mut grad = vec![Vector::zeros(self.dim); nodes.len()];
        let mut value = 0.0;
        for k in 0..self.segments() {
            let jet = self.segment(k, nodes);
            value += h * jet.value;
            let half = &jet.grad_x * (0.5 * h);
            grad[k] += &half - &jet.grad_v;
            grad[k + 1] += half + jet.grad_v;
        }
        (value, grad)
    }

    /// `𝕃_vv` on every segment.
    pub fn velocity_hessians(&self, nodes: &[Vector]) -> Vec<DMatrix<f64>> {
        (0..self.segments()).map(|k| self.segment(k, nodes).hess_v).collect()
    }

    /// Discrete Euler–Lagrange residual `sup_l ‖∂/∂ξ_l‖ / h` over interior nodes.
    pub fn el_residual(&self, nodes: &[Vector]) -> f64 {
        let (_, g) = self.integral_with_gradient(nodes);
        let n = self.segments();
        (1..n).map(|l| g[l].norm() / self.step()).fold(0.0, f64::max)
    }
}

/// Which nodes of the curve are optimization variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FreeNodes {
    /// Both ends fixed.
    Interior,
    /// Only the final node fixed.
    AllButLast,
    /// Only the first node fixed.
    AllButFirst,
}

impl FreeNodes {
    /// First and last free node of a curve with `n` segments.
    fn range(self, n: usize) -> (usize, usize) {
        match self {
            FreeNodes::Interior => (1, n - 1),
            FreeNodes::AllButLast => (0, n - 1),
            FreeNodes::AllButFirst => (1, n),
        }
    }
}

/// Packs free nodes into one vector and back.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    template: Vec<Vector>,
    first: usize,
    count: usize,
}

impl Layout {
    pub(crate) fn new(template: Vec<Vector>, free: FreeNodes) -> Self {
        let (first, last) = free.range(template.len() - 1);
        let count = (last + 1).saturating_sub(first);
        Self { template, first, count }
    }

    fn dim(&self) -> usize {
        self.template[0].len()
    }

    pub(crate) fn pack(&self, nodes: &[Vector]) -> DVector<f64> {
        let d = self.dim();
        let mut x = DVector::zeros(self.count * d);
        for l in 0..self.count {
            x.rows_mut(l * d, d).copy_from(&nodes[self.first + l]);
        }
        x
    }

    pub(crate) fn unpack(&self, x: &DVector<f64>) -> Vec<Vector> {
        let d = self.dim();
        let mut nodes = self.template.clone();
        for l in 0..self.count {
            nodes[self.first + l] = x.rows(l * d, d).into_owned();
        }
        nodes
    }
}

/// Block-tridiagonal model of the action Hessian in the velocity terms,
/// `Σ_k (1/h) 𝕃_vv,k ⊗ [[1, -1], [-1, 1]]` restricted to the free nodes.
pub(crate) struct ActionPreconditioner<'a> {
    action: &'a WeightedAction,
    layout: &'a Layout,
    factor: Option<BlockTridiagonal>,
    scale: f64,
}

impl<'a> ActionPreconditioner<'a> {
    pub(crate) fn new(action: &'a WeightedAction, layout: &'a Layout) -> Self {
        Self { action, layout, factor: None, scale: action.step() }
    }
}

impl Preconditioner for ActionPreconditioner<'_> {
    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Some(f) => f.solve(g),
            None => g * self.scale,
        }
    }

    fn refresh(&mut self, x: &DVector<f64>) {
        let nodes = self.layout.unpack(x);
        let hv = self.action.velocity_hessians(&nodes);
        let inv_h = 1.0 / self.action.step();
        let (first, count) = (self.layout.first, self.layout.count);
        let d = self.layout.dim();
        let n = self.action.segments();
        if count == 0 {
            self.factor = None;
            return;
        }
        let mut diag = Vec::with_capacity(count);
        let mut upper = Vec::with_capacity(count.saturating_sub(1));
        for l in 0..count {
            let node = first + l;
            let mut block = DMatrix::zeros(d, d);
            if node > 0 {
                block += &hv[node - 1] * inv_h;
            }
            if node < n {
                block += &hv[node] * inv_h;
            }
            diag.push(block);
            if l + 1 < count {
                upper.push(&hv[node] * -inv_h);
            }
        }
        self.factor = BlockTridiagonal::factor(diag, upper);
    }

    fn refresh_every(&self) -> Option<usize> {
        Some(25)
    }
}

/// Minimizer of a fixed-endpoint problem with its optimizer diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct CurveSolve {
    pub curve: Trajectory,
    pub integral: f64,
    pub report: LbfgsReport,
    pub restarts: usize,
    pub multiple: bool,
}

pub(crate) fn perturbation(n: usize, dim: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let dir = Vector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
    let dir = if dir.norm() > 0.0 { dir.normalize() } else { Vector::from_element(dim, 1.0) };
    let phase: f64 = rng.random_range(0.5..1.5);
    (0..=n).map(|k| &dir * (amplitude * phase * (std::f64::consts::PI * k as f64 / n as f64).sin())).collect()
}

/// Runs L-BFGS over the free nodes of `initial` for `objective`, which maps
/// the full node list to a value and full gradient.
pub(crate) fn minimize_curve<F>(
    action: &WeightedAction,
    initial: Vec<Vector>,
    free: FreeNodes,
    objective: F,
    opts: &VariationalOptions,
) -> LbfgsReport
where
    F: Fn(&[Vector]) -> (f64, Vec<Vector>),
{
    let layout = Layout::new(initial.clone(), free);
    let pre = ActionPreconditioner::new(action, &layout);
    let x0 = layout.pack(&initial);
    lbfgs(
        |x| {
            let nodes = layout.unpack(x);
            let (f, g) = objective(&nodes);
            (f, layout.pack(&g))
        },
        x0,
        pre,
        &opts.lbfgs,
    )
}

/// Minimizes the integral between fixed ends from the straight line, with one
/// perturbed restart when the first run does not converge.
pub(crate) fn solve_fixed_ends(
    action: &WeightedAction,
    start: &Vector,
    end: &Vector,
    initial: Option<&Trajectory>,
    opts: &VariationalOptions,
) -> Result<CurveSolve> {
    let t = action.horizon;
    let n = action.segments();
    let line = Trajectory::straight_line(t, start, end, n)?;
    // Terminal weights exp(A s) carry negative off-diagonal entries; once the
    // weighted velocity Hessian loses definiteness the action has no minimum.
    if let Some(k) = action
        .velocity_hessians(line.nodes())
        .iter()
        .position(|hv| hv.clone().symmetric_eigen().eigenvalues.min() <= 0.0)
    {
        return Err(Error::Precondition(format!(
            "weighted Lagrangian is not convex in the velocity on segment {k} (weights {:?})",
            action.weights(k)
        )));
    }
    let init = match initial {
        Some(c) if c.segments() == n => {
            let mut nodes = c.nodes().to_vec();
            nodes[0] = start.clone();
            nodes[n] = end.clone();
            nodes
        }
        _ => line.nodes().to_vec(),
    };
    let run = |init: Vec<Vector>| {
        let layout = Layout::new(init.clone(), FreeNodes::Interior);
        let report = minimize_curve(action, init, FreeNodes::Interior, |nodes| action.integral_with_gradient(nodes), opts);
        (layout.unpack(&report.x), report)
    };
    let (nodes, report) = run(init);
    let mut best = (nodes, report, 0usize);
    let mut multiple = false;
    if !best.1.converged {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let amp = opts.retry_amplitude * (1.0 + (end - start).norm());
        let bump = perturbation(n, action.dim, amp, &mut rng);
        let retry_init: Vec<Vector> = line.nodes().iter().zip(&bump).map(|(p, b)| p + b).collect();
        let (nodes2, report2) = run(retry_init);
        let distance = nodes2.iter().zip(&best.0).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        multiple = (report2.value - best.1.value).abs() <= 1e-6 && distance > 1e-3;
        let better = (report2.converged && !best.1.converged) || report2.value < best.1.value;
        if better {
            best = (nodes2, report2, 1);
        } else {
            best.2 = 1;
        }
    }
    let (nodes, report, restarts) = best;
    let tol = opts.lbfgs.gradient_tolerance;
    if !report.converged && !(report.gradient_norm() <= opts.stall_factor * tol) {
        return Err(Error::convergence(
            "fundamental-solution minimization",
            report.iterations,
            report.gradient_norm(),
            nodes.iter().flat_map(|v| v.iter().copied()).collect(),
        ));
    }
    let curve = Trajectory::new(t, nodes)?;
    Ok(CurveSolve { integral: report.value, curve, report, restarts, multiple })
}

/// Result of a fundamental-solution minimization.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    /// `h_i = u_i(t) - a_i` for initial data, `a_i - u_i(0)` for terminal data.
    pub value: f64,
    pub minimizer: Trajectory,
    /// Running costs along the minimizer.
    pub costs: CaratheodoryState,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective after every accepted optimizer step.
    pub action_history: Vec<f64>,
    /// Whether the perturbed restart was needed.
    pub restarts: usize,
    /// Set when the restart found a different curve with the same value.
    pub multiple_minimizers: bool,
}

fn check_problem(
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
) -> Result<()> {
    let dim = check_set(set, a.size())?;
    if i >= a.size() {
        return Err(Error::InvalidInput(format!("equation index {i} out of range for {} equations", a.size())));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    if start.len() != dim || end.len() != dim {
        return Err(Error::InvalidInput(format!(
            "endpoints have dimensions {} and {}, Lagrangians have {dim}",
            start.len(),
            end.len()
        )));
    }
    if data.len() != a.size() {
        return Err(Error::InvalidInput(format!("boundary data has {} entries for {} equations", data.len(), a.size())));
    }
    Ok(())
}

/// Discretized `u_i(t)` along `curve` with `u(0) = data`:
/// `Σ_j b^i_j(t) a_j + Σ_k h Σ_j w^i_j(k) L^j(ξ(m_k), v_k)`.
pub fn discretized_action(
    i: usize,
    curve: &Trajectory,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    data: &DVector<f64>,
) -> Result<f64> {
    check_problem(i, curve.horizon(), curve.start(), curve.end(), data, a, set)?;
    let action = WeightedAction::negative(i, a, set, curve.horizon(), curve.segments())?;
    let b = matrix_exponential(a, -curve.horizon())?;
    Ok(b.row(i).transpose().dot(data) + action.integral(curve.nodes()))
}

/// Gradient of [`discretized_action`] with respect to the interior nodes
/// `1..N`.
pub fn action_gradient(
    i: usize,
    curve: &Trajectory,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    data: &DVector<f64>,
) -> Result<Vec<Vector>> {
    check_problem(i, curve.horizon(), curve.start(), curve.end(), data, a, set)?;
    let action = WeightedAction::negative(i, a, set, curve.horizon(), curve.segments())?;
    let (_, mut g) = action.integral_with_gradient(curve.nodes());
    g.pop();
    g.remove(0);
    Ok(g)
}

/// `h_i(t, start, end, a)`: the least `u_i(t) - a_i` over curves from `start`
/// (at `s = 0`, where `u(0) = a`) to `end` (at `s = t`).
#[allow(clippy::too_many_arguments)]
pub fn minimize_fundamental(
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    opts: &VariationalOptions,
) -> Result<FundamentalSolution> {
    minimize_fundamental_from(i, t, start, end, data, a, set, None, opts)
}

/// [`minimize_fundamental`] warm-started from a curve with `N` segments
/// (its end nodes are replaced by `start` and `end`).
#[allow(clippy::too_many_arguments)]
pub fn minimize_fundamental_from(
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    initial: Option<&Trajectory>,
    opts: &VariationalOptions,
) -> Result<FundamentalSolution> {
    check_problem(i, t, start, end, data, a, set)?;
    let action = WeightedAction::negative(i, a, set, t, opts.segments)?;
    let solve = solve_fixed_ends(&action, start, end, initial, opts)?;
    let b = matrix_exponential(a, -t)?;
    let value = solve.integral + b.row(i).transpose().dot(data) - data[i];
    let costs = integrate_linear(a, set, &solve.curve, data, BoundaryMode::Initial)?;
    Ok(FundamentalSolution {
        value,
        minimizer: solve.curve,
        costs,
        iterations: solve.report.iterations,
        gradient_norm: solve.report.gradient_norm(),
        action_history: solve.report.history,
        restarts: solve.restarts,
        multiple_minimizers: solve.multiple,
    })
}

/// `h̆_i(t, start, end, a)` with the terminal condition `u(t) = a`, through
/// the reversal identity `h̆_i(L - Au, t, x, y, a) = h_i(L̆ + Au, t, y, x, -a)`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_fundamental_terminal(
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    opts: &VariationalOptions,
) -> Result<FundamentalSolution> {
    check_problem(i, t, start, end, data, a, set)?;
    let rev = minimize_fundamental(i, t, end, start, &-data, &a.negated(), &reversed_set(set), opts)?;
    let n = rev.minimizer.segments();
    let values = (0..=n).map(|k| -rev.costs.at(n - k)).collect();
    Ok(FundamentalSolution {
        value: rev.value,
        minimizer: rev.minimizer.reversed(),
        costs: CaratheodoryState::from_parts(rev.costs.times().to_vec(), values, BoundaryMode::Terminal),
        ..rev
    })
}

/// `h̆_i` minimized directly with terminal weights `exp(A s)`, without the
/// reversal; an independent route to [`minimize_fundamental_terminal`].
#[allow(clippy::too_many_arguments)]
pub fn minimize_fundamental_terminal_direct(
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    opts: &VariationalOptions,
) -> Result<FundamentalSolution> {
    check_problem(i, t, start, end, data, a, set)?;
    let action = WeightedAction::terminal(i, a, set, t, opts.segments)?;
    let solve = solve_fixed_ends(&action, start, end, None, opts)?;
    let c = matrix_exponential(a, t)?;
    let value = solve.integral + data[i] - c.row(i).transpose().dot(data);
    let costs = integrate_linear(a, set, &solve.curve, data, BoundaryMode::Terminal)?;
    Ok(FundamentalSolution {
        value,
        minimizer: solve.curve,
        costs,
        iterations: solve.report.iterations,
        gradient_norm: solve.report.gradient_norm(),
        action_history: solve.report.history,
        restarts: solve.restarts,
        multiple_minimizers: solve.multiple,
    })
}

/// Residual of the Herglotz-form equation
/// `d/ds L^i_v = L^i_x - Σ_j a_ij L^j_v` along a curve, the sup over interior
/// nodes with derivatives taken by differences of segment quantities.
///
/// This form coincides with the Euler–Lagrange equation of the weighted
/// action when all `L^j` are equal and the rows of `A` have a common sum (or
/// `m = 1`); [`weighted_el_residual`] measures the weighted equation in
/// general.
pub fn el_residual(i: usize, curve: &Trajectory, a: &CouplingMatrix, set: &[LagrangianRef]) -> Result<f64> {
    let dim = check_set(set, a.size())?;
    if curve.dim() != dim || i >= a.size() {
        return Err(Error::InvalidInput("curve or index inconsistent with the Lagrangian set".into()));
    }
    let n = curve.segments();
    let h = curve.step();
    let seg: Vec<(Vector, Vector)> = (0..n).map(|k| (curve.midpoint(k), curve.velocity(k))).collect();
    let mut worst: f64 = 0.0;
    for l in 1..n {
        let (x0, v0) = &seg[l - 1];
        let (x1, v1) = &seg[l];
        let li = &set[i];
        let dp = (li.grad_v(x1, v1) - li.grad_v(x0, v0)) / h;
        let lx = (li.grad_x(x0, v0) + li.grad_x(x1, v1)) * 0.5;
        let mut coupling = Vector::zeros(dim);
        for (j, lj) in set.iter().enumerate() {
            let aij = a.get(i, j);
            if aij != 0.0 {
                coupling += (lj.grad_v(x0, v0) + lj.grad_v(x1, v1)) * (0.5 * aij);
            }
        }
        worst = worst.max((dp - lx + coupling).norm());
    }
    Ok(worst)
}

/// Residual of `d/ds 𝕃^i_v = 𝕃^i_x`, the discrete Euler–Lagrange equation of
/// the weighted action (interior-node gradient divided by the step).
pub fn weighted_el_residual(i: usize, curve: &Trajectory, a: &CouplingMatrix, set: &[LagrangianRef]) -> Result<f64> {
    let action = WeightedAction::negative(i, a, set, curve.horizon(), curve.segments())?;
    action.check_nodes(curve.nodes())?;
    Ok(action.el_residual(curve.nodes()))
}
