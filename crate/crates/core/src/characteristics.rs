//! Characteristic curves: second-order Euler–Lagrange flows, the Lie
//! system of positions, momenta and running costs, and the dual-arc
//! identities linking them to the inf-convolution Hamiltonian.

use nalgebra::{DMatrix, DVector};

use crate::caratheodory::{integrate_linear, BoundaryMode, Trajectory};
use crate::coupling::{CouplingMatrix, Propagator};
use crate::csv::join_row;
use crate::error::{Error, Result};
use crate::lagrangian::{check_set, inf_convolution_hamiltonian, LagrangianRef, Vector};
use crate::variational::FundamentalSolution;

/// Which second-order equation a flow integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// `d/ds L^i_v = L^i_x − Σ_j a_ij L^j_v`.
    Herglotz,
    /// `d/ds 𝕃^i_v = 𝕃^i_x` for the weighted Lagrangian with weights
    /// `d(s) = exp(A(s − t))`, the Euler–Lagrange equation of the action
    /// minimized by [`crate::variational::minimize_fundamental`].
    Weighted,
}

/// A flow sampled at `steps + 1` equally spaced times.
#[derive(Debug, Clone)]
pub struct Flow {
    pub curve: Trajectory,
    pub velocities: Vec<Vector>,
}

/// Relative eigenvalue floor below which a velocity Hessian counts as singular.
const SINGULAR: f64 = 1e-12;

fn solve_spd(m: &DMatrix<f64>, r: &Vector, what: &str) -> Result<Vector> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    if !(lo > SINGULAR * scale) {
        return Err(Error::Singular(format!("{what}: smallest eigenvalue {lo:.3e}")));
    }
    sym.cholesky().map(|c| c.solve(r)).ok_or_else(|| Error::Singular(what.into()))
}

struct FlowProblem<'a> {
    kind: FlowKind,
    i: usize,
    a: &'a CouplingMatrix,
    set: &'a [LagrangianRef],
    prop: Option<Propagator>,
}

impl FlowProblem<'_> {
    /// `ξ̈` at time `s`.
    fn acceleration(&self, s: f64, x: &Vector, v: &Vector) -> Result<Vector> {
        match self.kind {
            FlowKind::Herglotz => {
                let li = &self.set[self.i];
                let mut rhs = li.grad_x(x, v) - li.hess_vx(x, v) * v;
                for (j, lj) in self.set.iter().enumerate() {
                    let aij = self.a.get(self.i, j);
                    if aij != 0.0 {
                        rhs -= lj.grad_v(x, v) * aij;
                    }
                }
                solve_spd(&li.hess_v(x, v), &rhs, "Herglotz flow")
            }
            FlowKind::Weighted => {
                let prop = self.prop.as_ref().expect("weighted flows carry a propagator");
                let d = prop.d(s)?;
                let da = &d * self.a.entries();
                let dim = x.len();
                let mut hess = DMatrix::zeros(dim, dim);
                let mut rhs = Vector::zeros(dim);
                for (j, lj) in self.set.iter().enumerate() {
                    let (w, dw) = (d[(self.i, j)], da[(self.i, j)]);
                    if w != 0.0 {
                        hess += lj.hess_v(x, v) * w;
                        rhs += (lj.grad_x(x, v) - lj.hess_vx(x, v) * v) * w;
                    }
                    if dw != 0.0 {
                        rhs -= lj.grad_v(x, v) * dw;
                    }
                }
                solve_spd(&hess, &rhs, "weighted Euler-Lagrange flow")
            }
        }
    }

    fn run(&self, x0: &Vector, v0: &Vector, t: f64, steps: usize) -> Result<Flow> {
        let h = t / steps as f64;
        let mut x = x0.clone();
        let mut v = v0.clone();
        let mut nodes = vec![x.clone()];
        let mut velocities = vec![v.clone()];
        for k in 0..steps {
            let s = k as f64 * h;
            let a1 = self.acceleration(s, &x, &v)?;
            let (x2, v2) = (&x + &v * (0.5 * h), &v + &a1 * (0.5 * h));
            let a2 = self.acceleration(s + 0.5 * h, &x2, &v2)?;
            let (x3, v3) = (&x + &v2 * (0.5 * h), &v + &a2 * (0.5 * h));
            let a3 = self.acceleration(s + 0.5 * h, &x3, &v3)?;
            let (x4, v4) = (&x + &v3 * h, &v + &a3 * h);
            let a4 = self.acceleration(s + h, &x4, &v4)?;
            x += (&v + &v2 * 2.0 + &v3 * 2.0 + &v4) * (h / 6.0);
            v += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
            if !x.iter().chain(v.iter()).all(|c| c.is_finite()) {
                return Err(Error::Range(format!("flow left floating-point range at s = {}", s + h)));
            }
            nodes.push(x.clone());
            velocities.push(v.clone());
        }
        Ok(Flow { curve: Trajectory::new(t, nodes)?, velocities })
    }
}

fn check_flow(i: usize, x0: &Vector, v0: &Vector, t: f64, a: &CouplingMatrix, set: &[LagrangianRef], steps: usize) -> Result<()> {
    let dim = check_set(set, a.size())?;
    if i >= a.size() {
        return Err(Error::InvalidInput(format!("equation index {i} out of range for {} equations", a.size())));
    }
    if x0.len() != dim || v0.len() != dim {
        return Err(Error::InvalidInput(format!("initial state must have dimension {dim}")));
    }
    if !(t > 0.0 && t.is_finite()) || steps == 0 {
        return Err(Error::Domain(format!("flow needs a positive horizon and step count, got t = {t}, {steps} steps")));
    }
    Ok(())
}

/// Integrates the chosen Euler–Lagrange equation of equation `i` from
/// `(x0, v0)` with `steps` classical RK4 steps.
#[allow(clippy::too_many_arguments)]
pub fn euler_lagrange_flow(
    kind: FlowKind,
    i: usize,
    x0: &Vector,
    v0: &Vector,
    t: f64,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    steps: usize,
) -> Result<Flow> {
    check_flow(i, x0, v0, t, a, set, steps)?;
    let prop = match kind {
        FlowKind::Herglotz => None,
        FlowKind::Weighted => Some(Propagator::new(a, t)?),
    };
    FlowProblem { kind, i, a, set, prop }.run(x0, v0, t, steps)
}

/// [`euler_lagrange_flow`] for the Herglotz form.
pub fn herglotz_flow(
    i: usize,
    x0: &Vector,
    v0: &Vector,
    t: f64,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    steps: usize,
) -> Result<Flow> {
    euler_lagrange_flow(FlowKind::Herglotz, i, x0, v0, t, a, set, steps)
}

/// Settings of [`shoot`].
#[derive(Debug, Clone, Copy)]
pub struct ShootingOptions {
    pub steps: usize,
    /// Required `‖ξ(t) − end‖∞`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self { steps: 1000, tolerance: 1e-10, max_iterations: 50 }
    }
}

/// Finds `v0` whose flow from `start` reaches `end` at time `t`, by damped
/// Newton iteration with a finite-difference Jacobian of the endpoint map.
#[allow(clippy::too_many_arguments)]
pub fn shoot(
    kind: FlowKind,
    i: usize,
    t: f64,
    start: &Vector,
    end: &Vector,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    opts: &ShootingOptions,
) -> Result<Vector> {
    let mut v = (end - start) / t;
    check_flow(i, start, &v, t, a, set, opts.steps)?;
    let problem = FlowProblem {
        kind,
        i,
        a,
        set,
        prop: if kind == FlowKind::Weighted { Some(Propagator::new(a, t)?) } else { None },
    };
    let miss = |v: &Vector| -> Result<Vector> { Ok(problem.run(start, v, t, opts.steps)?.curve.end() - end) };
    let dim = start.len();
    let mut r = miss(&v)?;
    for _ in 0..opts.max_iterations {
        if r.amax() <= opts.tolerance {
            return Ok(v);
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let eps = 1e-6 * (1.0 + v[k].abs());
            let mut vp = v.clone();
            vp[k] += eps;
            let mut vm = v.clone();
            vm[k] -= eps;
            jac.set_column(k, &((miss(&vp)? - miss(&vm)?) / (2.0 * eps)));
        }
        let step = jac.lu().solve(&r).ok_or_else(|| Error::Singular("shooting Jacobian".into()))?;
        let mut lambda = 1.0;
        loop {
            let trial = &v - &step * lambda;
            let rt = miss(&trial);
            if let Ok(rt) = rt {
                if rt.norm() < r.norm() || lambda < 1e-3 {
                    v = trial;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-3 {
                return Err(Error::convergence("shooting", 0, r.amax(), v.iter().copied().collect()));
            }
        }
    }
    if r.amax() <= opts.tolerance {
        return Ok(v);
    }
    Err(Error::convergence("shooting", opts.max_iterations, r.amax(), v.iter().copied().collect()))
}

/// One characteristic `ξ_i` with its momenta `p^j_i` and costs `u^j_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    /// The equation `i` whose characteristic this is.
    pub index: usize,
    pub positions: Vec<Vector>,
    pub velocities: Vec<Vector>,
    /// `momenta[sample][j] = p^j_i`.
    pub momenta: Vec<Vec<Vector>>,
    /// `costs[sample][j] = u^j_i`.
    pub costs: Vec<DVector<f64>>,
    /// `p_i = Σ_j d^i_j p^j_i`.
    pub composite: Vec<Vector>,
}

/// A set of characteristics sampled at common times on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicBundle {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub arcs: Vec<Arc>,
    /// Largest `‖H^j_p(ξ_i, p^j_i) − ξ̇_i‖∞` seen along the flow.
    pub velocity_defect: f64,
}

impl CharacteristicBundle {
    /// CSV with columns `s`, then per arc `i`: `xi{i}_k`, `p{i}_{j}_k`,
    /// `u{i}_{j}` (all indices 1-based).
    pub fn to_csv(&self) -> String {
        let mut header = vec!["s".to_string()];
        for arc in &self.arcs {
            let i = arc.index + 1;
            let dim = arc.positions[0].len();
            let m = arc.costs[0].len();
            header.extend((1..=dim).map(|k| format!("xi{i}_{k}")));
            for j in 1..=m {
                header.extend((1..=dim).map(|k| format!("p{i}_{j}_{k}")));
            }
            header.extend((1..=m).map(|j| format!("u{i}_{j}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for (n, &s) in self.times.iter().enumerate() {
            let mut row = vec![s];
            for arc in &self.arcs {
                row.extend(arc.positions[n].iter());
                for p in &arc.momenta[n] {
                    row.extend(p.iter());
                }
                row.extend(arc.costs[n].iter());
            }
            out.push_str(&join_row(row));
            out.push('\n');
        }
        out
    }
}

/// Initial state of one characteristic of the Lie system.
#[derive(Debug, Clone)]
pub struct LieInitial {
    pub index: usize,
    pub position: Vector,
    /// `p^j_i(0)` for every `j`.
    pub momenta: Vec<Vector>,
    /// `u^j_i(0)` for every `j`.
    pub costs: DVector<f64>,
}

impl LieInitial {
    /// Consistent momenta `p^j_i(0) = L^j_v(x, v)` for a common velocity.
    pub fn from_velocity(index: usize, x: &Vector, v: &Vector, costs: DVector<f64>, set: &[LagrangianRef]) -> Self {
        Self { index, position: x.clone(), momenta: set.iter().map(|l| l.grad_v(x, v)).collect(), costs }
    }
}

/// Largest disagreement between the velocities `H^j_p(x, p^j)` and `v`.
fn velocity_spread(set: &[LagrangianRef], x: &Vector, momenta: &[Vector], v: &Vector) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (l, p) in set.iter().zip(momenta) {
        worst = worst.max((l.hamiltonian(x, p)?.grad_p - v).amax());
    }
    Ok(worst)
}

/// Initial-momentum consistency threshold of [`lie_flow`].
pub const INITIAL_DEFECT: f64 = 1e-6;

struct LieState {
    x: Vector,
    p: Vec<Vector>,
    u: DVector<f64>,
}

impl LieState {
    fn axpy(&self, h: f64, d: &LieState) -> LieState {
        LieState {
            x: &self.x + &d.x * h,
            p: self.p.iter().zip(&d.p).map(|(p, dp)| p + dp * h).collect(),
            u: &self.u + &d.u * h,
        }
    }
}

/// Right-hand side of the Lie system for characteristic `i`; also returns
/// the velocity `ξ̇_i = H^1_p(ξ_i, p^1_i)`.
fn lie_rhs(i: usize, a: &CouplingMatrix, set: &[LagrangianRef], st: &LieState) -> Result<(LieState, Vector)> {
    let x = &st.x;
    let v = set[0].hamiltonian(x, &st.p[0])?.grad_p;
    let hi = set[i].hamiltonian(x, &st.p[i])?;
    let mut dpi = -hi.grad_x;
    for (k, pk) in st.p.iter().enumerate() {
        let aik = a.get(i, k);
        if aik != 0.0 {
            dpi -= pk * aik;
        }
    }
    // ξ̈ consistent with ṗ^i_i, then every other momentum follows by the
    // chain rule from p^j_i = L^j_v(ξ_i, ξ̇_i).
    let li = &set[i];
    let acc = solve_spd(&li.hess_v(x, &v), &(&dpi - li.hess_vx(x, &v) * &v), "Lie system")?;
    let dp = set
        .iter()
        .enumerate()
        .map(|(j, lj)| if j == i { dpi.clone() } else { lj.hess_vx(x, &v) * &v + lj.hess_v(x, &v) * &acc })
        .collect();
    let m = set.len();
    let du = DVector::from_iterator(m, set.iter().map(|l| l.value(x, &v))) - a.entries() * &st.u;
    Ok((LieState { x: v.clone(), p: dp, u: du }, v))
}

/// Integrates the Lie characteristic system with `steps` RK4 steps:
/// `ξ̇_i = H^1_p(ξ_i, p^1_i)`, `ṗ^i_i = −H^i_x − Σ_k a_ik p^k_i`, the
/// remaining momenta by the chain rule, and
/// `u̇^j_i = L^j(ξ_i, ξ̇_i) − Σ_k a_jk u^k_i`.
pub fn lie_flow(
    initial: &[LieInitial],
    t: f64,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
    steps: usize,
) -> Result<CharacteristicBundle> {
    let dim = check_set(set, a.size())?;
    let m = a.size();
    if !(t > 0.0 && t.is_finite()) || steps == 0 {
        return Err(Error::Domain(format!("flow needs a positive horizon and step count, got t = {t}, {steps} steps")));
    }
    let prop = Propagator::new(a, t)?;
    let h = t / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| if k == steps { t } else { k as f64 * h }).collect();
    let ds: Vec<DMatrix<f64>> = times.iter().map(|&s| prop.d(s)).collect::<Result<_>>()?;
    let mut defect: f64 = 0.0;
    let mut arcs = Vec::with_capacity(initial.len());
    for init in initial {
        let i = init.index;
        if i >= m || init.position.len() != dim || init.momenta.len() != m || init.costs.len() != m {
            return Err(Error::InvalidInput(format!("initial state of arc {i} has inconsistent sizes")));
        }
        if init.momenta.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput(format!("momenta of arc {i} must have dimension {dim}")));
        }
        let mut st = LieState { x: init.position.clone(), p: init.momenta.clone(), u: init.costs.clone() };
        let v0 = set[0].hamiltonian(&st.x, &st.p[0])?.grad_p;
        let d0 = velocity_spread(set, &st.x, &st.p, &v0)?;
        if d0 > INITIAL_DEFECT {
            return Err(Error::InvalidInitialization(format!(
                "arc {i}: momenta imply velocities differing by {d0:.3e}"
            )));
        }
        let mut arc = Arc {
            index: i,
            positions: Vec::with_capacity(steps + 1),
            velocities: Vec::with_capacity(steps + 1),
            momenta: Vec::with_capacity(steps + 1),
            costs: Vec::with_capacity(steps + 1),
            composite: Vec::with_capacity(steps + 1),
        };
        for (k, d) in ds.iter().enumerate() {
            let (k1, v) = lie_rhs(i, a, set, &st)?;
            defect = defect.max(velocity_spread(set, &st.x, &st.p, &v)?);
            arc.composite.push(st.p.iter().enumerate().fold(Vector::zeros(dim), |acc, (j, p)| acc + p * d[(i, j)]));
            arc.positions.push(st.x.clone());
            arc.velocities.push(v);
            arc.momenta.push(st.p.clone());
            arc.costs.push(st.u.clone());
            if k == steps {
                break;
            }
            let (k2, _) = lie_rhs(i, a, set, &st.axpy(0.5 * h, &k1))?;
            let (k3, _) = lie_rhs(i, a, set, &st.axpy(0.5 * h, &k2))?;
            let (k4, _) = lie_rhs(i, a, set, &st.axpy(h, &k3))?;
            let sum = LieState {
                x: &k1.x + &k2.x * 2.0 + &k3.x * 2.0 + &k4.x,
                p: (0..m).map(|j| &k1.p[j] + &k2.p[j] * 2.0 + &k3.p[j] * 2.0 + &k4.p[j]).collect(),
                u: &k1.u + &k2.u * 2.0 + &k3.u * 2.0 + &k4.u,
            };
            st = st.axpy(h / 6.0, &sum);
        }
        arcs.push(arc);
    }
    Ok(CharacteristicBundle { horizon: t, times, arcs, velocity_defect: defect })
}

/// The bundle of equation `i` along an integrated flow, sampled at the flow
/// nodes with momenta `p^j = L^j_v(ξ, ξ̇)` and costs started from `data`.
pub fn bundle_from_flow(
    i: usize,
    flow: &Flow,
    data: &DVector<f64>,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
) -> Result<CharacteristicBundle> {
    check_set(set, a.size())?;
    let curve = &flow.curve;
    let t = curve.horizon();
    let prop = Propagator::new(a, t)?;
    let costs = integrate_linear(a, set, curve, data, BoundaryMode::Initial)?;
    let n = curve.segments() + 1;
    let mut arc = Arc {
        index: i,
        positions: curve.nodes().to_vec(),
        velocities: flow.velocities.clone(),
        momenta: Vec::with_capacity(n),
        costs: costs.values().to_vec(),
        composite: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (x, v) = (&arc.positions[k], &arc.velocities[k]);
        let d = prop.d(curve.time(k))?;
        let momenta: Vec<Vector> = set.iter().map(|l| l.grad_v(x, v)).collect();
        arc.composite.push(momenta.iter().enumerate().fold(Vector::zeros(x.len()), |acc, (j, p)| acc + p * d[(i, j)]));
        arc.momenta.push(momenta);
    }
    let times = (0..n).map(|k| curve.time(k)).collect();
    Ok(CharacteristicBundle { horizon: t, times, arcs: vec![arc], velocity_defect: 0.0 })
}

/// Reconstructs the bundle of equation `i` along a variational minimizer,
/// sampled at segment midpoints with the segment velocities.
pub fn bundle_from_minimizer(
    i: usize,
    solution: &FundamentalSolution,
    a: &CouplingMatrix,
    set: &[LagrangianRef],
) -> Result<CharacteristicBundle> {
    check_set(set, a.size())?;
    let curve = &solution.minimizer;
    let t = curve.horizon();
    let prop = Propagator::new(a, t)?;
    let n = curve.segments();
    let data = solution.costs.initial().clone();
    let costs = integrate_linear(a, set, curve, &data, BoundaryMode::Initial)?;
    let mut arc = Arc {
        index: i,
        positions: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
        momenta: Vec::with_capacity(n),
        costs: Vec::with_capacity(n),
        composite: Vec::with_capacity(n),
    };
    let mut times = Vec::with_capacity(n);
    for k in 0..n {
        let s = curve.midpoint_time(k);
        let (x, v) = (curve.midpoint(k), curve.velocity(k));
        let d = prop.d(s)?;
        let momenta: Vec<Vector> = set.iter().map(|l| l.grad_v(&x, &v)).collect();
        arc.composite.push(momenta.iter().enumerate().fold(Vector::zeros(x.len()), |acc, (j, p)| acc + p * d[(i, j)]));
        arc.momenta.push(momenta);
        arc.costs.push((costs.at(k) + costs.at(k + 1)) * 0.5);
        arc.positions.push(x);
        arc.velocities.push(v);
        times.push(s);
    }
    Ok(CharacteristicBundle { horizon: t, times, arcs: vec![arc], velocity_defect: 0.0 })
}

/// Residuals of the dual-arc identities along every arc of a bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualArcResiduals {
    /// `sup_s ‖𝕃^i_v(s, ξ_i, ξ̇_i) − Σ_j d^i_j(s) p^j_i(s)‖∞`.
    pub momentum: f64,
    /// `sup_s |ℍ^i(s, ξ_i, p_i) − Σ_j d^i_j(s) H^j(ξ_i, p^j_i)|`.
    pub hamiltonian: f64,
}

/// Checks `p_i = Σ_j d^i_j p^j_i` and `ℍ^i(s, ξ_i, p_i) = Σ_j d^i_j H^j(ξ_i, p^j_i)`.
///
/// `p_i` is recomputed from the weighted Lagrangian at the stored position
/// and velocity, and `ℍ^i` by the inf-convolution Newton solve, so neither
/// side reuses the bundle's own composite momentum.
pub fn dual_arc_check(
    bundle: &CharacteristicBundle,
    propagator: &Propagator,
    set: &[LagrangianRef],
) -> Result<DualArcResiduals> {
    check_set(set, propagator.size())?;
    let mut out = DualArcResiduals { momentum: 0.0, hamiltonian: 0.0 };
    for arc in &bundle.arcs {
        let i = arc.index;
        for (n, &s) in bundle.times.iter().enumerate() {
            let d = propagator.d(s)?;
            let (x, v) = (&arc.positions[n], &arc.velocities[n]);
            let mut lv = Vector::zeros(x.len());
            let mut split_sum = Vector::zeros(x.len());
            let mut h_sum = 0.0;
            for (j, l) in set.iter().enumerate() {
                let w = d[(i, j)];
                lv += l.grad_v(x, v) * w;
                split_sum += &arc.momenta[n][j] * w;
                h_sum += w * l.hamiltonian(x, &arc.momenta[n][j])?.value;
            }
            out.momentum = out.momentum.max((&lv - &split_sum).amax());
            let big_h = inf_convolution_hamiltonian(i, propagator, set, s, x, &lv)?.value;
            out.hamiltonian = out.hamiltonian.max((big_h - h_sum).abs());
        }
    }
    Ok(out)
}
