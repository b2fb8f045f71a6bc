//! Monotone finite-difference solver for weakly coupled systems in one space
//! dimension, used as an independent check on the variational fields.
//!
//! Each time step applies the Lax–Friedrichs update of every equation,
//! `u_i ← u_i − Δt Ĥ^i(x, D⁻u_i, D⁺u_i)` with
//! `Ĥ(x, p⁻, p⁺) = H(x, (p⁻ + p⁺)/2) − α (p⁺ − p⁻)/2`, followed by the exact
//! coupling step `u ← exp(−A Δt) u` at every node.

use serde::{Deserialize, Serialize};

use crate::coupling::{matrix_exponential, CouplingMatrix};
use crate::error::{Error, Result};
use crate::lagrangian::{check_set, Lagrangian, LagrangianRef, Vector};
use crate::lax_oleinik::{Grid, InitialData, ValueField};

/// Ghost-node treatment at the two ends of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Ghost value equal to the boundary value.
    #[default]
    Copy,
    /// Ghost value continuing the boundary slope.
    Linear,
    /// The last node is identified with the first.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub grid: Grid,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Per-equation artificial viscosity; chosen from the data when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub boundary: Boundary,
    pub final_time: f64,
}

fn default_cfl() -> f64 {
    0.4
}

impl SchemeConfig {
    pub fn new(grid: Grid, final_time: f64) -> Self {
        Self { grid, cfl: default_cfl(), alpha: None, boundary: Boundary::default(), final_time }
    }

    fn validate(&self, m: usize) -> Result<()> {
        self.grid.validate()?;
        if self.grid.dim() != 1 {
            return Err(Error::InvalidInput(format!("the scheme is one-dimensional, grid has {} axes", self.grid.dim())));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidInput(format!("CFL number must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.final_time >= 0.0 && self.final_time.is_finite()) {
            return Err(Error::Domain(format!("final time must be non-negative, got {}", self.final_time)));
        }
        if let Some(alpha) = &self.alpha {
            if alpha.len() != m || alpha.iter().any(|a| !(*a > 0.0)) {
                return Err(Error::InvalidInput(format!("need {m} positive viscosities, got {alpha:?}")));
            }
        }
        Ok(())
    }
}

/// Run statistics of a scheme solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub steps: usize,
    pub dt: f64,
    pub alpha: Vec<f64>,
    /// Whether the viscosities were enlarged and the run repeated.
    pub recomputed: bool,
}

/// Sign conventions distinguishing the two systems.
#[derive(Debug, Clone, Copy)]
enum Orientation {
    /// `u_t + H(x, u_x) + A u = 0`, `u(0) = φ`.
    Negative,
    /// The mirrored system solved for `w = −u`:
    /// `w_t + H(x, −w_x) − A w = 0`, `w(0) = −φ`.
    Positive,
}

struct Scheme<'a> {
    set: &'a [LagrangianRef],
    xs: Vec<f64>,
    dx: f64,
    boundary: Boundary,
    flip: f64,
}

impl Scheme<'_> {
    fn h(&self, i: usize, x: f64, p: f64) -> Result<(f64, f64)> {
        let hp = self.set[i].hamiltonian(&Vector::from_element(1, x), &Vector::from_element(1, self.flip * p))?;
        Ok((hp.value, self.flip * hp.grad_p[0]))
    }

    fn one_sided(&self, u: &[f64], k: usize) -> (f64, f64) {
        let n = u.len();
        let (left, right) = match self.boundary {
            Boundary::Periodic => {
                // Node n-1 duplicates node 0.
                let left = if k == 0 { u[n - 2] } else { u[k - 1] };
                let right = if k + 1 == n { u[1] } else { u[k + 1] };
                (left, right)
            }
            Boundary::Copy => (u[k.saturating_sub(1)], u[(k + 1).min(n - 1)]),
            Boundary::Linear => {
                let left = if k == 0 { 2.0 * u[0] - u[1] } else { u[k - 1] };
                let right = if k + 1 == n { 2.0 * u[n - 1] - u[n - 2] } else { u[k + 1] };
                (left, right)
            }
        };
        ((u[k] - left) / self.dx, (right - u[k]) / self.dx)
    }

    /// Largest `|D u|` over all one-sided differences.
    fn max_slope(&self, u: &[Vec<f64>]) -> f64 {
        u.iter()
            .flat_map(|ui| (0..ui.len()).map(move |k| (ui, k)))
            .map(|(ui, k)| {
                let (a, b) = self.one_sided(ui, k);
                a.abs().max(b.abs())
            })
            .fold(0.0, f64::max)
    }

    /// `1.1 max |H^i_p|` over the grid and `|p| ≤ bound`.
    fn viscosities(&self, bound: f64) -> Result<Vec<f64>> {
        let samples = 41;
        (0..self.set.len())
            .map(|i| {
                let mut worst: f64 = 0.0;
                for &x in &self.xs {
                    for s in 0..samples {
                        let p = -bound + 2.0 * bound * s as f64 / (samples - 1) as f64;
                        worst = worst.max(self.h(i, x, p)?.1.abs());
                    }
                }
                Ok((1.1 * worst).max(1e-12))
            })
            .collect()
    }
}

fn run(
    set: &[LagrangianRef],
    a: &CouplingMatrix,
    phi: &InitialData,
    config: &SchemeConfig,
    orientation: Orientation,
) -> Result<(ValueField, SchemeReport)> {
    let m = a.size();
    let dim = check_set(set, m)?;
    config.validate(m)?;
    if dim != 1 || phi.len() != m {
        return Err(Error::InvalidInput(format!("need one-dimensional Lagrangians and {m} data components")));
    }
    let grid = &config.grid;
    let n = grid.len();
    let (flip, coupling) = match orientation {
        Orientation::Negative => (1.0, a.clone()),
        Orientation::Positive => (-1.0, a.negated()),
    };
    let scheme = Scheme {
        set,
        xs: (0..n).map(|k| grid.coordinate(0, k)).collect(),
        dx: grid.spacing(0),
        boundary: config.boundary,
        flip,
    };
    let u0: Vec<Vec<f64>> = (0..m)
        .map(|i| scheme.xs.iter().map(|&x| flip * phi.value(i, &Vector::from_element(1, x))).collect())
        .collect();

    let fixed = config.alpha.clone();
    let mut bound = 1.1 * scheme.max_slope(&u0);
    let mut recomputed = false;
    loop {
        let alpha = match &fixed {
            Some(a) => a.clone(),
            None => scheme.viscosities(bound)?,
        };
        match march(&scheme, &coupling, u0.clone(), &alpha, config)? {
            March::Done(u, steps, dt) => {
                let mut field = ValueField::new(grid.clone(), config.final_time, u)?;
                if let Orientation::Positive = orientation {
                    field = field.negated();
                }
                return Ok((field, SchemeReport { steps, dt, alpha, recomputed }));
            }
            March::Exceeded { speed, slope, step } => {
                if fixed.is_some() || recomputed {
                    return Err(Error::Stability(format!(
                        "characteristic speed {speed:.4e} exceeds the viscosity at step {step}"
                    )));
                }
                recomputed = true;
                bound = 1.1 * slope.max(bound);
            }
        }
    }
}

enum March {
    Done(Vec<Vec<f64>>, usize, f64),
    Exceeded { speed: f64, slope: f64, step: usize },
}

fn march(scheme: &Scheme, a: &CouplingMatrix, mut u: Vec<Vec<f64>>, alpha: &[f64], config: &SchemeConfig) -> Result<March> {
    let m = u.len();
    let n = scheme.xs.len();
    let max_alpha = alpha.iter().copied().fold(0.0, f64::max);
    let dt_max = config.cfl * scheme.dx / (max_alpha + scheme.dx * a.row_norm());
    let steps = if config.final_time == 0.0 { 0 } else { (config.final_time / dt_max).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { config.final_time / steps as f64 };
    let decay = matrix_exponential(a, -dt)?;
    let mut next = vec![0.0; n];
    for step in 0..steps {
        for (i, ui) in u.iter_mut().enumerate() {
            for k in 0..n {
                let (pm, pp) = scheme.one_sided(ui, k);
                let (h, hp) = scheme.h(i, scheme.xs[k], 0.5 * (pm + pp))?;
                if hp.abs() > alpha[i] {
                    return Ok(March::Exceeded { speed: hp.abs(), slope: pm.abs().max(pp.abs()), step });
                }
                next[k] = ui[k] - dt * lax_friedrichs(h, alpha[i], pm, pp);
            }
            ui.copy_from_slice(&next);
            if scheme.boundary == Boundary::Periodic {
                ui[n - 1] = ui[0];
            }
        }
        if m > 1 || a.get(0, 0) != 0.0 {
            let mut col = nalgebra::DVector::zeros(m);
            #[allow(clippy::needless_range_loop)]
            for k in 0..n {
                for i in 0..m {
                    col[i] = u[i][k];
                }
                let out = &decay * &col;
                for i in 0..m {
                    u[i][k] = out[i];
                }
            }
        }
        if u.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Stability(format!("non-finite values at step {}", step + 1)));
        }
    }
    Ok(March::Done(u, steps, dt))
}

fn lax_friedrichs(h_mean: f64, alpha: f64, pm: f64, pp: f64) -> f64 {
    h_mean - 0.5 * alpha * (pp - pm)
}

/// The Lax-Friedrichs numerical Hamiltonian
/// `Ĥ(x, p⁻, p⁺) = H(x, (p⁻ + p⁺)/2) − α (p⁺ − p⁻)/2` of one 1D Lagrangian,
/// as used by [`solve_system`].
pub fn numerical_hamiltonian(l: &dyn Lagrangian, x: f64, pm: f64, pp: f64, alpha: f64) -> Result<f64> {
    let h = l.hamiltonian(&Vector::from_element(1, x), &Vector::from_element(1, 0.5 * (pm + pp)))?;
    Ok(lax_friedrichs(h.value, alpha, pm, pp))
}

/// Solves `u_t + H^i(x, u^i_x) + Σ_j a_ij u^j = 0`, `u(0) = φ`, up to the
/// configured final time. The Hamiltonians are the Legendre transforms of
/// `set`.
pub fn solve_system(
    set: &[LagrangianRef],
    a: &CouplingMatrix,
    phi: &InitialData,
    config: &SchemeConfig,
) -> Result<(ValueField, SchemeReport)> {
    run(set, a, phi, config, Orientation::Negative)
}

/// The positive-type system, solved through `w = −u` with the momentum
/// argument and the coupling sign flipped and data `−φ`; returns `u`.
pub fn solve_system_positive(
    set: &[LagrangianRef],
    a: &CouplingMatrix,
    phi: &InitialData,
    config: &SchemeConfig,
) -> Result<(ValueField, SchemeReport)> {
    run(set, a, phi, config, Orientation::Positive)
}

/// Differences between two fields on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub linf: f64,
    /// `Σ |Δu| ΔV` over nodes and equations, with `ΔV` the grid cell volume.
    pub l1: f64,
    /// Equation and node of the largest difference.
    pub argmax: (usize, usize),
    /// Coordinates of that node.
    pub location: Vec<f64>,
}

/// Sup and `L¹` distances between two fields.
pub fn compare(a: &ValueField, b: &ValueField) -> Result<Comparison> {
    let same_grid = a.grid.points == b.grid.points
        && a.grid.min.iter().zip(&b.grid.min).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
        && a.grid.max.iter().zip(&b.grid.max).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    if !same_grid {
        return Err(Error::InvalidComparison(format!("grids differ: {:?} vs {:?}", a.grid, b.grid)));
    }
    if (a.time - b.time).abs() > 1e-12 * (1.0 + a.time.abs()) {
        return Err(Error::InvalidComparison(format!("times differ: {} vs {}", a.time, b.time)));
    }
    if a.components() != b.components() {
        return Err(Error::InvalidComparison(format!("{} vs {} equations", a.components(), b.components())));
    }
    let cell: f64 = (0..a.grid.dim()).map(|k| a.grid.spacing(k)).product();
    let mut out = Comparison { linf: 0.0, l1: 0.0, argmax: (0, 0), location: a.grid.node(0).iter().copied().collect() };
    for i in 0..a.components() {
        for k in 0..a.grid.len() {
            let d = (a.values[i][k] - b.values[i][k]).abs();
            out.l1 += d * cell;
            if d > out.linf {
                out.linf = d;
                out.argmax = (i, k);
            }
        }
    }
    out.location = a.grid.node(out.argmax.1).iter().copied().collect();
    Ok(out)
}
