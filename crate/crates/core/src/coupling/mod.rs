//! Coupling-matrix algebra.
//!
//! A weakly coupled system couples its `m` equations through a real matrix
//! `A` acting on the running costs `u`. This module certifies the two
//! structural conditions the theory relies on (cooperativeness and
//! irreducibility), evaluates the exponentials `exp(±Aτ)` that turn the linear
//! cost dynamics into closed form, and computes the short horizon on which an
//! arbitrary coupling still yields convex weighted Lagrangians.

mod expm;
mod horizon;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub use expm::expm;
pub use horizon::{short_horizon, Horizon, HorizonOptions};

/// The `m × m` coupling matrix together with its certification flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    entries: DMatrix<f64>,
    cooperative: bool,
    irreducible: bool,
}

impl CouplingMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidMatrix(format!(
                "coupling matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(((i, j), x)) = entries
            .iter()
            .enumerate()
            .map(|(k, x)| ((k % entries.nrows(), k / entries.nrows()), x))
            .find(|(_, x)| !x.is_finite())
        {
            return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {x} is not finite")));
        }
        let cooperative = off_diagonal_violations(&entries).is_empty();
        let irreducible = strongly_connected_components(&entries).len() == 1;
        Ok(Self { entries, cooperative, irreducible })
    }

    /// Builds the matrix from rows; every row must have the same length as
    /// the number of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::InvalidMatrix(format!("row {i} has {} entries, expected {m}", r.len())));
        }
        Self::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(DMatrix::zeros(m, m)).expect("zero matrix is valid")
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn is_cooperative(&self) -> bool {
        self.cooperative
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0)
    }

    /// `-A`, used by the time-reversal reduction of terminal problems.
    pub fn negated(&self) -> Self {
        Self::new(-&self.entries).expect("negation keeps entries finite")
    }

    /// Maximum absolute row sum.
    pub fn row_norm(&self) -> f64 {
        self.entries.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }
}

/// Result of [`certify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub cooperative: bool,
    pub irreducible: bool,
    /// Off-diagonal positions `(i, j)` with `a[i][j] > 0`, zero-based.
    pub violations: Vec<(usize, usize)>,
    /// Strongly connected components of the off-diagonal sparsity graph,
    /// each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
}

fn off_diagonal_violations(a: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let m = a.nrows();
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && a[(i, j)] > 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

fn reachable(adj: &dyn Fn(usize, usize) -> bool, m: usize, from: usize) -> Vec<bool> {
    let mut seen = vec![false; m];
    let mut queue = std::collections::VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for (w, visited) in seen.iter_mut().enumerate() {
            if !*visited && adj(u, w) {
                *visited = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Components of the graph with an edge `i → j` whenever `i ≠ j` and
/// `a[i][j] ≠ 0`: node `j` joins the component of `i` iff it is reachable
/// both in the graph and in its transpose.
fn strongly_connected_components(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let m = a.nrows();
    let forward = |i: usize, j: usize| i != j && a[(i, j)] != 0.0;
    let backward = |i: usize, j: usize| i != j && a[(j, i)] != 0.0;
    let mut assigned = vec![false; m];
    let mut components = Vec::new();
    for root in 0..m {
        if assigned[root] {
            continue;
        }
        let fw = reachable(&forward, m, root);
        let bw = reachable(&backward, m, root);
        let comp: Vec<usize> = (0..m).filter(|&k| fw[k] && bw[k]).collect();
        for &k in &comp {
            assigned[k] = true;
        }
        components.push(comp);
    }
    components
}

/// Checks cooperativeness (non-positive off-diagonal entries) and
/// irreducibility (strong connectivity of the off-diagonal sparsity graph).
pub fn certify(a: &CouplingMatrix) -> CertificationReport {
    let violations = off_diagonal_violations(&a.entries);
    let components = strongly_connected_components(&a.entries);
    CertificationReport {
        cooperative: violations.is_empty(),
        irreducible: components.len() == 1,
        violations,
        components,
    }
}

/// `exp(A τ)`.
pub fn matrix_exponential(a: &CouplingMatrix, tau: f64) -> Result<DMatrix<f64>> {
    if !tau.is_finite() {
        return Err(Error::Domain(format!("time {tau} is not finite")));
    }
    expm(&(&a.entries * tau))
}

/// The coefficient families `b(τ) = exp(-Aτ)`, `c(τ) = exp(Aτ)` and
/// `d(s) = exp(A(s - t))` on a horizon `t`.
#[derive(Debug, Clone)]
pub struct Propagator {
    coupling: CouplingMatrix,
    horizon: f64,
    b_horizon: DMatrix<f64>,
}

impl Propagator {
    pub fn new(coupling: &CouplingMatrix, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        let b_horizon = matrix_exponential(coupling, -horizon)?;
        Ok(Self { coupling: coupling.clone(), horizon, b_horizon })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn size(&self) -> usize {
        self.coupling.size()
    }

    /// `b(τ) = exp(-Aτ)`.
    pub fn b(&self, tau: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.coupling, -tau)
    }

    /// `b(t)` at the horizon, cached.
    pub fn b_horizon(&self) -> &DMatrix<f64> {
        &self.b_horizon
    }

    /// `c(τ) = exp(Aτ)`.
    pub fn c(&self, tau: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.coupling, tau)
    }

    /// `d(s) = b(t) c(s)`; `s` is clamped into `[0, t]` after a domain check
    /// with a relative slack of `1e-12`.
    pub fn d(&self, s: f64) -> Result<DMatrix<f64>> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(s >= -slack && s <= self.horizon + slack) {
            return Err(Error::Domain(format!("s = {s} outside [0, {}]", self.horizon)));
        }
        let s = s.clamp(0.0, self.horizon);
        Ok(&self.b_horizon * self.c(s)?)
    }

    /// Largest entry of the central-difference residual
    /// `(b(τ+δ) - b(τ-δ)) / 2δ + A b(τ)` over the samples.
    pub fn derivative_residual(&self, samples: &[f64], step: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &tau in samples {
            let db = (self.b(tau + step)? - self.b(tau - step)?) / (2.0 * step);
            worst = worst.max((db + self.coupling.entries() * self.b(tau)?).amax());
        }
        Ok(worst)
    }

    /// Segment averages `(1/h) ∫ d(s) ds` over a uniform partition of
    /// `[0, t]` into `n` segments. Paired with segment-constant integrands
    /// they reproduce the exact running-cost propagator.
    pub fn segment_weights(&self, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let h = self.horizon / n as f64;
        let avg = exponential_integral(&self.coupling, h)? / h;
        (0..n).map(|k| Ok(self.d(k as f64 * h)? * &avg)).collect()
    }
}

/// `∫_0^τ exp(Aσ) dσ`, read off the exponential of the augmented matrix
/// `[[Aτ, τI], [0, 0]]`.
pub fn exponential_integral(a: &CouplingMatrix, tau: f64) -> Result<DMatrix<f64>> {
    if !tau.is_finite() {
        return Err(Error::Domain(format!("time {tau} is not finite")));
    }
    let m = a.size();
    let mut aug = DMatrix::zeros(2 * m, 2 * m);
    aug.view_mut((0, 0), (m, m)).copy_from(&(&a.entries * tau));
    aug.view_mut((0, m), (m, m)).fill_diagonal(tau);
    Ok(expm(&aug)?.view((0, m), (m, m)).into_owned())
}

/// Builds the propagator for `a` on horizon `t`.
pub fn propagator(a: &CouplingMatrix, t: f64) -> Result<Propagator> {
    Propagator::new(a, t)
}

/// True iff every entry of `exp(-A t)` is strictly positive at every sample.
///
/// Requires a cooperative irreducible matrix and strictly positive samples.
pub fn verify_positivity(a: &CouplingMatrix, samples: &[f64]) -> Result<bool> {
    if !a.is_cooperative() || !a.is_irreducible() {
        return Err(Error::Precondition(format!(
            "positivity needs a cooperative irreducible matrix (cooperative = {}, irreducible = {})",
            a.is_cooperative(),
            a.is_irreducible()
        )));
    }
    let mut all_positive = true;
    for &t in samples {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("positivity is only claimed for t > 0, got {t}")));
        }
        let b = matrix_exponential(a, -t)?;
        all_positive &= b.iter().all(|&x| x > 0.0);
    }
    Ok(all_positive)
}
