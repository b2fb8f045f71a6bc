//! Limited-memory BFGS with Armijo backtracking and an optional
//! preconditioner, plus a block-tridiagonal solver used to build one.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop once `‖∇f‖∞` falls below this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, gradient_tolerance: 1e-8, max_iterations: 500, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
}

impl LbfgsReport {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

/// Minimizes `f` from `x0`; `f` returns the value and the gradient.
///
/// `precond` serves as the initial inverse-Hessian approximation of the
/// two-loop recursion. It is rebuilt at the start, after a failed line search
/// and every `refresh_every()` accepted steps. After two consecutive line
/// search failures the iteration stops and reports non-convergence.
pub fn lbfgs<F, P>(mut f: F, x0: DVector<f64>, mut precond: P, opts: &LbfgsOptions) -> LbfgsReport
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    P: Preconditioner,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut history = vec![fx];
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    precond.refresh(&x);

    let mut iterations = 0;
    let mut fresh_restart = false;
    while iterations < opts.max_iterations {
        if !(g.amax() > opts.gradient_tolerance) {
            break;
        }
        iterations += 1;
        let mut d = -two_loop(&g, &pairs, &precond);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            pairs.clear();
            d = -precond.apply(&g);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = g.dot(&d);
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &d * alpha;
            let (ft, gt) = f(&trial);
            let sufficient = ft <= fx + opts.armijo * alpha * slope;
            // Near the optimum the predicted decrease drowns in rounding; then
            // accept a non-increasing step that still reduces the gradient.
            let noise = 4.0 * f64::EPSILON * fx.abs();
            let rounding = -alpha * slope < 1e3 * noise && ft <= fx + noise && gt.amax() < g.amax();
            if ft.is_finite() && (sufficient || rounding) {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((xn, fn_, gn)) => {
                let s = &xn - &x;
                let y = &gn - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() {
                    let rho = 1.0 / sy;
                    pairs.push_back((s, y, rho));
                    if pairs.len() > opts.memory {
                        pairs.pop_front();
                    }
                } else {
                    // Negative curvature along the step: the stored pairs no
                    // longer describe the local model.
                    pairs.clear();
                }
                x = xn;
                fx = fn_;
                g = gn;
                history.push(fn_);
                fresh_restart = false;
                if iterations % precond.refresh_every().unwrap_or(usize::MAX) == 0 {
                    precond.refresh(&x);
                    pairs.clear();
                }
            }
            None => {
                if fresh_restart {
                    break;
                }
                pairs.clear();
                precond.refresh(&x);
                fresh_restart = true;
            }
        }
    }
    let (value, gradient) = (fx, g);
    let converged = gradient.amax() <= opts.gradient_tolerance;
    LbfgsReport { x, value, gradient, iterations, converged, history }
}

fn two_loop<P: Preconditioner>(
    g: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    precond: &P,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    let mut r = precond.apply(&q);
    if let Some((s, y, _)) = pairs.back() {
        let hy = precond.apply(y);
        let yhy = y.dot(&hy);
        if yhy > 0.0 {
            r *= s.dot(y) / yhy;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&r);
        r += s * (a - b);
    }
    r
}

/// Approximate inverse Hessian for [`lbfgs`].
pub trait Preconditioner {
    fn apply(&self, g: &DVector<f64>) -> DVector<f64>;
    /// Rebuilds the preconditioner at `x`.
    fn refresh(&mut self, _x: &DVector<f64>) {}
    fn refresh_every(&self) -> Option<usize> {
        None
    }
}

/// The identity.
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        g.clone()
    }
}

/// Symmetric block-tridiagonal matrix factored by block Cholesky
/// (block Thomas algorithm).
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    /// Cholesky factors of the Schur complements.
    pivots: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    upper: Vec<DMatrix<f64>>,
    block: usize,
}

impl BlockTridiagonal {
    /// `diag[l]` are the diagonal blocks, `upper[l]` couples block `l` to
    /// `l + 1`. `None` if the matrix is not positive definite.
    pub fn factor(diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Option<Self> {
        let n = diag.len();
        if n == 0 || upper.len() + 1 != n {
            return None;
        }
        let block = diag[0].nrows();
        let mut pivots: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(n);
        for l in 0..n {
            let mut s = diag[l].clone();
            if l > 0 {
                let o = &upper[l - 1];
                s -= o.transpose() * pivots[l - 1].solve(o);
            }
            pivots.push(s.cholesky()?);
        }
        Some(Self { pivots, upper, block })
    }

    /// Solves `M x = r` for a right-hand side stacked block by block.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let (n, b) = (self.pivots.len(), self.block);
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for l in 0..n {
            let mut rl = r.rows(l * b, b).into_owned();
            if l > 0 {
                rl -= self.upper[l - 1].transpose() * self.pivots[l - 1].solve(&y[l - 1]);
            }
            y.push(rl);
        }
        let mut x = vec![DVector::zeros(b); n];
        for l in (0..n).rev() {
            let mut rl = y[l].clone();
            if l + 1 < n {
                rl -= &self.upper[l] * &x[l + 1];
            }
            x[l] = self.pivots[l].solve(&rl);
        }
        let mut out = DVector::zeros(n * b);
        for (l, xl) in x.iter().enumerate() {
            out.rows_mut(l * b, b).copy_from(xl);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (v, g)
        };
        let r = lbfgs(f, DVector::from_vec(vec![-1.2, 1.0]), Identity, &LbfgsOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-7 && (r.x[1] - 1.0).abs() < 1e-7);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn block_thomas_matches_dense() {
        let d = |a: f64| DMatrix::from_row_slice(2, 2, &[a, 0.3, 0.3, a]);
        let o = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.1, -1.0]);
        let bt = BlockTridiagonal::factor(vec![d(4.0), d(5.0), d(4.5)], vec![o.clone(), o.clone()]).unwrap();
        let mut dense = DMatrix::zeros(6, 6);
        for l in 0..3 {
            dense.view_mut((2 * l, 2 * l), (2, 2)).copy_from(&d([4.0, 5.0, 4.5][l]));
        }
        for l in 0..2 {
            dense.view_mut((2 * l, 2 * l + 2), (2, 2)).copy_from(&o);
            dense.view_mut((2 * l + 2, 2 * l), (2, 2)).copy_from(&o.transpose());
        }
        let r = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]);
        let x = bt.solve(&r);
        assert!((&dense * x - r).amax() < 1e-12);
    }

    #[test]
    fn indefinite_block_is_rejected() {
        let d = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(BlockTridiagonal::factor(vec![d], vec![]).is_none());
    }
}
