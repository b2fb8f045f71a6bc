use serde::{Serialize, Serializer};

use super::{matrix_exponential, CouplingMatrix};
use crate::error::{Error, Result};

/// Horizon on which the weighted Lagrangians stay uniformly coercive and convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    /// The margin never fell below `κ` up to the search cap.
    Unbounded,
}

impl Horizon {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Horizon::Unbounded)
    }

    /// The horizon as a number, `+∞` when unbounded.
    pub fn value(&self) -> f64 {
        match *self {
            Horizon::Finite(t) => t,
            Horizon::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Horizon::Finite(t) => s.serialize_f64(t),
            Horizon::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HorizonOptions {
    /// Uniform τ-samples on `[-T, 0]` per margin evaluation.
    pub samples: usize,
    /// Bisection stops once the bracket is narrower than this.
    pub tolerance: f64,
    /// Doubling stops here and reports [`Horizon::Unbounded`].
    pub cap: f64,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        Self { samples: 1024, tolerance: 1e-6, cap: 1e3 }
    }
}

/// `min_i [g_ii - C Σ_{j≠i} |g_ij|]` for `g = exp(Aτ)`.
fn margin_at(a: &CouplingMatrix, tau: f64, c: f64) -> Result<f64> {
    let g = matrix_exponential(a, tau)?;
    let m = a.size();
    Ok((0..m)
        .map(|i| {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| g[(i, j)].abs()).sum();
            g[(i, i)] - c * off
        })
        .fold(f64::INFINITY, f64::min))
}

/// Largest `t̄` such that for all `τ ∈ [-t̄, 0]` and every row `i` of
/// `g = exp(Aτ)`, `g_ii - C Σ_{j≠i} |g_ij| ≥ κ` holds for both the growth
/// constant and the Hessian constant.
///
/// `τ = s - t` ranges over the weights `d(s)` of a problem on horizon `t`,
/// so any horizon `t ≤ t̄` keeps the weighted Lagrangians Tonelli.
pub fn short_horizon(
    a: &CouplingMatrix,
    growth_constant: f64,
    hessian_constant: f64,
    kappa: f64,
    opts: HorizonOptions,
) -> Result<Horizon> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("κ must lie in (0, 1), got {kappa}")));
    }
    if !(growth_constant >= 1.0) || !(hessian_constant >= 1.0) {
        return Err(Error::Domain(format!(
            "certificate constants must be ≥ 1, got {growth_constant} and {hessian_constant}"
        )));
    }
    if opts.samples < 2 {
        return Err(Error::Domain("need at least two τ-samples".into()));
    }

    // The margin is non-increasing in C, so the binding constraint is the larger one.
    let c = growth_constant.max(hessian_constant);
    let holds = |t: f64| -> Result<bool> {
        let last = (opts.samples - 1) as f64;
        for k in 0..opts.samples {
            let tau = -t * k as f64 / last;
            if margin_at(a, tau, c)? < kappa {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let mut lo = 0.0;
    let mut hi = 1.0 / (1.0 + a.row_norm());
    if holds(hi)? {
        loop {
            lo = hi;
            hi *= 2.0;
            if hi > opts.cap {
                if holds(opts.cap)? {
                    return Ok(Horizon::Unbounded);
                }
                hi = opts.cap;
                break;
            }
            if !holds(hi)? {
                break;
            }
        }
    }
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Horizon::Finite(lo))
}
