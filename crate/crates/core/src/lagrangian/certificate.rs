use serde::Serialize;

/// Superlinear bound `θ(ν) = c + a ν² + b ν⁴` on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub constant: f64,
    pub quadratic: f64,
    pub quartic: f64,
}

impl Growth {
    pub fn eval(&self, nu: f64) -> f64 {
        let n2 = nu * nu;
        self.constant + n2 * (self.quadratic + n2 * self.quartic)
    }
}

/// Eigenvalue bound `λ(r) = c + a r²` for the velocity Hessian at speed `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianBound {
    pub constant: f64,
    pub quadratic: f64,
}

impl HessianBound {
    pub fn eval(&self, r: f64) -> f64 {
        self.constant + self.quadratic * r * r
    }
}

/// Analytic growth and convexity bounds of one Lagrangian on a state ball:
/// `θ1(|v|) ≥ L(x, v) ≥ θ0(|v|) - c0` and
/// `hess_lower(|v|) ≤ eig(L_vv(x, v)) ≤ hess_upper(|v|)` for `|x| ≤ state_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TonelliCertificate {
    pub theta0: Growth,
    pub theta1: Growth,
    pub c0: f64,
    pub hess_lower: HessianBound,
    pub hess_upper: HessianBound,
    pub state_radius: f64,
}

/// The two constants a short horizon needs from a whole Lagrangian set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetConstants {
    /// `C1` with `θ1(ν) ≤ C1 (1 + θ0(ν))`, where `θ0`, `θ1` are common to the set.
    pub growth: f64,
    /// `C2` with `Σ_j L^j_vv ≤ C2 L^i_vv` in the sense of the eigenvalue bounds.
    pub hessian: f64,
}

/// Ratio bound for `(c + a ν² + b ν⁴) / (1 + a0 ν² + b0 ν⁴)`: the maximum of the
/// coefficient ratios, `None` when a positive numerator coefficient faces a
/// vanishing denominator one.
fn ratio_bound(pairs: &[(f64, f64)]) -> Option<f64> {
    let mut best: f64 = 0.0;
    for &(num, den) in pairs {
        if num <= 0.0 {
            continue;
        }
        if den <= 0.0 {
            return None;
        }
        best = best.max(num / den);
    }
    Some(best)
}

/// Combines per-component certificates into the set-level constants
/// `C1_growth` and `C2_hess`, both at least 1. `None` if a component has no
/// certificate or the bounds do not close.
pub fn set_constants(certs: &[Option<TonelliCertificate>]) -> Option<SetConstants> {
    let certs: Vec<TonelliCertificate> = certs.iter().copied().collect::<Option<_>>()?;
    if certs.is_empty() {
        return None;
    }
    let min_by = |f: fn(&TonelliCertificate) -> f64| certs.iter().map(f).fold(f64::INFINITY, f64::min);
    let max_by = |f: fn(&TonelliCertificate) -> f64| certs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);

    let a0 = min_by(|c| c.theta0.quadratic);
    let b0 = min_by(|c| c.theta0.quartic);
    let c1 = max_by(|c| c.theta1.constant);
    let a1 = max_by(|c| c.theta1.quadratic);
    let b1 = max_by(|c| c.theta1.quartic);
    let growth = ratio_bound(&[(c1, 1.0), (a1, a0), (b1, b0)])?.max(1.0);

    let sum_c: f64 = certs.iter().map(|c| c.hess_upper.constant).sum();
    let sum_a: f64 = certs.iter().map(|c| c.hess_upper.quadratic).sum();
    let mut hessian: f64 = 1.0;
    for c in &certs {
        hessian = hessian.max(ratio_bound(&[(sum_c, c.hess_lower.constant), (sum_a, c.hess_lower.quadratic)])?);
    }
    Some(SetConstants { growth, hessian })
}
