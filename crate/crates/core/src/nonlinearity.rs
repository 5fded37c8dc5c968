//! Pointwise nonlinear ingredients: the jump term and its smoothing,
//! primitives, translated terms, the 1-D singular profile and Talenti bubbles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular evaluations below this value are refused rather than flushed.
pub const U_FLOOR: f64 = 1e-14;

/// Computational domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// Unit ball, solved through the radial reduction.
    RadialBall,
    /// Unit cube `[0,1]^3`.
    Box3D,
}

/// Physical parameters of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub delta: f64,
    pub a: f64,
    pub lambda: f64,
    pub domain: Domain,
}

impl ProblemSpec {
    pub fn new(n: usize, delta: f64, a: f64, lambda: f64, domain: Domain) -> Result<Self> {
        let spec = Self {
            n,
            delta,
            a,
            lambda,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParameter(format!("N = {} must be >= 3", self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 3.0) {
            return Err(Error::InvalidParameter(format!(
                "delta = {} must lie in (0, 3)",
                self.delta
            )));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!("a = {} must be > 0", self.a)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {} must be > 0",
                self.lambda
            )));
        }
        if self.domain == Domain::Box3D && self.n != 3 {
            return Err(Error::InvalidParameter(
                "the box domain is three-dimensional".into(),
            ));
        }
        Ok(())
    }

    /// Critical Sobolev exponent `2N/(N-2)`.
    pub fn two_star(&self) -> f64 {
        critical_exponent(self.n)
    }

    /// Exponent of the power term, `2* - 1`.
    pub fn power(&self) -> f64 {
        self.two_star() - 1.0
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }
}

pub fn critical_exponent(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

/// Width of the linear ramp replacing the jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRegularization {
    pub eps: f64,
}

impl JumpRegularization {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps = {eps} must be > 0")));
        }
        Ok(Self { eps })
    }

    /// Like [`JumpRegularization::new`], additionally requiring `eps < a/2`.
    pub fn for_spec(eps: f64, spec: &ProblemSpec) -> Result<Self> {
        let reg = Self::new(eps)?;
        if eps >= 0.5 * spec.a {
            return Err(Error::InvalidParameter(format!(
                "eps = {eps} must be below a/2 = {}",
                0.5 * spec.a
            )));
        }
        Ok(reg)
    }
}

/// Talenti bubble with a compactly supported cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub eps: f64,
    pub center: Vec<f64>,
    pub cutoff_radius: f64,
    pub c_n: f64,
}

impl BubbleSpec {
    /// Bubble with the normalization making `V_ε` an exact solution of the
    /// critical equation on the whole space.
    pub fn new(eps: f64, center: Vec<f64>, cutoff_radius: f64) -> Result<Self> {
        if !(eps > 0.0) || !(cutoff_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "bubble scale and cutoff radius must be positive".into(),
            ));
        }
        let n = center.len();
        if n < 3 {
            return Err(Error::InvalidParameter("bubble center needs N >= 3 coordinates".into()));
        }
        Ok(Self {
            eps,
            center,
            cutoff_radius,
            c_n: talenti_constant(n),
        })
    }
}

/// `(N(N-2))^{(N-2)/4}`.
pub fn talenti_constant(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

/// Smoothed indicator of `t < 0`.
pub fn chi_eps(t: f64, reg: JumpRegularization) -> f64 {
    if t <= -reg.eps {
        1.0
    } else if t < 0.0 {
        -t / reg.eps
    } else {
        0.0
    }
}

/// Derivative of [`chi_eps`], defined as zero at the two kinks.
pub fn chi_eps_prime(t: f64, reg: JumpRegularization) -> f64 {
    if t > -reg.eps && t < 0.0 {
        -1.0 / reg.eps
    } else {
        0.0
    }
}

fn check_floor(u: f64) -> Result<()> {
    if u.is_nan() || u < U_FLOOR {
        return Err(Error::Domain(format!(
            "singular term evaluated at u = {u:e} below the floor {U_FLOOR:e}"
        )));
    }
    Ok(())
}

/// Right-hand side `λ(u^{2*-1} + [u<a] u^{-δ})` for `u > 0`.
pub fn rhs_full(u: f64, spec: &ProblemSpec) -> Result<f64> {
    check_floor(u)?;
    let jump = if u < spec.a { u.powf(-spec.delta) } else { 0.0 };
    Ok(spec.lambda * (u.powf(spec.power()) + jump))
}

/// `(x^e - y^e)/e` for positive `x, y`, with the `e = 0` limit `ln(x/y)`.
/// Evaluated through `expm1`/`ln_1p` so that nearby arguments do not cancel.
pub fn pow_diff(x: f64, y: f64, e: f64) -> f64 {
    let l = ((x - y) / y).ln_1p();
    if e == 0.0 {
        l
    } else {
        y.powf(e) * (e * l).exp_m1() / e
    }
}

/// Antiderivative of `t^{-δ}` used on the singular branch.
pub(crate) fn h_sing(u: f64, delta: f64) -> f64 {
    if delta == 1.0 {
        u.ln()
    } else {
        u.powf(1.0 - delta) / (1.0 - delta)
    }
}

/// Primitive of `χ{t<a} t^{-δ}`.
#[allow(non_snake_case)]
pub fn primitive_G(u: f64, spec: &ProblemSpec) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    h_sing(u.min(spec.a), spec.delta)
}

/// Primitive of `χ_ε(t-a) t^{-δ}`, normalized like [`primitive_G`] below `a/2`.
#[allow(non_snake_case)]
pub fn primitive_G_eps(u: f64, spec: &ProblemSpec, reg: JumpRegularization) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let a = spec.a;
    let d = spec.delta;
    let lo = a - reg.eps;
    if u <= lo {
        return h_sing(u, d);
    }
    let top = u.min(a);
    // (1/ε) ∫_{lo}^{top} (a - t) t^{-δ} dt
    let ramp = (a * pow_diff(top, lo, 1.0 - d) - pow_diff(top, lo, 2.0 - d)) / reg.eps;
    h_sing(lo, d) + ramp
}

/// Translated source terms `(g̃, f̃)` at a node where the base solution is `u`.
pub fn translated_terms(s: f64, u: f64, spec: &ProblemSpec) -> Result<(f64, f64)> {
    check_floor(u)?;
    if s <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let w = u + s;
    let d = spec.delta;
    let p = spec.power();
    let top = if w < spec.a { w.powf(-d) } else { 0.0 };
    let base = if u < spec.a { u.powf(-d) } else { 0.0 };
    Ok((top - base, w.powf(p) - u.powf(p)))
}

/// `∫_u^{u+t} (s^{-δ} - u^{-δ}) ds` for `t ≥ 0`, accurate for small `t/u`.
pub fn singular_increment(u: f64, t: f64, delta: f64) -> f64 {
    let x = t / u;
    let scale = u.powf(1.0 - delta);
    if x < 1e-3 {
        // Taylor series of ((1+x)^{1-δ}-1)/(1-δ) - x
        let mut coef = 1.0;
        let mut sum = 0.0;
        let mut xn = x;
        for k in 1..8 {
            coef *= -(delta + (k as f64) - 1.0) / (k as f64 + 1.0);
            xn *= x;
            sum += coef * xn;
        }
        scale * sum
    } else {
        scale * (pow_diff(1.0 + x, 1.0, 1.0 - delta) - x)
    }
}

/// `((u+t)^q - u^q)/q - u^{q-1} t` for `t ≥ 0`, `u ≥ 0`.
pub fn power_increment(u: f64, t: f64, q: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if u <= 0.0 {
        return t.powf(q) / q;
    }
    let x = t / u;
    let scale = u.powf(q);
    if x < 1e-3 {
        let mut coef = 1.0;
        let mut sum = 0.0;
        let mut xn = x;
        for k in 1..8 {
            coef *= (q - k as f64) / (k as f64 + 1.0);
            xn *= x;
            sum += coef * xn;
        }
        scale * sum
    } else {
        scale * (pow_diff(1.0 + x, 1.0, q) - x)
    }
}

/// Translated singular primitive `G(u+t) - G(u) - w u^{-δ} t` for `t > 0`,
/// where `w` is the jump weight carried by the base solution at this node
/// (the strict indicator `[u<a]` away from the level set).
pub fn translated_g_primitive(u: f64, t: f64, w: f64, spec: &ProblemSpec) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a = spec.a;
    let d = spec.delta;
    let lin = u.powf(-d) * t;
    if u >= a {
        return -w * lin;
    }
    if u + t <= a {
        // G(u+t) - G(u) - u^{-δ} t lives entirely on the singular branch
        singular_increment(u, t, d) + (1.0 - w) * lin
    } else {
        pow_diff(a, u, 1.0 - d) - w * lin
    }
}

/// Closed-form solution of `-p'' = p^{-δ}`, `p(0) = 0`, valid for `δ > 1`.
pub fn hark_profile(t: f64, delta: f64) -> Result<f64> {
    if !(delta > 1.0) {
        return Err(Error::Domain(format!(
            "closed-form profile needs delta > 1, got {delta}"
        )));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("profile argument t = {t} is negative")));
    }
    let c = ((1.0 + delta).powi(2) / (2.0 * (delta - 1.0))).powf(1.0 / (1.0 + delta));
    Ok(c * t.powf(2.0 / (delta + 1.0)))
}

/// Boundary-behaviour profile built from the principal eigenfunction value.
pub fn phi_delta(e1_value: f64, delta: f64) -> Result<f64> {
    if !(e1_value > 0.0 && e1_value < 1.0) {
        return Err(Error::Domain(format!(
            "eigenfunction value {e1_value} must lie in (0, 1)"
        )));
    }
    Ok(if delta < 1.0 {
        e1_value
    } else if delta == 1.0 {
        e1_value * (-e1_value.ln()).sqrt()
    } else {
        e1_value.powf(2.0 / (delta + 1.0))
    })
}

/// Talenti function at distance `r` from its center.
pub fn talenti_radial(r: f64, eps: f64, n: usize, c_n: f64) -> f64 {
    let k = (n as f64 - 2.0) / 2.0;
    c_n * eps.powf(k) / (eps * eps + r * r).powf(k)
}

/// Radial derivative of [`talenti_radial`].
pub fn talenti_radial_prime(r: f64, eps: f64, n: usize, c_n: f64) -> f64 {
    let k = (n as f64 - 2.0) / 2.0;
    -2.0 * k * r * c_n * eps.powf(k) / (eps * eps + r * r).powf(k + 1.0)
}

/// `V_ε(x)` for the uncentered formula.
pub fn talenti(x: &[f64], bubble: &BubbleSpec, n: usize) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    talenti_radial(r, bubble.eps, n, bubble.c_n)
}

/// C² cutoff: 1 on `[0, r]`, 0 beyond `2r`, quintic smoothstep in between.
pub fn cutoff_eta(rho: f64, r: f64) -> f64 {
    if rho <= r {
        1.0
    } else if rho >= 2.0 * r {
        0.0
    } else {
        let s = (rho - r) / r;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Derivative of [`cutoff_eta`] in `rho`.
pub fn cutoff_eta_prime(rho: f64, r: f64) -> f64 {
    if rho <= r || rho >= 2.0 * r {
        0.0
    } else {
        let s = (rho - r) / r;
        -30.0 * s * s * (1.0 - s) * (1.0 - s) / r
    }
}

/// Checks that the support `B_{2r}(center)` stays inside the closed domain.
pub fn check_bubble_support(bubble: &BubbleSpec, domain: Domain) -> Result<()> {
    let r2 = 2.0 * bubble.cutoff_radius;
    let ok = match domain {
        Domain::RadialBall => {
            let c = bubble.center.iter().map(|v| v * v).sum::<f64>().sqrt();
            c + r2 <= 1.0 + 1e-15
        }
        Domain::Box3D => bubble
            .center
            .iter()
            .all(|&c| c - r2 >= -1e-15 && c + r2 <= 1.0 + 1e-15),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Geometry(format!(
            "cutoff ball of radius {r2} about {:?} leaves the domain",
            bubble.center
        )))
    }
}

/// `η(x) V_ε(x - y)`.
pub fn cutoff_bubble(x: &[f64], bubble: &BubbleSpec, domain: Domain) -> Result<f64> {
    check_bubble_support(bubble, domain)?;
    let n = bubble.center.len();
    let rho = x
        .iter()
        .zip(&bubble.center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let eta = cutoff_eta(rho, bubble.cutoff_radius);
    if eta == 0.0 {
        return Ok(0.0);
    }
    Ok(eta * talenti_radial(rho, bubble.eps, n, bubble.c_n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pow_diff_limits() {
        assert!((pow_diff(2.0, 1.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((pow_diff(4.0, 1.0, 0.5) - 2.0).abs() < 1e-14);
        // x - 1 is exact here; (1+e)^(1/2) - 1 over 1/2 is e - e²/4 + ...
        let x = 1.0 + 1e-12;
        let e = x - 1.0;
        let tiny = pow_diff(x, 1.0, 0.5);
        assert!((tiny - (e - 0.25 * e * e)).abs() < 1e-27);
    }

    #[test]
    fn increments_match_direct_formulas() {
        let (q, d) = (6.0f64, 0.5f64);
        for &(u, t) in &[(0.3f64, 0.2f64), (2.0, 3.0)] {
            let direct = ((u + t).powf(q) - u.powf(q)) / q - u.powf(q - 1.0) * t;
            let got = power_increment(u, t, q);
            assert!((got - direct).abs() <= 1e-12 * direct.abs());
            let direct = ((u + t).powf(1.0 - d) - u.powf(1.0 - d)) / (1.0 - d) - u.powf(-d) * t;
            let got = singular_increment(u, t, d);
            assert!((got - direct).abs() <= 1e-12 * direct.abs());
        }
    }

    #[test]
    fn increments_match_taylor_for_small_steps() {
        let (q, d) = (6.0f64, 0.5f64);
        let (u, t) = (0.5f64, 1e-5f64);
        let taylor = 0.5 * (q - 1.0) * u.powf(q - 2.0) * t * t
            + (q - 1.0) * (q - 2.0) / 6.0 * u.powf(q - 3.0) * t.powi(3);
        assert!((power_increment(u, t, q) - taylor).abs() <= 1e-9 * taylor);
        let taylor = -0.5 * d * u.powf(-d - 1.0) * t * t + d * (d + 1.0) / 6.0 * u.powf(-d - 2.0) * t.powi(3);
        assert!((singular_increment(u, t, d) - taylor).abs() <= 1e-9 * taylor.abs());
    }
}
