//! Sobolev constants, the compactness threshold and the energy of scaled
//! Talenti bubbles added to the first solution.
//!
//! Bubble energies are radial integrals evaluated by adaptive quadrature with
//! the first solution interpolated from its grid, so the bubble scale never
//! has to be resolved by the solver grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{unit_sphere_area, Field, GridKind, GAUSS_W, GAUSS_X};
use crate::error::{Error, Result};
use crate::nonlinearity::{
    critical_exponent, cutoff_eta, cutoff_eta_prime, power_increment, talenti_constant,
    talenti_radial, talenti_radial_prime, translated_g_primitive, BubbleSpec, ProblemSpec,
};

fn gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let w = b - a;
    GAUSS_X
        .iter()
        .zip(GAUSS_W)
        .map(|(x, wt)| wt * f(a + x * w))
        .sum::<f64>()
        * w
}

fn adaptive_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (a + b);
    let l = gauss(f, a, m);
    let r = gauss(f, m, b);
    let diff = l + r - whole;
    // The last clause accepts intervals squeezed to round-off around a jump
    // of the integrand, where the error is bounded by the width anyway.
    if diff.abs() <= tol || diff.abs() <= 1e-13 * (l.abs() + r.abs()) || b - a <= 1e-13 * a.abs().max(b.abs()) {
        return Ok(l + r + diff / 1023.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Gauss did not settle on [{a:e}, {b:e}] (difference {diff:e})"
        )));
    }
    Ok(adaptive_rec(f, a, m, l, 0.5 * tol, depth - 1)? + adaptive_rec(f, m, b, r, 0.5 * tol, depth - 1)?)
}

/// Adaptive 5-point Gauss–Legendre on `[a, b]` to absolute tolerance `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    adaptive_rec(f, a, b, gauss(f, a, b), tol, 48)
}

/// Sum of adaptive integrals over consecutive breakpoints.
fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> Result<f64> {
    let per = tol / breaks.len().max(1) as f64;
    let mut s = 0.0;
    for w in breaks.windows(2) {
        s += integrate_adaptive(f, w[0], w[1], per)?;
    }
    Ok(s)
}

/// `A = ∫|V₁|^{2*}`, `B = ∫|∇V₁|²` over the whole space and `S = B/A^{2/2*}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevConstants {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "S")]
    pub s: f64,
}

impl SobolevConstants {
    pub fn from_integrals(n: usize, a: f64, b: f64) -> Self {
        let q = critical_exponent(n);
        Self {
            a,
            b,
            s: b / a.powf(2.0 / q),
        }
    }
}

/// Integrands in `θ` after `r = tan θ`; both are smooth on `[0, π/2]`.
fn sobolev_integrands(n: usize) -> (impl Fn(f64) -> f64, impl Fn(f64) -> f64) {
    let nf = n as f64;
    let c = talenti_constant(n);
    let q = critical_exponent(n);
    let area = unit_sphere_area(n);
    let ka = area * c.powf(q);
    let kb = area * (nf - 2.0).powi(2) * c * c;
    let fa = move |t: f64| ka * (t.sin() * t.cos()).powi(n as i32 - 1);
    let fb = move |t: f64| kb * t.sin().powi(n as i32 + 1) * t.cos().powi(n as i32 - 3);
    (fa, fb)
}

fn check_dimension(n: usize) -> Result<()> {
    if (3..=8).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("N = {n} must lie in 3..=8")))
    }
}

/// Adaptive evaluation to near machine precision.
pub fn sobolev_constants(n: usize) -> Result<SobolevConstants> {
    check_dimension(n)?;
    let (fa, fb) = sobolev_integrands(n);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let a = integrate_adaptive(&fa, 0.0, half_pi, 1e-15)?;
    let b = integrate_adaptive(&fb, 0.0, half_pi, 1e-15)?;
    Ok(SobolevConstants::from_integrals(n, a, b))
}

/// Composite rule with `panels` equal panels; used to check step-halving
/// self-consistency of the quadrature.
pub fn sobolev_constants_composite(n: usize, panels: usize) -> Result<SobolevConstants> {
    check_dimension(n)?;
    if panels == 0 {
        return Err(Error::InvalidParameter("need at least one panel".into()));
    }
    let (fa, fb) = sobolev_integrands(n);
    let h = std::f64::consts::FRAC_PI_2 / panels as f64;
    let sum = |f: &dyn Fn(f64) -> f64| {
        (0..panels)
            .map(|k| gauss(&f, k as f64 * h, (k + 1) as f64 * h))
            .sum::<f64>()
    };
    Ok(SobolevConstants::from_integrals(n, sum(&fa), sum(&fb)))
}

/// Compactness threshold `S^{N/2} / (N λ^{(N-2)/2})`.
pub fn threshold(spec: &ProblemSpec, s: f64) -> f64 {
    let nf = spec.n as f64;
    s.powf(0.5 * nf) / (nf * spec.lambda.powf(0.5 * (nf - 2.0)))
}

/// Breakpoints `ε·2^k` inside `(lo, hi)` so that bubble-scale features are
/// never straddled by a single panel.
fn scale_breaks(eps: f64, lo: f64, hi: f64, out: &mut Vec<f64>) {
    let mut x = eps / 64.0;
    while x < hi {
        if x > lo {
            out.push(x);
        }
        x *= 2.0;
    }
}

fn sorted_breaks(mut b: Vec<f64>) -> Vec<f64> {
    b.sort_by(|x, y| x.total_cmp(y));
    b.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * y.abs().max(1e-300));
    b
}

/// `∫|ηV_ε|^{2*}` and `∫|∇(ηV_ε)|²` over the whole space for the cutoff
/// bubble with plateau radius `cutoff`.
pub fn cutoff_bubble_integrals(n: usize, eps: f64, cutoff: f64) -> Result<(f64, f64)> {
    check_dimension(n)?;
    let c = talenti_constant(n);
    let q = critical_exponent(n);
    let area = unit_sphere_area(n);
    let jac = move |r: f64| area * r.powi(n as i32 - 1);
    let u = move |r: f64| cutoff_eta(r, cutoff) * talenti_radial(r, eps, n, c);
    let du = move |r: f64| {
        cutoff_eta_prime(r, cutoff) * talenti_radial(r, eps, n, c)
            + cutoff_eta(r, cutoff) * talenti_radial_prime(r, eps, n, c)
    };
    let mut b = vec![0.0, cutoff, 2.0 * cutoff];
    scale_breaks(eps, 0.0, 2.0 * cutoff, &mut b);
    let b = sorted_breaks(b);
    let mass = integrate_pieces(&|r| jac(r) * u(r).powf(q), &b, 1e-14)?;
    let dir = integrate_pieces(&|r| jac(r) * du(r).powi(2), &b, 1e-14)?;
    Ok((mass, dir))
}

/// `I_λ(s U_ε)` for a radial first solution and a bubble at the origin.
struct BubbleEnergy<'a> {
    u: &'a [f64],
    h: f64,
    spec: ProblemSpec,
    eps: f64,
    cutoff: f64,
    c_n: f64,
    breaks: Vec<f64>,
    dirichlet: f64,
    area: f64,
}

impl<'a> BubbleEnergy<'a> {
    fn new(u_lambda: &'a Field, spec: &ProblemSpec, eps: f64, cutoff: f64, c_n: f64) -> Result<Self> {
        let grid = &u_lambda.grid;
        let h = grid.h();
        let n = spec.n;
        let area = unit_sphere_area(n);
        let top = 2.0 * cutoff;
        let mut b = vec![0.0, cutoff, top];
        let nodes = (top / h).floor() as usize;
        b.extend((1..=nodes).map(|i| i as f64 * h).filter(|&r| r < top));
        scale_breaks(eps, 0.0, top, &mut b);
        let breaks = sorted_breaks(b);
        let mut me = Self {
            u: &u_lambda.values,
            h,
            spec: *spec,
            eps,
            cutoff,
            c_n,
            breaks,
            dirichlet: 0.0,
            area,
        };
        let d = integrate_pieces(
            &|r| {
                let du = cutoff_eta_prime(r, cutoff) * talenti_radial(r, eps, n, c_n)
                    + cutoff_eta(r, cutoff) * talenti_radial_prime(r, eps, n, c_n);
                area * r.powi(n as i32 - 1) * du * du
            },
            &me.breaks,
            1e-13,
        )?;
        me.dirichlet = d;
        Ok(me)
    }

    fn base(&self, r: f64) -> f64 {
        let x = r / self.h;
        let i = x.floor() as usize;
        let t = x - i as f64;
        let at = |j: usize| self.u.get(j).copied().unwrap_or(0.0);
        (1.0 - t) * at(i) + t * at(i + 1)
    }

    fn bubble(&self, r: f64) -> f64 {
        cutoff_eta(r, self.cutoff) * talenti_radial(r, self.eps, self.spec.n, self.c_n)
    }

    fn critical_mass(&self) -> Result<f64> {
        let q = self.spec.two_star();
        let n = self.spec.n;
        integrate_pieces(
            &|r| self.area * r.powi(n as i32 - 1) * self.bubble(r).powf(q),
            &self.breaks,
            1e-13,
        )
    }

    fn energy(&self, s: f64) -> Result<f64> {
        let spec = &self.spec;
        let q = spec.two_star();
        let n = spec.n;
        let scale = (1.0 + s * s * self.dirichlet) * 1e-13;
        let nonlinear = integrate_pieces(
            &|r| {
                let t = s * self.bubble(r);
                if !(t > 0.0) {
                    return 0.0;
                }
                let u = self.base(r);
                let w = if u < spec.a { 1.0 } else { 0.0 };
                let g = translated_g_primitive(u, t, w, spec);
                let f = power_increment(u, t, q);
                self.area * r.powi(n as i32 - 1) * (g + f)
            },
            &self.breaks,
            scale,
        )?;
        Ok(0.5 * s * s * self.dirichlet - spec.lambda * nonlinear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BubbleOptions {
    /// Samples in each of the `R` and `t` scans.
    pub samples: usize,
    /// Golden-section steps refining the largest `t` sample.
    pub refine_steps: usize,
}

impl Default for BubbleOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            refine_steps: 40,
        }
    }
}

/// Outcome of [`bubble_path_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleReport {
    pub eps: f64,
    pub r0: f64,
    pub cutoff_radius: f64,
    pub threshold: f64,
    /// `∫|∇U_ε|²` and `∫U_ε^{2*}` of the cutoff bubble.
    pub dirichlet: f64,
    pub critical_mass: f64,
    /// `(R, I_λ(R U_ε))` for `R ∈ [R₀, 4R₀]`.
    pub large_r: Vec<(f64, f64)>,
    /// `(t, I_λ(t R₀ U_ε))` for `t ∈ (0, 1]`.
    pub path: Vec<(f64, f64)>,
    pub peak_t: f64,
    pub peak_energy: f64,
    /// `threshold - max_t I_λ(t R₀ U_ε)`.
    pub margin: f64,
}

fn radial_profile(u_lambda: &Field) -> Result<()> {
    match u_lambda.grid.kind() {
        GridKind::Radial { .. } => Ok(()),
        GridKind::Box3D { .. } => Err(Error::InvalidParameter(
            "the bubble energy scan needs a radial first solution".into(),
        )),
    }
}

/// Radius of the largest ball about the origin on which `u_λ < a`
/// (the grid radius just before the first node with `u_λ ≥ a`).
pub fn sublevel_radius(u_lambda: &Field, a: f64) -> f64 {
    let h = u_lambda.grid.h();
    match u_lambda.values.iter().position(|&x| x >= a) {
        Some(0) => 0.0,
        Some(i) => (i - 1) as f64 * h,
        None => 1.0,
    }
}

fn golden_max<F: Fn(f64) -> Result<f64>>(f: &F, mut lo: f64, mut hi: f64, steps: usize) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..steps {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 > f2 { (x1, f1) } else { (x2, f2) })
}

/// Scans `I_λ(R U_ε) < 0` over `R ∈ [R₀, 4R₀]` and `I_λ(t R₀ U_ε)` below the
/// threshold over `t ∈ (0, 1]`, for a bubble centred at the origin.
pub fn bubble_path_check(
    u_lambda: &Field,
    spec: &ProblemSpec,
    bubble: &BubbleSpec,
    r0: f64,
    s_const: f64,
    opts: &BubbleOptions,
) -> Result<BubbleReport> {
    radial_profile(u_lambda)?;
    if bubble.center.iter().any(|&c| c != 0.0) {
        return Err(Error::Geometry(
            "a radial first solution admits only a bubble centred at the origin".into(),
        ));
    }
    if bubble.center.len() != spec.n {
        return Err(Error::InvalidParameter(format!(
            "bubble centre has {} coordinates, N = {}",
            bubble.center.len(),
            spec.n
        )));
    }
    if !(r0 > 0.0) || opts.samples < 2 {
        return Err(Error::InvalidParameter("R0 and the sample count must be positive".into()));
    }
    crate::nonlinearity::check_bubble_support(bubble, spec.domain)?;
    let ra = sublevel_radius(u_lambda, spec.a);
    if bubble.cutoff_radius > ra {
        return Err(Error::Geometry(format!(
            "plateau radius {} exceeds the radius {ra} of the ball where u < a",
            bubble.cutoff_radius
        )));
    }
    let be = BubbleEnergy::new(u_lambda, spec, bubble.eps, bubble.cutoff_radius, bubble.c_n)?;
    let thr = threshold(spec, s_const);
    let k = opts.samples;
    let large_r: Vec<(f64, f64)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let r = r0 * (1.0 + 3.0 * j as f64 / (k - 1) as f64);
            be.energy(r).map(|e| (r, e))
        })
        .collect::<Result<_>>()?;
    if let Some(&(r, e)) = large_r.iter().find(|(_, e)| !(*e < 0.0)) {
        return Err(Error::MarginViolation {
            t: r / r0,
            eps: bubble.eps,
            margin: -e,
        });
    }
    let path: Vec<(f64, f64)> = (1..=k)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 / k as f64;
            be.energy(t * r0).map(|e| (t, e))
        })
        .collect::<Result<_>>()?;
    let (jmax, &(tmax, emax)) = path
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("nonempty scan");
    let lo = if jmax == 0 { 0.0 } else { path[jmax - 1].0 };
    let hi = path.get(jmax + 1).map_or(1.0, |p| p.0);
    let (peak_t, peak_energy) = if opts.refine_steps > 0 {
        let (t, e) = golden_max(&|t| be.energy(t * r0), lo, hi, opts.refine_steps)?;
        if e > emax {
            (t, e)
        } else {
            (tmax, emax)
        }
    } else {
        (tmax, emax)
    };
    let margin = thr - peak_energy;
    let report = BubbleReport {
        eps: bubble.eps,
        r0,
        cutoff_radius: bubble.cutoff_radius,
        threshold: thr,
        dirichlet: be.dirichlet,
        critical_mass: be.critical_mass()?,
        large_r,
        path,
        peak_t,
        peak_energy,
        margin,
    };
    if !(margin > 0.0) {
        return Err(Error::MarginViolation {
            t: peak_t,
            eps: bubble.eps,
            margin,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BubbleSearchOptions {
    /// Plateau radius; by default the smaller of 1/4 and half the radius of
    /// the ball where `u_λ < a`.
    pub cutoff_radius: Option<f64>,
    pub max_halvings: usize,
    pub max_doublings: usize,
    pub scan: BubbleOptions,
}

impl Default for BubbleSearchOptions {
    fn default() -> Self {
        Self {
            cutoff_radius: None,
            max_halvings: 30,
            max_doublings: 30,
            scan: BubbleOptions::default(),
        }
    }
}

/// Result of [`bubble_search`]: the accepted `(ε₀, R₀)`, its report and the
/// report at `ε₀/2` with the same `R₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSearch {
    pub eps0: f64,
    pub r0: f64,
    pub report: BubbleReport,
    pub halved: Option<BubbleReport>,
    /// `(ε, margin)` for every scale tried, with `None` when (i) or (ii) failed.
    pub tried: Vec<(f64, Option<f64>)>,
}

/// Smallest power of two `R₀ ≥ 1` with `I_λ(R U_ε) < 0` on `[R₀, 4R₀]`.
fn find_r0(be: &BubbleEnergy, samples: usize, max_doublings: usize) -> Result<Option<f64>> {
    let mut r0 = 1.0;
    for _ in 0..=max_doublings {
        let ok = (0..samples)
            .into_par_iter()
            .map(|j| be.energy(r0 * (1.0 + 3.0 * j as f64 / (samples - 1) as f64)))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .all(|e| *e < 0.0);
        if ok {
            return Ok(Some(r0));
        }
        r0 *= 2.0;
    }
    Ok(None)
}

/// Halves `ε` from `a/4` and doubles `R₀` from 1 until both scans pass.
pub fn bubble_search(
    u_lambda: &Field,
    spec: &ProblemSpec,
    s_const: f64,
    opts: &BubbleSearchOptions,
) -> Result<BubbleSearch> {
    radial_profile(u_lambda)?;
    let ra = sublevel_radius(u_lambda, spec.a);
    if !(ra > 0.0) {
        return Err(Error::Geometry(
            "the origin is not in the region where u < a".into(),
        ));
    }
    let cutoff = opts.cutoff_radius.unwrap_or_else(|| 0.25f64.min(0.5 * ra));
    let center = vec![0.0; spec.n];
    let mut eps = 0.25 * spec.a;
    let mut tried = Vec::new();
    for _ in 0..=opts.max_halvings {
        let bubble = BubbleSpec::new(eps, center.clone(), cutoff)?;
        let be = BubbleEnergy::new(u_lambda, spec, eps, cutoff, bubble.c_n)?;
        if let Some(r0) = find_r0(&be, opts.scan.samples, opts.max_doublings)? {
            match bubble_path_check(u_lambda, spec, &bubble, r0, s_const, &opts.scan) {
                Ok(report) => {
                    tried.push((eps, Some(report.margin)));
                    let half = BubbleSpec::new(0.5 * eps, center.clone(), cutoff)?;
                    let halved = match bubble_path_check(u_lambda, spec, &half, r0, s_const, &opts.scan) {
                        Ok(r) => Some(r),
                        Err(Error::MarginViolation { .. }) => None,
                        Err(e) => return Err(e),
                    };
                    return Ok(BubbleSearch {
                        eps0: eps,
                        r0,
                        report,
                        halved,
                        tried,
                    });
                }
                Err(Error::MarginViolation { .. }) => tried.push((eps, None)),
                Err(e) => return Err(e),
            }
        } else {
            tried.push((eps, None));
        }
        eps *= 0.5;
    }
    Err(Error::MarginViolation {
        t: f64::NAN,
        eps,
        margin: f64::NAN,
    })
}
