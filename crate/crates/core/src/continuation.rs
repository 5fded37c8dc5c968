//! Sweeps in λ, the solvability frontier by bisection and the analytic upper
//! bound `λ₁/K(a)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::sup_norm;
use crate::error::{Error, Result};
use crate::mountain_pass::{second_solution, Case, SecondOptions};
use crate::nonlinearity::{critical_exponent, Domain, ProblemSpec};
use crate::singular_solvers::{first_solution, first_solution_with, Context, SolveReport};

/// A problem with λ left open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFamily {
    pub n: usize,
    pub delta: f64,
    pub a: f64,
    pub domain: Domain,
}

impl SpecFamily {
    pub fn at(&self, lambda: f64) -> Result<ProblemSpec> {
        ProblemSpec::new(self.n, self.delta, self.a, lambda, self.domain)
    }
}

impl From<&ProblemSpec> for SpecFamily {
    fn from(s: &ProblemSpec) -> Self {
        Self {
            n: s.n,
            delta: s.delta,
            a: s.a,
            domain: s.domain,
        }
    }
}

/// Golden-section minimum of a unimodal `g` on `[lo, hi]`.
fn golden_min(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, steps: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..steps {
        if f1 > f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = g(x1);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `K(a) = inf_{t>0} (t^{2*-1} + χ_{t<a} t^{-δ}) / t`.
///
/// Below `a` the quotient `t^{2*-2} + t^{-1-δ}` is convex in `log t`, so a
/// golden section in `log t` finds its minimum; above `a` it is increasing and
/// its infimum is the value at `t = a`.
pub fn k_of_a(n: usize, delta: f64, a: f64) -> f64 {
    let p = critical_exponent(n) - 2.0;
    let lower = |t: f64| t.powf(p) + t.powf(-1.0 - delta);
    // The singular term dominates well below any relevant scale.
    let lo = (a.min(1.0) * 1e-12).ln();
    let (_, inner) = golden_min(|s| lower(s.exp()), lo, a.ln(), 200);
    let at_a_minus = lower(a);
    let upper = a.powf(p);
    inner.min(at_a_minus).min(upper)
}

/// `λ₁/K(a)`: no solution exists for larger λ.
pub fn nonexistence_bound(spec: &ProblemSpec, lambda1: f64) -> f64 {
    lambda1 / k_of_a(spec.n, spec.delta, spec.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaMaxOptions {
    /// Relative width `(hi - lo)/hi` at which bisection stops.
    pub tol: f64,
    /// Lower starting point as a fraction of the analytic bound.
    pub tiny_fraction: f64,
    /// Extra probes between the frontier and the bound, to catch
    /// non-monotone solver behaviour.
    pub verify_points: usize,
}

impl Default for LambdaMaxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            tiny_fraction: 1e-4,
            verify_points: 3,
        }
    }
}

/// One solvability probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub solved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMax {
    pub lo: f64,
    pub hi: f64,
    pub bound: f64,
    pub k_a: f64,
    pub lambda1: f64,
    pub probes: Vec<Probe>,
    /// Non-monotone observations, already folded into the envelope.
    pub anomalies: Vec<String>,
}

fn probe(ctx: &Context, family: &SpecFamily, lambda: f64) -> Result<Probe> {
    let spec = family.at(lambda)?;
    Ok(match first_solution(ctx, &spec) {
        Ok(r) if r.converged => Probe {
            lambda,
            solved: true,
            reason: None,
        },
        Ok(r) => Probe {
            lambda,
            solved: false,
            reason: Some(format!("residual {:.3e} above tolerance", r.residual_inf)),
        },
        Err(e @ (Error::InvalidParameter(_) | Error::Domain(_) | Error::Geometry(_))) => return Err(e),
        Err(e) => Probe {
            lambda,
            solved: false,
            reason: Some(e.to_string()),
        },
    })
}

/// Brackets the numerically observed solvability frontier.
///
/// Starts from `[tiny·bound, bound]` with `bound = λ₁/K(a)` and bisects on the
/// outcome of [`first_solution`]. The returned `hi` never exceeds `bound`.
pub fn estimate_lambda_max(ctx: &Context, family: &SpecFamily, opts: &LambdaMaxOptions) -> Result<LambdaMax> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {} must be positive", opts.tol)));
    }
    if !(opts.tiny_fraction > 0.0 && opts.tiny_fraction < 1.0) {
        return Err(Error::InvalidParameter("tiny_fraction must lie in (0, 1)".into()));
    }
    let lambda1 = ctx.eigen.lambda1;
    let spec0 = family.at(1.0)?;
    let k_a = k_of_a(spec0.n, spec0.delta, spec0.a);
    let bound = lambda1 / k_a;
    let mut probes = Vec::new();
    let mut anomalies = Vec::new();

    let mut lo = opts.tiny_fraction * bound;
    let first = probe(ctx, family, lo)?;
    let lo_ok = first.solved;
    probes.push(first);
    if !lo_ok {
        return Err(Error::NoSolutionEvidence(format!(
            "no solution even at lambda = {lo:e}"
        )));
    }
    let mut hi = bound;
    let top = probe(ctx, family, hi)?;
    if top.solved {
        anomalies.push(format!(
            "solver reports a solution at the analytic bound {hi:e}; frontier capped there"
        ));
        probes.push(top);
        return Ok(LambdaMax {
            lo: hi,
            hi,
            bound,
            k_a,
            lambda1,
            probes,
            anomalies,
        });
    }
    probes.push(top);
    while hi - lo > opts.tol * hi {
        let mid = 0.5 * (lo + hi);
        let p = probe(ctx, family, mid)?;
        if p.solved {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }
    // Probe above the frontier; any success there means the solver is not
    // monotone in λ, and the envelope is widened to the conservative side.
    let extra: Vec<f64> = (1..=opts.verify_points)
        .map(|k| hi + (bound - hi) * k as f64 / (opts.verify_points + 1) as f64)
        .collect();
    for lam in extra {
        let p = probe(ctx, family, lam)?;
        if p.solved {
            anomalies.push(Error::InconsistentBracket { below: hi, above: lam }.to_string());
        }
        probes.push(p);
    }
    // Envelope: `lo` is the largest success below every failure, `hi` the
    // first failure above every success.
    let first_fail = probes.iter().filter(|p| !p.solved).map(|p| p.lambda).fold(f64::INFINITY, f64::min);
    let last_success = probes.iter().filter(|p| p.solved).map(|p| p.lambda).fold(f64::NEG_INFINITY, f64::max);
    let env_lo = probes
        .iter()
        .filter(|p| p.solved && p.lambda < first_fail)
        .map(|p| p.lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    let env_hi = probes
        .iter()
        .filter(|p| !p.solved && p.lambda > last_success)
        .map(|p| p.lambda)
        .fold(bound, f64::min);
    Ok(LambdaMax {
        lo: env_lo,
        hi: env_hi.min(bound),
        bound,
        k_a,
        lambda1,
        probes,
        anomalies,
    })
}

/// Branch label for a table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchCase {
    ZA,
    MP,
    #[serde(rename = "none")]
    None,
}

impl BranchCase {
    pub fn label(&self) -> &'static str {
        match self {
            BranchCase::ZA => "ZA",
            BranchCase::MP => "MP",
            BranchCase::None => "none",
        }
    }
}

/// One row of the branch table. Quantities of missing solutions are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub lambda: f64,
    pub first_found: bool,
    pub second_found: bool,
    pub norm_inf_first: f64,
    /// Sup norm of the composed second solution `u_λ + v_λ`.
    pub norm_inf_second: f64,
    pub energy_first: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    pub case: BranchCase,
    pub residual_first: f64,
    pub residual_second: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BranchPoint {
    fn empty(lambda: f64) -> Self {
        Self {
            lambda,
            first_found: false,
            second_found: false,
            norm_inf_first: f64::NAN,
            norm_inf_second: f64::NAN,
            energy_first: f64::NAN,
            gamma0: None,
            case: BranchCase::None,
            residual_first: f64::NAN,
            residual_second: f64::NAN,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// Run the second-solution pipeline at every point with a first solution.
    pub second: bool,
    pub second_opts: SecondOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            second: true,
            second_opts: SecondOptions::default(),
        }
    }
}

/// Warm start at `lambda` from a solution at `from`, using the pure-singular
/// scaling `u ∝ λ^{1/(1+δ)}`.
pub fn scaled_warm_start(u: &[f64], from: f64, lambda: f64, delta: f64) -> Vec<f64> {
    let f = (lambda / from).powf(1.0 / (1.0 + delta));
    u.iter().map(|x| f * x).collect()
}

fn row(ctx: &Context, family: &SpecFamily, first: Result<SolveReport>, lambda: f64, opts: &SweepOptions) -> BranchPoint {
    let mut p = BranchPoint::empty(lambda);
    let spec = match family.at(lambda) {
        Ok(s) => s,
        Err(e) => {
            p.error = Some(e.to_string());
            return p;
        }
    };
    let first = match first {
        Ok(r) if r.converged => r,
        Ok(r) => {
            p.error = Some(format!("first solution residual {:.3e} above tolerance", r.residual_inf));
            return p;
        }
        Err(e) => {
            p.error = Some(e.to_string());
            return p;
        }
    };
    p.first_found = true;
    p.norm_inf_first = sup_norm(&first.solution.values);
    p.energy_first = first.energy.total;
    p.residual_first = first.residual_inf;
    if !opts.second {
        return p;
    }
    match second_solution(ctx, &spec, &first.solution, &opts.second_opts) {
        Ok(s) => {
            p.second_found = true;
            p.norm_inf_second = sup_norm(&s.composed.values);
            p.gamma0 = s.certificate.gamma0;
            p.case = match s.classification.map(|c| c.case) {
                Some(Case::ZA { .. }) => BranchCase::ZA,
                Some(Case::MP { .. }) => BranchCase::MP,
                None if s.certificate.case == "ZA" => BranchCase::ZA,
                None => BranchCase::MP,
            };
            p.residual_second = s.certificate.residual;
        }
        Err(e) => p.error = Some(format!("second solution: {e}")),
    }
    p
}

/// Branch table over an ascending list of λ.
///
/// Points are solved independently in parallel. A point whose first solve
/// fails is retried, in ascending order, from the nearest lower solved point
/// scaled to its λ. Per-point failures land in the row.
pub fn sweep(ctx: &Context, family: &SpecFamily, lambdas: &[f64], opts: &SweepOptions) -> Result<Vec<BranchPoint>> {
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("lambda list must be strictly ascending".into()));
    }
    for &l in lambdas {
        family.at(l)?;
    }
    let mut firsts: Vec<Result<SolveReport>> = lambdas
        .par_iter()
        .map(|&l| first_solution(ctx, &family.at(l)?))
        .collect();
    for k in 0..lambdas.len() {
        if firsts[k].as_ref().map(|r| r.converged).unwrap_or(false) {
            continue;
        }
        let prev = (0..k).rev().find_map(|j| match &firsts[j] {
            Ok(r) if r.converged => Some((lambdas[j], r.solution.values.clone())),
            _ => None,
        });
        if let Some((from, u)) = prev {
            let warm = scaled_warm_start(&u, from, lambdas[k], family.delta);
            let spec = family.at(lambdas[k])?;
            if let Ok(r) = first_solution_with(ctx, &spec, Some(&warm)) {
                if r.converged {
                    firsts[k] = Ok(r);
                }
            }
        }
    }
    Ok(firsts
        .into_par_iter()
        .zip(lambdas.par_iter())
        .map(|(f, &l)| row(ctx, family, f, l, opts))
        .collect())
}
