//! Second solution `u_λ + v_λ`: the zero-altitude / mountain-pass dichotomy
//! for the translated functional, Talenti-seeded paths, string descent to the
//! critical level and its certificate against the compactness threshold.

mod bubble;
mod dichotomy;
mod functional;
mod path;

use serde::{Deserialize, Serialize};

pub use bubble::{
    bubble_path_check, bubble_search, cutoff_bubble_integrals, integrate_adaptive, sobolev_constants,
    sobolev_constants_composite, sublevel_radius, threshold, BubbleOptions, BubbleReport, BubbleSearch,
    BubbleSearchOptions, SobolevConstants,
};
pub use dichotomy::{
    classify_case, default_rho_grid, sphere_descent, sphere_infimum, za_solve, Case, Classification,
    ClassifyOptions, DescentOptions, SphereScan, ZaOutcome,
};
pub use functional::{
    CriticalHarness, CubicHarness, Functional, QuadraticHarness, RingHarness, TranslatedFunctional,
};
pub use path::{mp_solve, MpOptions, MpOutcome, PathState, TraceRow};

use crate::discretization::{sup_norm, Field, Grid, GridKind};
use crate::energy::Translation;
use crate::error::{Error, Result};
use crate::nonlinearity::{cutoff_bubble, cutoff_eta, talenti_radial, BubbleSpec, ProblemSpec};
use crate::singular_solvers::{polish_critical, strict_residual, weak_residual_random, Context, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondOptions {
    pub classify: ClassifyOptions,
    pub mp: MpOptions,
    pub za_descent: DescentOptions,
    /// Scale and plateau radius of the bubble seeding the initial path.
    pub path_eps: f64,
    pub path_cutoff: f64,
    /// Residual the composed solution must reach.
    pub residual_tol: f64,
    /// Test fields used for the weak-form residual audit.
    pub weak_tests: usize,
    pub seed: u64,
}

impl Default for SecondOptions {
    fn default() -> Self {
        Self {
            classify: ClassifyOptions::default(),
            mp: MpOptions::default(),
            za_descent: DescentOptions::default(),
            path_eps: 0.05,
            path_cutoff: 0.25,
            residual_tol: 1e-6,
            weak_tests: 20,
            seed: 0,
        }
    }
}

/// Summary written next to a second solution. Keys serialize in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub case: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Strong-form relative residual of `u_λ + v_λ`.
    pub residual: f64,
    pub weak_residual: f64,
    pub lambda: f64,
    #[serde(rename = "S")]
    pub sobolev_s: f64,
    /// `ρ₁` for the mountain pass, the annulus radius for zero altitude.
    pub rho: f64,
    pub v_sup_norm: f64,
    pub v_h10_norm: f64,
    pub sweeps: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SecondOutcome {
    pub classification: Option<Classification>,
    pub certificate: Certificate,
    pub v: Field,
    pub composed: Field,
    pub report: SolveReport,
    pub trace: Vec<TraceRow>,
}

/// Where to put the seeding bubble: the origin on radial grids, otherwise the
/// node maximizing `a - u_λ` among those whose cutoff ball fits in the domain.
fn seed_center(u_lambda: &Field, a: f64, cutoff: f64) -> Result<Vec<f64>> {
    let grid = &u_lambda.grid;
    match grid.kind() {
        GridKind::Radial { n, .. } => Ok(vec![0.0; n]),
        GridKind::Box3D { .. } => {
            let best = (0..grid.dim())
                .filter(|&i| grid.boundary_distance(i) >= 2.0 * cutoff)
                .max_by(|&i, &j| (a - u_lambda.values[i]).total_cmp(&(a - u_lambda.values[j])));
            match best {
                Some(i) if u_lambda.values[i] < a => Ok(grid.coords(i)),
                _ => Err(Error::Geometry(format!(
                    "no node with u < a admits a cutoff ball of radius {}",
                    2.0 * cutoff
                ))),
            }
        }
    }
}

/// The cutoff bubble sampled at the grid nodes.
pub fn bubble_field(grid: &std::sync::Arc<Grid>, bubble: &BubbleSpec) -> Result<Field> {
    match grid.kind() {
        GridKind::Radial { n, .. } => {
            crate::nonlinearity::check_bubble_support(bubble, crate::nonlinearity::Domain::RadialBall)?;
            let r = bubble.cutoff_radius;
            Field::new(
                grid.clone(),
                (0..grid.dim())
                    .map(|i| {
                        let rho = grid.radius(i);
                        cutoff_eta(rho, r) * talenti_radial(rho, bubble.eps, n, bubble.c_n)
                    })
                    .collect(),
            )
        }
        GridKind::Box3D { .. } => {
            let dom = crate::nonlinearity::Domain::Box3D;
            crate::nonlinearity::check_bubble_support(bubble, dom)?;
            let vals = (0..grid.dim())
                .map(|i| cutoff_bubble(&grid.coords(i), bubble, dom))
                .collect::<Result<Vec<f64>>>()?;
            Field::new(grid.clone(), vals)
        }
    }
}

/// Scales `u` up by doubling until its energy is negative and its norm exceeds `rho1`.
fn negative_endpoint<F: Functional>(f: &F, u: &[f64], rho1: f64) -> Result<Vec<f64>> {
    let mut r = 1.0;
    for _ in 0..60 {
        let v: Vec<f64> = u.iter().map(|x| r * x).collect();
        if f.value(&v) < 0.0 && f.norm(&v) > rho1 {
            return Ok(v);
        }
        r *= 2.0;
    }
    Err(Error::Convergence {
        what: "search for a negative-energy path endpoint".into(),
        iterations: 60,
        residual: f64::NAN,
    })
}

struct Polished {
    v: Vec<f64>,
    w: Vec<f64>,
    residual: f64,
    weak: f64,
}

/// Newton on the full problem from `u_λ + v`, returning the translated part.
fn polish(ctx: &Context, spec: &ProblemSpec, u_lambda: &Field, v: &[f64], opts: &SecondOptions) -> Result<Polished> {
    let w0: Vec<f64> = u_lambda.values.iter().zip(v).map(|(a, b)| a + b.max(0.0)).collect();
    let w = polish_critical(ctx, spec, &w0)?;
    let residual = strict_residual(ctx, spec, &w, true)?;
    let weak = weak_residual_random(ctx, spec, &w, opts.weak_tests, opts.seed)?;
    let v: Vec<f64> = w.iter().zip(&u_lambda.values).map(|(a, b)| a - b).collect();
    Ok(Polished { v, w, residual, weak })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ctx: &Context,
    spec: &ProblemSpec,
    f: &TranslatedFunctional,
    p: Polished,
    mut cert: Certificate,
    opts: &SecondOptions,
    classification: Option<Classification>,
    trace: Vec<TraceRow>,
) -> Result<SecondOutcome> {
    let vmin = p.v.iter().copied().fold(f64::INFINITY, f64::min);
    let vsup = sup_norm(&p.v);
    if vmin < -1e-8 * vsup.max(1e-300) {
        cert.notes.push(format!("translated part dips to {vmin:.3e} below zero"));
    }
    let mut vp = p.v.clone();
    functional::clip(&mut vp);
    cert.residual = p.residual;
    cert.weak_residual = p.weak;
    cert.v_sup_norm = vsup;
    cert.v_h10_norm = ctx.grid.h10_norm(&p.v);
    if cert.case == "MP" {
        let g = f.value(&vp);
        cert.gamma0 = Some(g);
        cert.margin = Some(cert.threshold - g);
    }
    if !(p.residual <= opts.residual_tol) {
        return Err(Error::Convergence {
            what: "second solution residual".into(),
            iterations: cert.sweeps,
            residual: p.residual,
        });
    }
    if !(vsup > 1e-4) {
        return Err(Error::Convergence {
            what: format!("second solution collapsed onto the first (|v|_inf = {vsup:.3e})"),
            iterations: cert.sweeps,
            residual: p.residual,
        });
    }
    if let Some(g) = cert.gamma0 {
        if !(g < cert.threshold) {
            return Err(Error::StallAboveThreshold {
                gamma0: g,
                threshold: cert.threshold,
            });
        }
        if !(g > 0.0) {
            return Err(Error::Convergence {
                what: format!("critical level gamma0 = {g:e} is not positive"),
                iterations: cert.sweeps,
                residual: p.residual,
            });
        }
    }
    let mut report = SolveReport::build(ctx, spec, p.w, cert.sweeps, p.residual)?;
    report.converged = p.residual <= opts.residual_tol;
    report.monotonicity_certificate = false;
    report.notes = cert.notes.clone();
    Ok(SecondOutcome {
        classification,
        certificate: cert,
        v: ctx.field(p.v)?,
        composed: report.solution.clone(),
        report,
        trace,
    })
}

fn blank_certificate(case: &str, spec: &ProblemSpec, s: f64, rho: f64) -> Certificate {
    Certificate {
        case: case.into(),
        gamma0: None,
        threshold: threshold(spec, s),
        margin: None,
        residual: f64::NAN,
        weak_residual: f64::NAN,
        lambda: spec.lambda,
        sobolev_s: s,
        rho,
        v_sup_norm: 0.0,
        v_h10_norm: 0.0,
        sweeps: 0,
        notes: Vec::new(),
    }
}

/// Mountain-pass branch from a given first solution and barrier radius.
pub fn mountain_pass_branch(
    ctx: &Context,
    spec: &ProblemSpec,
    u_lambda: &Field,
    rho1: f64,
    opts: &SecondOptions,
) -> Result<SecondOutcome> {
    let s = sobolev_constants(spec.n)?.s;
    let f = TranslatedFunctional {
        translation: Translation::new(u_lambda, spec)?,
        spec: *spec,
    };
    let center = seed_center(u_lambda, spec.a, opts.path_cutoff)?;
    let bubble = BubbleSpec::new(opts.path_eps, center, opts.path_cutoff)?;
    let seed = bubble_field(&ctx.grid, &bubble)?;
    let end = negative_endpoint(&f, &seed.values, rho1)?;
    let path0 = PathState::straight(&f, &end, opts.mp.nodes)?;
    path0.validate(&f, rho1)?;
    let out = mp_solve(&f, path0, &opts.mp)?;
    let mut cert = blank_certificate("MP", spec, s, rho1);
    cert.sweeps = out.sweeps;
    if !out.stalled {
        cert.notes.push(format!("string descent hit the sweep cap of {}", opts.mp.max_sweeps));
    }
    cert.notes.push(format!("path peak before polishing: {:.10e}", out.gamma0));
    let p = polish(ctx, spec, u_lambda, &out.path.peak_point(), opts)?;
    finish(ctx, spec, &f, p, cert, opts, None, out.trace)
}

/// Zero-altitude branch on the annulus about radius `rho`.
pub fn zero_altitude_branch(
    ctx: &Context,
    spec: &ProblemSpec,
    u_lambda: &Field,
    rho: f64,
    opts: &SecondOptions,
) -> Result<SecondOutcome> {
    let s = sobolev_constants(spec.n)?.s;
    let f = TranslatedFunctional {
        translation: Translation::new(u_lambda, spec)?,
        spec: *spec,
    };
    let za = za_solve(&f, rho, opts.seed, &opts.za_descent)?;
    let mut cert = blank_certificate("ZA", spec, s, rho);
    cert.sweeps = za.iterations;
    let p = polish(ctx, spec, u_lambda, &za.v, opts)?;
    finish(ctx, spec, &f, p, cert, opts, None, Vec::new())
}

/// Classifies, then runs the matching branch. An ambiguous classification
/// runs the mountain-pass branch first and falls back to zero altitude.
pub fn second_solution(
    ctx: &Context,
    spec: &ProblemSpec,
    u_lambda: &Field,
    opts: &SecondOptions,
) -> Result<SecondOutcome> {
    ctx.check(spec)?;
    let f = TranslatedFunctional {
        translation: Translation::new(u_lambda, spec)?,
        spec: *spec,
    };
    let grid_rho = default_rho_grid(ctx.grid.h10_norm(&u_lambda.values));
    let mut copts = opts.classify;
    copts.seed = opts.seed;
    match classify_case(&f, &grid_rho, &copts) {
        Ok(cls) => {
            let mut out = match cls.case {
                Case::MP { rho1, .. } => mountain_pass_branch(ctx, spec, u_lambda, rho1, opts)?,
                Case::ZA { rho } => zero_altitude_branch(ctx, spec, u_lambda, rho, opts)?,
            };
            out.classification = Some(cls);
            Ok(out)
        }
        Err(Error::ClassificationAmbiguous { rho, inf_value }) => {
            let note = format!("classification ambiguous at rho = {rho:.3e} (inf {inf_value:.3e})");
            let mut out = match mountain_pass_branch(ctx, spec, u_lambda, rho, opts) {
                Ok(o) => o,
                Err(_) => zero_altitude_branch(ctx, spec, u_lambda, rho, opts)?,
            };
            out.certificate.notes.push(note);
            Ok(out)
        }
        Err(e) => Err(e),
    }
}
