//! Energy functionals, the translated functional, its two-sided slope bracket
//! and the local-minimum probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{Field, Grid};
use crate::error::{Error, Result};
use crate::nonlinearity::{
    power_increment, primitive_G, primitive_G_eps, translated_g_primitive, JumpRegularization,
    ProblemSpec,
};
use crate::singular_solvers::{JumpMode, Operator};

/// `total = dirichlet - g_term - critical`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub g_term: f64,
    pub critical: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(dirichlet: f64, g_term: f64, critical: f64) -> Self {
        Self {
            dirichlet,
            g_term,
            critical,
            total: dirichlet - g_term - critical,
        }
    }
}

fn power_part(grid: &Grid, u: &[f64], spec: &ProblemSpec) -> f64 {
    let q = spec.two_star();
    spec.lambda / q * grid.power_integral(u, q)
}

/// `½∫|∇u|² - λ∫G(u) - λ/2* ∫|u|^{2*}`.
#[allow(non_snake_case)]
pub fn energy_E(u: &Field, spec: &ProblemSpec) -> EnergyBreakdown {
    let g = &u.grid;
    let gv: Vec<f64> = u.values.iter().map(|&x| primitive_G(x, spec)).collect();
    EnergyBreakdown::new(
        g.dirichlet(&u.values),
        spec.lambda * g.integrate_nodal(&gv),
        power_part(g, &u.values, spec),
    )
}

/// Smoothed-jump energy.
#[allow(non_snake_case)]
pub fn energy_E_eps(u: &Field, spec: &ProblemSpec, reg: JumpRegularization) -> EnergyBreakdown {
    let g = &u.grid;
    let gv: Vec<f64> = u
        .values
        .iter()
        .map(|&x| primitive_G_eps(x, spec, reg))
        .collect();
    EnergyBreakdown::new(
        g.dirichlet(&u.values),
        spec.lambda * g.integrate_nodal(&gv),
        power_part(g, &u.values, spec),
    )
}

/// Jump weight carried by a solution at each node: the strict indicator,
/// or the balancing weight in `[0, 1]` at nodes sitting exactly at `a`.
pub fn jump_weights(u_lambda: &Field, spec: &ProblemSpec) -> Result<Vec<f64>> {
    let op = Operator::new(&u_lambda.grid, *spec, JumpMode::Strict, true);
    Ok(op.parts(&u_lambda.values)?.weight)
}

/// First solution together with the data the translated functional needs.
#[derive(Debug, Clone)]
pub struct Translation {
    pub u: Field,
    pub weights: Vec<f64>,
}

impl Translation {
    pub fn new(u_lambda: &Field, spec: &ProblemSpec) -> Result<Self> {
        Ok(Self {
            u: u_lambda.clone(),
            weights: jump_weights(u_lambda, spec)?,
        })
    }

    /// `I_λ(v)`: the nonlinear parts act on the nodal positive part of `v`.
    pub fn energy(&self, v: &[f64], spec: &ProblemSpec) -> EnergyBreakdown {
        let grid = &self.u.grid;
        let u = &self.u.values;
        let vp: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let gt: Vec<f64> = (0..v.len())
            .map(|i| translated_g_primitive(u[i], vp[i], self.weights[i], spec))
            .collect();
        let q = spec.two_star();
        let ft = grid.integrate_qp2(u, &vp, |a, b| power_increment(a, b, q));
        EnergyBreakdown::new(
            grid.dirichlet(v),
            spec.lambda * grid.integrate_nodal(&gt),
            spec.lambda * ft,
        )
    }

    /// Nodal derivative of `I_λ`: `K v - λ M g̃(v) - λ ∫ f̃ φ_i` on the
    /// positive nodes. At a node whose translated value sits exactly at `a`
    /// the singular weight is taken as 1, which gives the smaller descent.
    pub fn gradient(&self, v: &[f64], spec: &ProblemSpec) -> Vec<f64> {
        let grid = &self.u.grid;
        let u = &self.u.values;
        let lam = spec.lambda;
        let d = spec.delta;
        let p = spec.power();
        let vp: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let mut g = grid.stiffness_apply(v);
        let crit = grid.load_qp2(u, &vp, |a, b| {
            if b > 0.0 {
                (a + b).powf(p) - a.powf(p)
            } else {
                0.0
            }
        });
        let mass = grid.mass();
        for i in 0..v.len() {
            if v[i] > 0.0 {
                let w = u[i] + v[i];
                let top = if w <= spec.a { w.powf(-d) } else { 0.0 };
                let gt = top - self.weights[i] * u[i].powf(-d);
                g[i] -= lam * (mass[i] * gt + crit[i]);
            }
        }
        g
    }
}

/// Translated energy `I_λ(v)` about `u_lambda`.
#[allow(non_snake_case)]
pub fn energy_I(v: &Field, u_lambda: &Field, spec: &ProblemSpec) -> Result<EnergyBreakdown> {
    Ok(Translation::new(u_lambda, spec)?.energy(&v.values, spec))
}

/// Two-sided bound on the generalized directional derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeInterval {
    pub low: f64,
    pub high: f64,
}

/// Directional derivative bracket at `u ≥ 0` in direction `phi`, letting the
/// jump weight range over `[0, 1]` where `u_λ + u` equals `a`.
pub fn slope_bracket(
    u: &Field,
    phi: &Field,
    u_lambda: &Field,
    spec: &ProblemSpec,
) -> Result<SlopeInterval> {
    let grid = &u.grid;
    let w: Vec<f64> = u_lambda
        .values
        .iter()
        .zip(&u.values)
        .map(|(a, b)| a + b.max(0.0))
        .collect();
    let lam = spec.lambda;
    let d = spec.delta;
    let p = spec.power();
    let kw = grid.stiffness_apply(&w);
    let crit = grid.load_qp2(&w, &w, |x, _| if x > 0.0 { x.powf(p) } else { 0.0 });
    let mass = grid.mass();
    let mut base = 0.0;
    let mut low = 0.0;
    let mut high = 0.0;
    for i in 0..w.len() {
        if !(w[i] > 0.0) {
            return Err(Error::Domain(format!("u_lambda + u not positive at node {i}")));
        }
        let ph = phi.values[i];
        base += (kw[i] - lam * crit[i]) * ph;
        let sing = lam * mass[i] * w[i].powf(-d) * ph;
        if w[i] < spec.a {
            base -= sing;
        } else if w[i] == spec.a {
            low += (-sing).min(0.0);
            high += (-sing).max(0.0);
        }
    }
    Ok(SlopeInterval {
        low: base + low,
        high: base + high,
    })
}

/// Outcome of [`local_min_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_probes: usize,
    pub radius: f64,
    pub min_gap: f64,
    pub violations: Vec<usize>,
    /// Smallest `gap / ‖w‖²` over the probes.
    pub min_normalized_gap: f64,
}

/// Energy gap `E(u_λ + w) - E(u_λ)` along caller-supplied perturbations.
pub fn energy_gaps(u_lambda: &Field, spec: &ProblemSpec, dirs: &[Vec<f64>]) -> Vec<f64> {
    let e0 = energy_E(u_lambda, spec).total;
    dirs.iter()
        .map(|w| {
            let vals: Vec<f64> = u_lambda.values.iter().zip(w).map(|(a, b)| a + b).collect();
            let f = Field {
                grid: u_lambda.grid.clone(),
                values: vals,
            };
            energy_E(&f, spec).total - e0
        })
        .collect()
}

/// Random perturbations of `H¹₀` norm at most `radius` keeping `u_λ + w > 0`.
pub fn probe_directions(
    u_lambda: &Field,
    n_probes: usize,
    radius: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let grid = &u_lambda.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_probes);
    let mut attempts = 0;
    while out.len() < n_probes && attempts < 100 * n_probes.max(1) {
        attempts += 1;
        let unit = grid.smoothed_noise(&mut rng);
        let s = radius * rng.gen_range(0.1..=1.0);
        let w: Vec<f64> = unit.iter().map(|x| s * x).collect();
        if u_lambda.values.iter().zip(&w).all(|(a, b)| a + b > 0.0) {
            out.push(w);
        }
    }
    out
}

/// Samples the energy around `u_λ` and reports the smallest gap.
pub fn local_min_probe(
    u_lambda: &Field,
    spec: &ProblemSpec,
    n_probes: usize,
    radius: f64,
    seed: u64,
) -> Result<ProbeReport> {
    let dirs = probe_directions(u_lambda, n_probes, radius, seed);
    let rep = probe_with(u_lambda, spec, &dirs, radius);
    if rep.violations.is_empty() {
        Ok(rep)
    } else {
        Err(Error::ProbeFailure(rep.violations))
    }
}

/// Probe report for explicit perturbations (no error on violations).
pub fn probe_with(u_lambda: &Field, spec: &ProblemSpec, dirs: &[Vec<f64>], radius: f64) -> ProbeReport {
    let e0 = energy_E(u_lambda, spec).total;
    let slack = 1e-10 * (1.0 + e0.abs());
    let gaps = energy_gaps(u_lambda, spec, dirs);
    let grid = &u_lambda.grid;
    let mut min_gap = f64::INFINITY;
    let mut min_norm = f64::INFINITY;
    let mut violations = Vec::new();
    for (k, (g, w)) in gaps.iter().zip(dirs).enumerate() {
        min_gap = min_gap.min(*g);
        let nn = grid.h1_inner(w, w);
        if nn > 0.0 {
            min_norm = min_norm.min(g / nn);
        }
        if *g < -slack {
            violations.push(k);
        }
    }
    if dirs.is_empty() {
        min_gap = 0.0;
    }
    ProbeReport {
        n_probes: dirs.len(),
        radius,
        min_gap,
        violations,
        min_normalized_gap: min_norm,
    }
}
