//! Sphere infima near the origin and the zero-altitude branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::functional::{clip, Functional};
use crate::error::{Error, Result};

/// Projected gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Initial step in the `H¹₀` metric.
    pub step0: f64,
    /// Stop once a step lowers the value by less than this (relative).
    pub rel_tol: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            step0: 0.5,
            rel_tol: 1e-12,
        }
    }
}

/// Which side of the dichotomy holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case")]
pub enum Case {
    /// Sphere infima vanish; `rho` is the largest certified radius.
    ZA { rho: f64 },
    MP { rho1: f64, inf_value: f64 },
}

impl Case {
    pub fn label(&self) -> &'static str {
        match self {
            Case::ZA { .. } => "ZA",
            Case::MP { .. } => "MP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub starts: usize,
    /// A sphere infimum above this counts as a strict barrier.
    pub tol: f64,
    pub seed: u64,
    pub descent: DescentOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            starts: 10,
            tol: 1e-8,
            seed: 0,
            descent: DescentOptions::default(),
        }
    }
}

/// Infimum estimates on one sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereScan {
    pub rho: f64,
    pub inf_value: f64,
    /// Worst (largest) of the per-start estimates.
    pub worst_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub case: Case,
    /// Smallest radius whose sphere dips below zero, if any was met.
    pub rho0: Option<f64>,
    pub scans: Vec<SphereScan>,
}

/// `ρ v⁺ / ‖v⁺‖`, or `None` if `v` has no positive part.
fn onto_sphere<F: Functional + ?Sized>(f: &F, v: &[f64], rho: f64) -> Option<Vec<f64>> {
    let mut w = v.to_vec();
    clip(&mut w);
    let n = f.norm(&w);
    if !(n > 0.0) {
        return None;
    }
    w.iter_mut().for_each(|x| *x *= rho / n);
    Some(w)
}

/// Random nonnegative start of norm `rho`.
fn random_start<F: Functional + ?Sized>(f: &F, rho: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut v = f.grid().smoothed_noise(&mut rng);
        v.iter_mut().for_each(|x| *x = x.abs());
        if let Some(w) = onto_sphere(f, &v, rho) {
            return w;
        }
    }
}

/// Projected descent on the nonnegative part of a sphere.
pub fn sphere_descent<F: Functional + ?Sized>(
    f: &F,
    start: Vec<f64>,
    rho: f64,
    opts: &DescentOptions,
) -> (Vec<f64>, f64) {
    let mut x = onto_sphere(f, &start, rho).unwrap_or(start);
    let mut fx = f.value(&x);
    let mut step = opts.step0;
    for _ in 0..opts.max_iter {
        let mut g = f.gradient(&x);
        let radial = f.inner(&g, &x) / (rho * rho);
        g.iter_mut().zip(&x).for_each(|(gi, xi)| *gi -= radial * xi);
        let gn = f.norm(&g);
        if !(gn > 1e-300) {
            break;
        }
        let mut moved = false;
        while step > 1e-12 * rho / gn {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if let Some(y) = onto_sphere(f, &trial, rho) {
                let fy = f.value(&y);
                if fy < fx {
                    let gain = fx - fy;
                    x = y;
                    fx = fy;
                    step *= 1.5;
                    moved = gain > opts.rel_tol * (1.0 + fx.abs());
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (x, fx)
}

/// Per-start infimum estimates of `f` on `{‖v‖ = ρ} ∩ H⁺`.
pub fn sphere_infimum<F: Functional + ?Sized>(
    f: &F,
    rho: f64,
    starts: usize,
    seed: u64,
    opts: &DescentOptions,
) -> Vec<f64> {
    (0..starts)
        .into_par_iter()
        .map(|k| {
            let s = random_start(f, rho, seed.wrapping_add(k as u64));
            sphere_descent(f, s, rho, opts).1
        })
        .collect()
}

/// `{2⁻¹, …, 2⁻¹⁰}·norm`, largest first.
pub fn default_rho_grid(norm: f64) -> Vec<f64> {
    (1..=10).map(|k| norm * 0.5f64.powi(k)).collect()
}

/// Decides between the zero-altitude and mountain-pass situations.
///
/// Spheres are scanned from the smallest radius up; the first one whose
/// infimum falls below `-tol` bounds the admissible ball. Among the admissible
/// radii, the largest with infimum above `tol` gives the mountain-pass verdict;
/// if none exists the case is zero altitude. A sphere whose per-start
/// estimates fall on both sides of `tol` is reported as ambiguous.
pub fn classify_case<F: Functional + ?Sized>(
    f: &F,
    rho_grid: &[f64],
    opts: &ClassifyOptions,
) -> Result<Classification> {
    let mut radii: Vec<f64> = rho_grid.to_vec();
    radii.retain(|r| *r > 0.0 && r.is_finite());
    if radii.is_empty() {
        return Err(Error::InvalidParameter("empty radius grid".into()));
    }
    radii.sort_by(|a, b| a.total_cmp(b));
    let mut scans = Vec::new();
    let mut rho0 = None;
    for (k, &rho) in radii.iter().enumerate() {
        let est = sphere_infimum(f, rho, opts.starts.max(1), opts.seed ^ ((k as u64) << 32), &opts.descent);
        let inf = est.iter().copied().fold(f64::INFINITY, f64::min);
        let worst = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if inf < -opts.tol {
            rho0 = Some(rho);
            scans.push(SphereScan {
                rho,
                inf_value: inf,
                worst_start: worst,
            });
            break;
        }
        scans.push(SphereScan {
            rho,
            inf_value: inf,
            worst_start: worst,
        });
    }
    let admissible: Vec<&SphereScan> = scans.iter().filter(|s| s.inf_value >= -opts.tol).collect();
    let Some(largest) = admissible.last() else {
        let s = &scans[0];
        return Err(Error::ClassificationAmbiguous {
            rho: s.rho,
            inf_value: s.inf_value,
        });
    };
    let largest_rho = largest.rho;
    for s in admissible.iter().rev() {
        if s.inf_value > opts.tol {
            return Ok(Classification {
                case: Case::MP {
                    rho1: s.rho,
                    inf_value: s.inf_value,
                },
                rho0,
                scans,
            });
        }
        if s.worst_start > opts.tol {
            return Err(Error::ClassificationAmbiguous {
                rho: s.rho,
                inf_value: s.inf_value,
            });
        }
    }
    Ok(Classification {
        case: Case::ZA { rho: largest_rho },
        rho0,
        scans,
    })
}

/// Result of the annulus descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZaOutcome {
    pub v: Vec<f64>,
    pub value: f64,
    pub norm: f64,
    /// `H¹₀` norm of the projected gradient at the returned point.
    pub slope: f64,
    pub iterations: usize,
}

/// Nonnegative part of `v`, radially clamped into `[lo, hi]`.
fn onto_annulus<F: Functional + ?Sized>(f: &F, v: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let mut w = v.to_vec();
    clip(&mut w);
    let n = f.norm(&w);
    if !(n > 0.0) {
        return None;
    }
    let target = n.clamp(lo, hi);
    if target != n {
        w.iter_mut().for_each(|x| *x *= target / n);
    }
    Some(w)
}

/// Projected descent on `{ρ - r ≤ ‖v‖ ≤ ρ + r} ∩ H⁺` with `r = ρ/4`.
pub fn za_solve<F: Functional + ?Sized>(
    f: &F,
    rho: f64,
    seed: u64,
    opts: &DescentOptions,
) -> Result<ZaOutcome> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must be positive")));
    }
    let r = 0.25 * rho;
    let (lo, hi) = (rho - r, rho + r);
    let mut x = random_start(f, rho, seed);
    let mut fx = f.value(&x);
    let mut step = opts.step0;
    let mut iterations = 0;
    let max_iter = 20 * opts.max_iter;
    while iterations < max_iter {
        iterations += 1;
        let g = f.gradient(&x);
        let gn = f.norm(&g);
        if !(gn > 1e-300) {
            break;
        }
        let mut moved = false;
        while step > 1e-14 * rho / gn {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if let Some(y) = onto_annulus(f, &trial, lo, hi) {
                let fy = f.value(&y);
                if fy < fx {
                    let gain = fx - fy;
                    x = y;
                    fx = fy;
                    step *= 1.5;
                    moved = gain > opts.rel_tol * (fx.abs() + 1e-16);
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let norm = f.norm(&x);
    let g = f.gradient(&x);
    let radial = f.inner(&g, &x) / (norm * norm);
    let on_inner = norm <= lo * (1.0 + 1e-9);
    let on_outer = norm >= hi * (1.0 - 1e-9);
    let mut pg = g.clone();
    // On an active boundary only the tangential part, plus an inward radial
    // part that the constraint blocks, is free.
    if (on_inner && radial > 0.0) || (on_outer && radial < 0.0) {
        pg.iter_mut().zip(&x).for_each(|(a, b)| *a -= radial * b);
    }
    // Components pushing into the nonnegativity constraint are blocked too.
    for (p, xi) in pg.iter_mut().zip(&x) {
        if *xi <= 0.0 && *p > 0.0 {
            *p = 0.0;
        }
    }
    let slope = f.norm(&pg);
    if norm < 0.5 * rho || (on_inner && radial > 0.0 && fx > 1e-6) {
        return Err(Error::EscapeToZero { norm });
    }
    if !(fx <= 1e-6) {
        return Err(Error::Convergence {
            what: "annulus descent".into(),
            iterations,
            residual: fx,
        });
    }
    Ok(ZaOutcome {
        v: x,
        value: fx,
        norm,
        slope,
        iterations,
    })
}
