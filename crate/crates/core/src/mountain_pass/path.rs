//! Discrete mountain-pass paths and their deformation by string descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::functional::{clip, Functional};
use crate::error::{Error, Result};

/// A path from the origin to a point of negative energy, sampled at nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub nodes: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// Maximum of the energy along the polygon through the nodes.
    pub gamma0_estimate: f64,
    /// Segment and local parameter where that maximum sits.
    pub peak_segment: usize,
    pub peak_t: f64,
    pub iterations: usize,
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// Interior probes per segment when locating the polygon maximum.
const SEGMENT_PROBES: usize = 7;

/// Maximum of `f` along the polygon: every segment is probed at a few
/// interior points, then the best probe is refined by golden section on the
/// segments around it.
fn polygon_peak<F: Functional + ?Sized>(f: &F, nodes: &[Vec<f64>], energies: &[f64]) -> (f64, usize, f64) {
    let n = nodes.len();
    if n < 2 {
        return (energies.first().copied().unwrap_or(f64::NEG_INFINITY), 0, 0.0);
    }
    let m = SEGMENT_PROBES;
    let probes: Vec<(f64, usize, f64)> = (0..(n - 1) * m)
        .into_par_iter()
        .map(|j| {
            let (k, i) = (j / m, j % m);
            let t = (i + 1) as f64 / (m + 1) as f64;
            (f.value(&lerp(&nodes[k], &nodes[k + 1], t)), k, t)
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0.0);
    for k in 0..n - 1 {
        for (e, t) in [(energies[k], 0.0), (energies[k + 1], 1.0)] {
            if e > best.0 {
                best = (e, k, t);
            }
        }
    }
    for &(e, k, t) in &probes {
        if e > best.0 {
            best = (e, k, t);
        }
    }
    let (_, k0, t0) = best;
    let h = 1.0 / (m + 1) as f64;
    // Bracket of one probe spacing on either side of the best probe, possibly
    // spilling into the neighbouring segment.
    let mut pieces = vec![(k0, (t0 - h).max(0.0), (t0 + h).min(1.0))];
    if t0 - h < 0.0 && k0 > 0 {
        pieces.push((k0 - 1, 1.0 - h, 1.0));
    }
    if t0 + h > 1.0 && k0 + 2 < n {
        pieces.push((k0 + 1, 0.0, h));
    }
    for (k, lo, hi) in pieces {
        let g = |t: f64| f.value(&lerp(&nodes[k], &nodes[k + 1], t));
        let (t, e) = golden_max(g, lo, hi, 40);
        if e > best.0 {
            best = (e, k, t);
        }
    }
    best
}

fn golden_max(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, steps: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..steps {
        if f1 < f2 {
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
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

impl PathState {
    /// Straight segment `t ↦ t·end` with `count` nodes.
    pub fn straight<F: Functional + ?Sized>(f: &F, end: &[f64], count: usize) -> Result<Self> {
        if count < 3 {
            return Err(Error::InvalidParameter("a path needs at least 3 nodes".into()));
        }
        let nodes: Vec<Vec<f64>> = (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                end.iter().map(|x| t * x).collect()
            })
            .collect();
        Ok(Self::from_nodes(f, nodes, 0))
    }

    pub fn from_nodes<F: Functional + ?Sized>(f: &F, nodes: Vec<Vec<f64>>, iterations: usize) -> Self {
        let energies: Vec<f64> = nodes.par_iter().map(|v| f.value(v)).collect();
        let (gamma0_estimate, peak_segment, peak_t) = polygon_peak(f, &nodes, &energies);
        Self {
            nodes,
            energies,
            gamma0_estimate,
            peak_segment,
            peak_t,
            iterations,
        }
    }

    /// Index of the highest node.
    pub fn peak(&self) -> usize {
        self.energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// The highest point found on the polygon through the nodes.
    pub fn peak_point(&self) -> Vec<f64> {
        let k = self.peak_segment;
        let t = self.peak_t;
        if k + 1 >= self.nodes.len() {
            return self.nodes[k].clone();
        }
        lerp(&self.nodes[k], &self.nodes[k + 1], t)
    }

    /// Endpoint conditions: starts at zero, ends at negative energy beyond
    /// `rho1`, nonnegative throughout.
    pub fn validate<F: Functional + ?Sized>(&self, f: &F, rho1: f64) -> Result<()> {
        let first = &self.nodes[0];
        if first.iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidParameter("path must start at the origin".into()));
        }
        let last = self.nodes.last().expect("nonempty path");
        let e = *self.energies.last().expect("nonempty path");
        if !(e < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "path endpoint has energy {e:e}, expected a negative value"
            )));
        }
        let n = f.norm(last);
        if !(n > rho1) {
            return Err(Error::InvalidParameter(format!(
                "path endpoint norm {n:e} does not exceed rho1 = {rho1:e}"
            )));
        }
        if let Some(k) = self.nodes.iter().position(|v| v.iter().any(|&x| x < 0.0)) {
            return Err(Error::InvalidParameter(format!("path node {k} has negative entries")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpOptions {
    pub nodes: usize,
    pub max_sweeps: usize,
    /// Peak decrease per sweep below which descent counts as stalled.
    pub stall_tol: f64,
    /// Consecutive stalled sweeps before stopping.
    pub stall_sweeps: usize,
    pub step0: f64,
    /// Record node energies every this many sweeps.
    pub trace_every: usize,
}

impl Default for MpOptions {
    fn default() -> Self {
        Self {
            nodes: 33,
            max_sweeps: 4000,
            stall_tol: 1e-8,
            stall_sweeps: 5,
            step0: 0.1,
            trace_every: 10,
        }
    }
}

/// One row of the path trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub node: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpOutcome {
    pub path: PathState,
    pub peak: usize,
    /// Highest energy along the final path.
    pub gamma0: f64,
    pub sweeps: usize,
    /// Whether descent stopped by stalling rather than by the sweep cap.
    pub stalled: bool,
    pub trace: Vec<TraceRow>,
}

/// Largest displacement of a node per sweep, relative to its nearest neighbour.
const MAX_HOP: f64 = 0.5;

fn spacing<F: Functional + ?Sized>(f: &F, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    f.norm(&d)
}

/// Cuts hairpins: a node whose neighbours are far closer to each other than
/// to it is moved to their midpoint. Descent alone cannot retract such a
/// fold, and its tip would pin the peak above the pass.
fn unfold<F: Functional + ?Sized>(f: &F, nodes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut out = nodes.to_vec();
    let mut k = 1;
    while k + 1 < n {
        let chord = spacing(f, &out[k - 1], &out[k + 1]);
        let legs = spacing(f, &out[k - 1], &out[k]) + spacing(f, &out[k], &out[k + 1]);
        if chord < FOLD_RATIO * legs {
            out[k] = lerp(&out[k - 1], &out[k + 1], 0.5);
        }
        k += 1;
    }
    out
}

/// Chord-to-legs ratio below which a node counts as a fold tip.
const FOLD_RATIO: f64 = 0.25;

/// Redistributes the interior nodes uniformly in energy-arclength, by linear
/// interpolation along the current polygon.
///
/// Each segment has length `√((‖Δv‖/L_v)² + (ΔĨ/L_I)²)` with `Ĩ = max(I, 0)`
/// and `L_v`, `L_I` the totals of the two parts, so that the stretch of path
/// below zero energy does not drain nodes from the ridge.
fn reparametrize<F: Functional + ?Sized>(f: &F, nodes: &[Vec<f64>], energies: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let dv: Vec<f64> = (1..n).map(|k| spacing(f, &nodes[k], &nodes[k - 1])).collect();
    let de: Vec<f64> = (1..n)
        .map(|k| (energies[k].max(0.0) - energies[k - 1].max(0.0)).abs())
        .collect();
    let lv: f64 = dv.iter().sum();
    let le: f64 = de.iter().sum();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let a = if lv > 0.0 { dv[k - 1] / lv } else { 0.0 };
        let b = if le > 0.0 { de[k - 1] / le } else { 0.0 };
        cum[k] = cum[k - 1] + a.hypot(b);
    }
    let total = cum[n - 1];
    if !(total > 0.0) {
        return nodes.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    out.push(nodes[0].clone());
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 1 < n - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        out.push(lerp(&nodes[seg], &nodes[seg + 1], t));
    }
    out.push(nodes[n - 1].clone());
    out
}

/// String descent: every interior node moves against the component of its
/// gradient normal to the path, negatives are clipped, and the path is
/// reparametrized. A sweep is kept only if the peak energy does not rise.
pub fn mp_solve<F: Functional + ?Sized>(f: &F, path0: PathState, opts: &MpOptions) -> Result<MpOutcome> {
    let n = path0.nodes.len();
    if n < 3 {
        return Err(Error::InvalidParameter("a path needs at least 3 nodes".into()));
    }
    let mut path = path0;
    let mut trace = Vec::new();
    let record = |sweep: usize, p: &PathState, trace: &mut Vec<TraceRow>| {
        trace.extend(p.energies.iter().enumerate().map(|(node, &energy)| TraceRow {
            sweep,
            node,
            energy,
        }));
    };
    record(0, &path, &mut trace);
    let mut step = opts.step0;
    let mut quiet = 0;
    let mut stalled = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let nodes = &path.nodes;
        let dirs: Vec<(Vec<f64>, f64)> = (1..n - 1)
            .into_par_iter()
            .map(|k| {
                let mut g = f.gradient(&nodes[k]);
                let mut t: Vec<f64> = nodes[k + 1].iter().zip(&nodes[k - 1]).map(|(a, b)| a - b).collect();
                let tn = f.norm(&t);
                if tn > 0.0 {
                    t.iter_mut().for_each(|x| *x /= tn);
                    let c = f.inner(&g, &t);
                    g.iter_mut().zip(&t).for_each(|(a, b)| *a -= c * b);
                }
                // No node may travel more than a fraction of its distance to
                // its neighbours, or the string could hop over the ridge.
                let gap = spacing(f, &nodes[k - 1], &nodes[k]).min(spacing(f, &nodes[k], &nodes[k + 1]));
                let gn = f.norm(&g);
                (g, if gn > 0.0 { MAX_HOP * gap / gn } else { f64::INFINITY })
            })
            .collect();
        // The two nodes bounding the highest segment follow the gradient at
        // the peak point itself, so the peak descends to first order.
        let mut dirs = dirs;
        let ks = path.peak_segment;
        if ks + 1 < n {
            let p = path.peak_point();
            let mut g = f.gradient(&p);
            let mut t: Vec<f64> = nodes[ks + 1].iter().zip(&nodes[ks]).map(|(a, b)| a - b).collect();
            let tn = f.norm(&t);
            if tn > 0.0 {
                t.iter_mut().for_each(|x| *x /= tn);
                let c = f.inner(&g, &t);
                g.iter_mut().zip(&t).for_each(|(a, b)| *a -= c * b);
            }
            let gn = f.norm(&g);
            for k in [ks, ks + 1] {
                if k >= 1 && k <= n - 2 {
                    let gap = spacing(f, &nodes[k - 1], &nodes[k]).min(spacing(f, &nodes[k], &nodes[k + 1]));
                    let cap = if gn > 0.0 { MAX_HOP * gap / gn } else { f64::INFINITY };
                    dirs[k - 1] = (g.clone(), cap);
                }
            }
        }
        let old_peak = path.gamma0_estimate;
        let mut accepted = None;
        for _ in 0..40 {
            let mut moved: Vec<Vec<f64>> = Vec::with_capacity(n);
            moved.push(nodes[0].clone());
            for k in 1..n - 1 {
                let mut v: Vec<f64> = nodes[k]
                    .iter()
                    .zip(&dirs[k - 1].0)
                    .map(|(a, b)| a - step.min(dirs[k - 1].1) * b)
                    .collect();
                clip(&mut v);
                moved.push(v);
            }
            moved.push(nodes[n - 1].clone());
            let cand = PathState::from_nodes(f, moved, path.iterations + 1);
            if cand.gamma0_estimate <= old_peak {
                // Redistribution re-samples the polygon and can itself lift
                // the peak slightly; it is kept only when it does not.
                let re = reparametrize(f, &unfold(f, &cand.nodes), &cand.energies);
                let spread = PathState::from_nodes(f, re, cand.iterations);
                accepted = Some(if spread.gamma0_estimate <= cand.gamma0_estimate { spread } else { cand });
                break;
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else {
            stalled = true;
            break;
        };
        let drop = old_peak - cand.gamma0_estimate;
        path = cand;
        step *= 1.25;
        if opts.trace_every > 0 && sweeps % opts.trace_every == 0 {
            record(sweeps, &path, &mut trace);
        }
        if drop < opts.stall_tol * old_peak.abs().max(1.0) {
            quiet += 1;
            if quiet >= opts.stall_sweeps {
                stalled = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    if opts.trace_every == 0 || sweeps % opts.trace_every != 0 {
        record(sweeps, &path, &mut trace);
    }
    let peak = path.peak();
    Ok(MpOutcome {
        gamma0: path.gamma0_estimate,
        peak,
        path,
        sweeps,
        stalled,
        trace,
    })
}
