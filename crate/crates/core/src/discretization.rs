//! Grids, the discrete Dirichlet operator, norms, quadrature, the principal
//! eigenpair and linear solves.
//!
//! The radial grid uses conforming piecewise-linear elements for the
//! Dirichlet form, with exact element weights `|S^{N-1}| ∫ r^{N-1} dr / h²`,
//! and dual-cell nodal masses for lumped source terms. Power nonlinearities
//! are integrated with 5-point Gauss–Legendre on each element, applied to the
//! piecewise-linear interpolant. This keeps the discrete Sobolev quotient of
//! every field above the continuum constant, so grid-scale concentration never
//! produces spurious low-energy critical points.
//!
//! The box grid is the 7-point stencil with `h³` lumped masses.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes on `[0, 1]`.
pub(crate) const GAUSS_X: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
/// Matching weights on `[0, 1]`.
pub(crate) const GAUSS_W: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

/// Marker for "no node" in a quadrature point (boundary or box grid).
pub const NO_NODE: usize = usize::MAX;

/// `Γ(n/2)` for positive integers `n`, exactly from the factorial forms.
pub fn gamma_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        // Γ(k + 1/2) = √π (2k)! / (4^k k!)
        let k = (n - 1) / 2;
        let mut g = PI.sqrt();
        for j in 0..k {
            g *= j as f64 + 0.5;
        }
        g
    }
}

/// `J_ν(x)` with `ν = N/2 - 1`, by its power series (accurate for `x ≲ 12`).
pub fn bessel_j_radial(n: usize, x: f64) -> f64 {
    let h = 0.5 * x;
    let nu = n as f64 / 2.0 - 1.0;
    // (x/2)^ν / Γ(ν + 1), then each term multiplies by -(x/2)² / (k (k + ν)).
    let mut term = h.powf(nu) / gamma_half(n);
    let mut sum = term;
    for k in 1..200 {
        term *= -h * h / (k as f64 * (k as f64 + nu));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// First positive zero of `J_{N/2-1}`; its square is the first Dirichlet
/// eigenvalue of the unit ball in `R^N`.
pub fn bessel_first_zero(n: usize) -> f64 {
    let f = |x: f64| bessel_j_radial(n, x);
    let mut lo = 0.5;
    while f(lo + 0.05) > 0.0 {
        lo += 0.05;
    }
    let mut hi = lo + 0.05;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Area of the unit sphere `S^{N-1}`.
pub fn unit_sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// Volume of the unit ball in `R^N`.
pub fn unit_ball_volume(n: usize) -> f64 {
    unit_sphere_area(n) / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    /// `m` nodes `r_i = i h` on `[0, 1]`; the last one is the boundary.
    Radial { n: usize, m: usize },
    /// `m³` interior nodes of the unit cube.
    Box3D { m: usize },
}

/// A quadrature point touching at most two unknowns.
#[derive(Debug, Clone, Copy)]
pub struct QPoint {
    pub w: f64,
    pub i: usize,
    pub phi_i: f64,
    pub j: usize,
    pub phi_j: f64,
}

impl QPoint {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        let mut v = 0.0;
        if self.i != NO_NODE {
            v += u[self.i] * self.phi_i;
        }
        if self.j != NO_NODE {
            v += u[self.j] * self.phi_j;
        }
        v
    }
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// `L D Lᵀ` pivots.
    fn pivots(&self) -> Vec<f64> {
        let n = self.diag.len();
        let mut d = vec![0.0; n];
        for i in 0..n {
            d[i] = self.diag[i];
            if i > 0 {
                d[i] -= self.off[i - 1] * self.off[i - 1] / d[i - 1];
            }
        }
        d
    }

    /// Number of negative eigenvalues (Sylvester inertia).
    pub fn negative_eigenvalues(&self) -> usize {
        self.pivots().iter().filter(|&&p| p < 0.0).count()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.diag.len();
        let mut d = vec![0.0; n];
        let mut y = rhs.to_vec();
        for i in 0..n {
            d[i] = self.diag[i];
            if i > 0 {
                let l = self.off[i - 1] / d[i - 1];
                d[i] -= l * self.off[i - 1];
                y[i] -= l * y[i - 1];
            }
            if d[i] == 0.0 || !d[i].is_finite() {
                return Err(Error::SingularSystem(format!("zero pivot at row {i}")));
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.off[i] * x[i + 1];
            }
            x[i] = s / d[i];
        }
        Ok(x)
    }
}

/// Additive perturbation of the stiffness matrix: `K + diag + off`.
/// `off` is used on radial grids only.
#[derive(Debug, Clone)]
pub struct Shift {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
    /// Unknowns held fixed: their rows and columns become the identity.
    /// Empty when nothing is fixed.
    pub fixed: Vec<bool>,
}

impl Shift {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.dim();
        let off = match grid.kind {
            GridKind::Radial { .. } => vec![0.0; n.saturating_sub(1)],
            GridKind::Box3D { .. } => Vec::new(),
        };
        Self {
            diag: vec![0.0; n],
            off,
            fixed: Vec::new(),
        }
    }
}

/// Immutable discretization of the domain.
#[derive(Debug)]
pub struct Grid {
    kind: GridKind,
    h: f64,
    dim: usize,
    mass: Vec<f64>,
    boundary_mass: f64,
    /// Radial element weights, one per element.
    kw: Vec<f64>,
    surface: f64,
    /// Box: orthonormal sine transform and 1-D stencil eigenvalues.
    sine: Vec<f64>,
    eig1d: Vec<f64>,
}

impl Grid {
    pub fn radial(n: usize, m: usize) -> Result<Arc<Grid>> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("N = {n} must be >= 3")));
        }
        if m < 16 {
            return Err(Error::InvalidParameter(format!("M = {m} must be >= 16")));
        }
        let h = 1.0 / (m as f64 - 1.0);
        let nf = n as f64;
        let surface = unit_sphere_area(n);
        let r = |i: usize| i as f64 * h;
        let kw = (0..m - 1)
            .map(|e| surface * (r(e + 1).powi(n as i32) - r(e).powi(n as i32)) / (nf * h * h))
            .collect();
        let cell = |i: usize| {
            let lo = (r(i) - 0.5 * h).max(0.0);
            let hi = (r(i) + 0.5 * h).min(1.0);
            surface * (hi.powi(n as i32) - lo.powi(n as i32)) / nf
        };
        let mass = (0..m - 1).map(cell).collect();
        Ok(Arc::new(Grid {
            kind: GridKind::Radial { n, m },
            h,
            dim: m - 1,
            mass,
            boundary_mass: cell(m - 1),
            kw,
            surface,
            sine: Vec::new(),
            eig1d: Vec::new(),
        }))
    }

    pub fn box3d(m: usize) -> Result<Arc<Grid>> {
        if m < 16 {
            return Err(Error::InvalidParameter(format!("M = {m} must be >= 16")));
        }
        let h = 1.0 / (m as f64 + 1.0);
        let scale = (2.0 / (m as f64 + 1.0)).sqrt();
        let mut sine = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                sine[j * m + k] =
                    scale * (PI * (j + 1) as f64 * (k + 1) as f64 / (m as f64 + 1.0)).sin();
            }
        }
        let eig1d = (0..m)
            .map(|k| (2.0 - 2.0 * (PI * (k + 1) as f64 * h).cos()) / (h * h))
            .collect();
        let dim = m * m * m;
        Ok(Arc::new(Grid {
            kind: GridKind::Box3D { m },
            h,
            dim,
            mass: vec![h * h * h; dim],
            boundary_mass: 0.0,
            kw: Vec::new(),
            surface: 0.0,
            sine,
            eig1d,
        }))
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.kind, GridKind::Radial { .. })
    }

    /// Spatial dimension `N`.
    pub fn space_dim(&self) -> usize {
        match self.kind {
            GridKind::Radial { n, .. } => n,
            GridKind::Box3D { .. } => 3,
        }
    }

    /// Grid size parameter `M`.
    pub fn m(&self) -> usize {
        match self.kind {
            GridKind::Radial { m, .. } | GridKind::Box3D { m } => m,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of unknowns (interior nodes).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodal masses of the unknowns.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Radial element weights of the stiffness matrix.
    pub fn element_weights(&self) -> &[f64] {
        &self.kw
    }

    /// Coordinates of unknown `i` (`[r]` on radial grids).
    pub fn coords(&self, i: usize) -> Vec<f64> {
        match self.kind {
            GridKind::Radial { .. } => vec![i as f64 * self.h],
            GridKind::Box3D { m } => {
                let (x, y, z) = (i / (m * m), (i / m) % m, i % m);
                vec![
                    (x + 1) as f64 * self.h,
                    (y + 1) as f64 * self.h,
                    (z + 1) as f64 * self.h,
                ]
            }
        }
    }

    /// Distance of unknown `i` to the origin (radial) or a point's position
    /// vector norm (box).
    pub fn radius(&self, i: usize) -> f64 {
        match self.kind {
            GridKind::Radial { .. } => i as f64 * self.h,
            GridKind::Box3D { .. } => self.coords(i).iter().map(|c| c * c).sum::<f64>().sqrt(),
        }
    }

    /// Distance of unknown `i` to the boundary.
    pub fn boundary_distance(&self, i: usize) -> f64 {
        match self.kind {
            GridKind::Radial { .. } => 1.0 - i as f64 * self.h,
            GridKind::Box3D { .. } => self
                .coords(i)
                .iter()
                .map(|&c| c.min(1.0 - c))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `Σ m_i f_i` over unknowns.
    pub fn integrate_nodal(&self, f: &[f64]) -> f64 {
        self.mass.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    /// Quadrature of a constant over the closed domain, boundary cell included.
    pub fn integrate_constant(&self, c: f64) -> f64 {
        c * (self.mass.iter().sum::<f64>() + self.boundary_mass)
    }

    /// Visits every quadrature point used for power nonlinearities.
    pub fn for_each_qp(&self, mut f: impl FnMut(&QPoint)) {
        match self.kind {
            GridKind::Radial { n, m } => {
                let h = self.h;
                for e in 0..m - 1 {
                    let j = if e + 1 < m - 1 { e + 1 } else { NO_NODE };
                    for q in 0..5 {
                        let xi = GAUSS_X[q];
                        let r = (e as f64 + xi) * h;
                        let qp = QPoint {
                            w: self.surface * r.powi(n as i32 - 1) * h * GAUSS_W[q],
                            i: e,
                            phi_i: 1.0 - xi,
                            j,
                            phi_j: xi,
                        };
                        f(&qp);
                    }
                }
            }
            GridKind::Box3D { .. } => {
                let w = self.mass[0];
                for i in 0..self.dim {
                    f(&QPoint {
                        w,
                        i,
                        phi_i: 1.0,
                        j: NO_NODE,
                        phi_j: 0.0,
                    });
                }
            }
        }
    }

    /// `∫ F(u_h)` where `u_h` is the interpolant of the nodal values.
    pub fn integrate_qp(&self, u: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each_qp(|qp| s += qp.w * f(qp.eval(u)));
        s
    }

    /// `∫ F(u_h, v_h)` for two interpolants.
    pub fn integrate_qp2(&self, u: &[f64], v: &[f64], mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        self.for_each_qp(|qp| s += qp.w * f(qp.eval(u), qp.eval(v)));
        s
    }

    /// Load vector `∫ F(u_h, v_h) φ_i`.
    pub fn load_qp2(&self, u: &[f64], v: &[f64], mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.for_each_qp(|qp| {
            let g = qp.w * f(qp.eval(u), qp.eval(v));
            if qp.i != NO_NODE {
                out[qp.i] += g * qp.phi_i;
            }
            if qp.j != NO_NODE {
                out[qp.j] += g * qp.phi_j;
            }
        });
        out
    }

    /// Adds `∫ F(u_h, v_h) φ_i φ_j` into a stiffness shift.
    pub fn add_mass_qp2(
        &self,
        u: &[f64],
        v: &[f64],
        shift: &mut Shift,
        mut f: impl FnMut(f64, f64) -> f64,
    ) {
        self.for_each_qp(|qp| {
            let g = qp.w * f(qp.eval(u), qp.eval(v));
            if g == 0.0 {
                return;
            }
            if qp.i != NO_NODE {
                shift.diag[qp.i] += g * qp.phi_i * qp.phi_i;
            }
            if qp.j != NO_NODE {
                shift.diag[qp.j] += g * qp.phi_j * qp.phi_j;
                if qp.i != NO_NODE {
                    shift.off[qp.i] += g * qp.phi_i * qp.phi_j;
                }
            }
        });
    }

    /// `∫ |u_h|^q`.
    pub fn power_integral(&self, u: &[f64], q: f64) -> f64 {
        self.integrate_qp(u, |v| v.abs().powf(q))
    }

    /// Stiffness matrix applied to `u`, in difference form to limit round-off.
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        match self.kind {
            GridKind::Radial { m, .. } => {
                let n = m - 1;
                let mut y = vec![0.0; n];
                for i in 0..n {
                    let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                    let mut s = self.kw[i] * (u[i] - right);
                    if i > 0 {
                        s += self.kw[i - 1] * (u[i] - u[i - 1]);
                    }
                    y[i] = s;
                }
                y
            }
            GridKind::Box3D { m } => {
                let h = self.h;
                let mut y = vec![0.0; self.dim];
                for x in 0..m {
                    for yy in 0..m {
                        for z in 0..m {
                            let i = (x * m + yy) * m + z;
                            let c = u[i];
                            let mut s = 0.0;
                            let mut nb = |cond: bool, j: usize| {
                                s += c - if cond { u[j] } else { 0.0 };
                            };
                            nb(x > 0, i.wrapping_sub(m * m));
                            nb(x + 1 < m, i + m * m);
                            nb(yy > 0, i.wrapping_sub(m));
                            nb(yy + 1 < m, i + m);
                            nb(z > 0, i.wrapping_sub(1));
                            nb(z + 1 < m, i + 1);
                            y[i] = h * s;
                        }
                    }
                }
                y
            }
        }
    }

    /// Radial stiffness matrix as a tridiagonal.
    pub fn stiffness_tridiag(&self) -> Option<Tridiag> {
        match self.kind {
            GridKind::Radial { m, .. } => {
                let n = m - 1;
                let diag = (0..n)
                    .map(|i| self.kw[i] + if i > 0 { self.kw[i - 1] } else { 0.0 })
                    .collect();
                let off = (0..n - 1).map(|i| -self.kw[i]).collect();
                Some(Tridiag { diag, off })
            }
            GridKind::Box3D { .. } => None,
        }
    }

    /// `K + shift` on a radial grid.
    pub fn shifted_tridiag(&self, shift: &Shift) -> Option<Tridiag> {
        let mut t = self.stiffness_tridiag()?;
        for (d, s) in t.diag.iter_mut().zip(&shift.diag) {
            *d += s;
        }
        for (o, s) in t.off.iter_mut().zip(&shift.off) {
            *o += s;
        }
        for (i, &f) in shift.fixed.iter().enumerate() {
            if f {
                t.diag[i] = 1.0;
                if i > 0 {
                    t.off[i - 1] = 0.0;
                }
                if i < t.off.len() {
                    t.off[i] = 0.0;
                }
            }
        }
        Some(t)
    }

    /// Pointwise discrete `-Δu`: central differences for
    /// `u'' + (N-1)/r u'` with the `N u''(0)` limit at the origin on radial
    /// grids; the 7-point stencil on the box.
    pub fn laplacian_apply(&self, u: &[f64]) -> Vec<f64> {
        match self.kind {
            GridKind::Radial { n, m } => {
                let h = self.h;
                let nn = m - 1;
                let at = |j: usize| if j < nn { u[j] } else { 0.0 };
                (0..nn)
                    .map(|i| {
                        if i == 0 {
                            -(n as f64) * 2.0 * (at(1) - at(0)) / (h * h)
                        } else {
                            let r = i as f64 * h;
                            let d2 = (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h);
                            let d1 = (at(i + 1) - at(i - 1)) / (2.0 * h);
                            -(d2 + (n as f64 - 1.0) / r * d1)
                        }
                    })
                    .collect()
            }
            GridKind::Box3D { .. } => {
                let h3 = self.h.powi(3);
                self.stiffness_apply(u).into_iter().map(|v| v / h3).collect()
            }
        }
    }

    /// `½ uᵀ K u`.
    pub fn dirichlet(&self, u: &[f64]) -> f64 {
        0.5 * self.h1_inner(u, u)
    }

    /// Discrete `∫ ∇u·∇v`.
    pub fn h1_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            GridKind::Radial { m, .. } => {
                let n = m - 1;
                let at = |w: &[f64], j: usize| if j < n { w[j] } else { 0.0 };
                (0..n)
                    .map(|e| self.kw[e] * (at(u, e + 1) - u[e]) * (at(v, e + 1) - v[e]))
                    .sum()
            }
            GridKind::Box3D { .. } => {
                let ku = self.stiffness_apply(u);
                ku.iter().zip(v).map(|(a, b)| a * b).sum()
            }
        }
    }

    pub fn h10_norm(&self, u: &[f64]) -> f64 {
        self.h1_inner(u, u).max(0.0).sqrt()
    }

    /// Lumped `L²` inner product.
    pub fn l2_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.iter().zip(u.iter().zip(v)).map(|(m, (a, b))| m * a * b).sum()
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.l2_inner(u, u).sqrt()
    }

    /// `(∫ |u_h|^{2*})^{1/2*}`.
    pub fn l2star_norm(&self, u: &[f64]) -> f64 {
        let q = crate::nonlinearity::critical_exponent(self.space_dim());
        self.power_integral(u, q).powf(1.0 / q)
    }

    /// Solves `K x = load`.
    pub fn solve_stiffness(&self, load: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            GridKind::Radial { .. } => self.stiffness_tridiag().unwrap().solve(load),
            GridKind::Box3D { m } => {
                let mut c = self.sine_3d(load, m);
                let h3 = self.h.powi(3);
                for x in 0..m {
                    for y in 0..m {
                        for z in 0..m {
                            let e = self.eig1d[x] + self.eig1d[y] + self.eig1d[z];
                            c[(x * m + y) * m + z] /= h3 * e;
                        }
                    }
                }
                Ok(self.sine_3d(&c, m))
            }
        }
    }

    /// Separable orthonormal sine transform (its own inverse).
    fn sine_3d(&self, v: &[f64], m: usize) -> Vec<f64> {
        let s = &self.sine;
        let mut a = v.to_vec();
        let mut b = vec![0.0; v.len()];
        // axis z
        for xy in 0..m * m {
            let row = &a[xy * m..(xy + 1) * m];
            for k in 0..m {
                let sk = &s[k * m..(k + 1) * m];
                b[xy * m + k] = row.iter().zip(sk).map(|(p, q)| p * q).sum();
            }
        }
        // axis y
        for x in 0..m {
            for z in 0..m {
                for k in 0..m {
                    let mut acc = 0.0;
                    for y in 0..m {
                        acc += s[k * m + y] * b[(x * m + y) * m + z];
                    }
                    a[(x * m + k) * m + z] = acc;
                }
            }
        }
        // axis x
        for y in 0..m {
            for z in 0..m {
                for k in 0..m {
                    let mut acc = 0.0;
                    for x in 0..m {
                        acc += s[k * m + x] * a[(x * m + y) * m + z];
                    }
                    b[(k * m + y) * m + z] = acc;
                }
            }
        }
        b
    }

    /// Solves `(K + shift) x = rhs`: tridiagonal elimination on radial grids,
    /// stiffness-preconditioned conjugate gradients on the box.
    pub fn solve_shifted(&self, shift: &Shift, rhs: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            GridKind::Radial { .. } => self.shifted_tridiag(shift).unwrap().solve(rhs),
            GridKind::Box3D { .. } => self.pcg(shift, rhs),
        }
    }

    fn pcg(&self, shift: &Shift, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let fixed = |i: usize| shift.fixed.get(i).copied().unwrap_or(false);
        let mask = |x: &[f64]| -> Vec<f64> {
            (0..n).map(|i| if fixed(i) { 0.0 } else { x[i] }).collect()
        };
        let apply = |x: &[f64]| {
            let mut y = self.stiffness_apply(&mask(x));
            for i in 0..n {
                y[i] = if fixed(i) { x[i] } else { y[i] + shift.diag[i] * x[i] };
            }
            y
        };
        let precond = |r: &[f64]| -> Result<Vec<f64>> {
            let mut z = self.solve_stiffness(&mask(r))?;
            for i in 0..n {
                if fixed(i) {
                    z[i] = r[i];
                }
            }
            Ok(z)
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let bnorm = dot(rhs, rhs).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.to_vec();
        let mut z = precond(&r)?;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for it in 0..500 {
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SingularSystem(format!(
                    "conjugate gradients met non-positive curvature at iteration {it}"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if dot(&r, &r).sqrt() <= 1e-13 * bnorm {
                return Ok(x);
            }
            z = precond(&r)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Convergence {
            what: "conjugate gradients".into(),
            iterations: 500,
            residual: dot(&r, &r).sqrt() / bnorm,
        })
    }

    /// Smooth random field: the stiffness solve of nodal white noise,
    /// scaled to unit `H¹₀` norm.
    pub fn smoothed_noise<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let load: Vec<f64> = self
            .mass
            .iter()
            .map(|m| m * (2.0 * rng.gen::<f64>() - 1.0))
            .collect();
        let mut v = self.solve_stiffness(&load).expect("stiffness is nonsingular");
        let nrm = self.h10_norm(&v);
        if nrm > 0.0 {
            v.iter_mut().for_each(|x| *x /= nrm);
        }
        v
    }
}

/// Scalar function on the interior nodes of a grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} unknowns",
                values.len(),
                grid.dim()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.dim();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.dim()).map(|i| f(&grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn h10_norm(&self) -> f64 {
        self.grid.h10_norm(&self.values)
    }

    pub fn l2star_norm(&self) -> f64 {
        self.grid.l2star_norm(&self.values)
    }

    /// CSV with a header row: coordinates then value, 17 significant digits.
    /// Radial fields include the boundary node.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.grid.kind() {
            GridKind::Radial { .. } => {
                out.push_str("r,value\n");
                for (i, v) in self.values.iter().enumerate() {
                    out.push_str(&format!("{},{}\n", fmt17(self.grid.radius(i)), fmt17(*v)));
                }
                out.push_str(&format!("{},{}\n", fmt17(1.0), fmt17(0.0)));
            }
            GridKind::Box3D { .. } => {
                out.push_str("x,y,z,value\n");
                for (i, v) in self.values.iter().enumerate() {
                    let c = self.grid.coords(i);
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        fmt17(c[0]),
                        fmt17(c[1]),
                        fmt17(c[2]),
                        fmt17(*v)
                    ));
                }
            }
        }
        out
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Principal Dirichlet eigenpair.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    pub e1: Field,
}

/// Default sup norm of the principal eigenfunction.
pub const E1_SUP_DEFAULT: f64 = 0.5;

/// Inverse power iteration for `K e = λ M e`.
pub fn eigen_first(grid: &Arc<Grid>, e1_sup: f64) -> Result<EigenPair> {
    if !(e1_sup > 0.0 && e1_sup < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eigenfunction sup norm {e1_sup} must lie in (0, 1)"
        )));
    }
    let n = grid.dim();
    let mass = grid.mass();
    let mut x: Vec<f64> = (0..n).map(|i| grid.boundary_distance(i).max(grid.h())).collect();
    let mut lam_old = f64::INFINITY;
    let max_iter = 2000;
    for it in 0..max_iter {
        let load: Vec<f64> = x.iter().zip(mass).map(|(v, m)| v * m).collect();
        let mut y = grid.solve_stiffness(&load)?;
        let s = sup_norm(&y);
        y.iter_mut().for_each(|v| *v /= s);
        let lam = grid.h1_inner(&y, &y) / grid.l2_inner(&y, &y);
        x = y;
        if ((lam - lam_old) / lam).abs() < 1e-13 && it > 3 {
            let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            x.iter_mut().for_each(|v| *v *= sign * e1_sup);
            if x.iter().any(|&v| v <= 0.0) {
                return Err(Error::Convergence {
                    what: "principal eigenfunction positivity".into(),
                    iterations: it,
                    residual: lam,
                });
            }
            return Ok(EigenPair {
                lambda1: lam,
                e1: Field::new(grid.clone(), x)?,
            });
        }
        lam_old = lam;
    }
    Err(Error::Convergence {
        what: "inverse power iteration".into(),
        iterations: max_iter,
        residual: lam_old,
    })
}

/// `-Δu = rhs` with lumped loads.
pub fn poisson_solve(rhs: &Field) -> Result<Field> {
    let grid = &rhs.grid;
    let load: Vec<f64> = rhs.values.iter().zip(grid.mass()).map(|(f, m)| f * m).collect();
    let u = grid.solve_stiffness(&load)?;
    Field::new(grid.clone(), u)
}

/// `-Δu` as a field, see [`Grid::laplacian_apply`].
pub fn laplacian_apply(u: &Field) -> Field {
    Field {
        grid: u.grid.clone(),
        values: u.grid.laplacian_apply(&u.values),
    }
}

pub fn h10_norm(u: &Field) -> f64 {
    u.h10_norm()
}

pub fn l2star_norm(u: &Field) -> f64 {
    u.l2star_norm()
}
