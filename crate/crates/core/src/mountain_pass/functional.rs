//! Functionals the path and sphere searches run on: the translated energy and
//! a few closed-form test functionals.

use std::sync::Arc;

use crate::discretization::Grid;
use crate::energy::Translation;
use crate::nonlinearity::{critical_exponent, ProblemSpec};

/// A functional on the nodal space of a grid, with its derivative as a dual
/// (load-like) vector.
pub trait Functional: Sync {
    fn grid(&self) -> &Grid;
    fn value(&self, v: &[f64]) -> f64;
    fn derivative(&self, v: &[f64]) -> Vec<f64>;

    /// `H¹₀` gradient: the Riesz representative of [`Functional::derivative`].
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        self.grid()
            .solve_stiffness(&self.derivative(v))
            .expect("stiffness matrix is nonsingular")
    }

    fn norm(&self, v: &[f64]) -> f64 {
        self.grid().h10_norm(v)
    }

    fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.grid().h1_inner(u, v)
    }
}

/// `I_λ` about a first solution.
#[derive(Debug, Clone)]
pub struct TranslatedFunctional {
    pub translation: Translation,
    pub spec: ProblemSpec,
}

impl Functional for TranslatedFunctional {
    fn grid(&self) -> &Grid {
        &self.translation.u.grid
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.translation.energy(v, &self.spec).total
    }

    fn derivative(&self, v: &[f64]) -> Vec<f64> {
        self.translation.gradient(v, &self.spec)
    }
}

/// Functional of the norm alone, `φ(‖v‖)`.
fn radial_derivative(grid: &Grid, v: &[f64], dphi_over_s: f64) -> Vec<f64> {
    let mut k = grid.stiffness_apply(v);
    k.iter_mut().for_each(|x| *x *= dphi_over_s);
    k
}

/// `½‖v‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticHarness {
    pub grid: Arc<Grid>,
}

impl Functional for QuadraticHarness {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.grid.dirichlet(v)
    }

    fn derivative(&self, v: &[f64]) -> Vec<f64> {
        self.grid.stiffness_apply(v)
    }
}

/// `½‖v‖² - ‖v‖³`, positive on spheres of radius below ½.
#[derive(Debug, Clone)]
pub struct CubicHarness {
    pub grid: Arc<Grid>,
}

impl Functional for CubicHarness {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn value(&self, v: &[f64]) -> f64 {
        let s = self.grid.h10_norm(v);
        0.5 * s * s - s * s * s
    }

    fn derivative(&self, v: &[f64]) -> Vec<f64> {
        let s = self.grid.h10_norm(v);
        radial_derivative(&self.grid, v, 1.0 - 3.0 * s)
    }
}

/// `c ‖v‖² (‖v‖ - r)²`: zero at the origin and on the whole sphere of radius `r`.
#[derive(Debug, Clone)]
pub struct RingHarness {
    pub grid: Arc<Grid>,
    pub radius: f64,
    pub scale: f64,
}

impl Functional for RingHarness {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn value(&self, v: &[f64]) -> f64 {
        let s = self.grid.h10_norm(v);
        self.scale * s * s * (s - self.radius).powi(2)
    }

    fn derivative(&self, v: &[f64]) -> Vec<f64> {
        let s = self.grid.h10_norm(v);
        let r = self.radius;
        // φ'(s)/s with φ = c s²(s-r)²
        let d = self.scale * 2.0 * (s - r) * (2.0 * s - r);
        radial_derivative(&self.grid, v, d)
    }
}

/// Pure critical functional `½‖v‖² - λ/2* ∫ (v⁺)^{2*}`; on the whole space its
/// mountain-pass level is `S^{N/2} / (N λ^{(N-2)/2})`.
#[derive(Debug, Clone)]
pub struct CriticalHarness {
    pub grid: Arc<Grid>,
    pub lambda: f64,
}

impl Functional for CriticalHarness {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn value(&self, v: &[f64]) -> f64 {
        let q = critical_exponent(self.grid.space_dim());
        let pos = self.grid.integrate_qp(v, |x| if x > 0.0 { x.powf(q) } else { 0.0 });
        self.grid.dirichlet(v) - self.lambda / q * pos
    }

    fn derivative(&self, v: &[f64]) -> Vec<f64> {
        let p = critical_exponent(self.grid.space_dim()) - 1.0;
        let lam = self.lambda;
        let load = self
            .grid
            .load_qp2(v, v, |x, _| if x > 0.0 { lam * x.powf(p) } else { 0.0 });
        let mut k = self.grid.stiffness_apply(v);
        k.iter_mut().zip(&load).for_each(|(a, b)| *a -= b);
        k
    }
}

/// Nonnegative part, in place.
pub(crate) fn clip(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}
