//! Discrete nonlinear operator `K u - λ M s(u) - λ C(u) - b` and a damped,
//! positivity-preserving Newton method for it.
//!
//! `s` is the lumped singular term `w(u) u^{-δ}` with a jump weight `w`, `C`
//! is the element-integrated power load and `b` is an optional fixed load.

use std::sync::Arc;

use crate::discretization::{sup_norm, Grid, Shift};
use crate::error::{Error, Result};
use crate::nonlinearity::{
    chi_eps, chi_eps_prime, h_sing, primitive_G, primitive_G_eps, JumpRegularization, ProblemSpec,
    U_FLOOR,
};

/// Role of a node relative to the level `a` in a frozen jump pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Below,
    Above,
    /// Held at exactly `a`; its jump weight is whatever balances the equation.
    Pinned,
}

/// How the singular term is switched off above `a`.
#[derive(Debug, Clone)]
pub enum JumpMode {
    /// Singular term active everywhere.
    Off,
    /// `[u < a]`; nodes sitting exactly at `a` take the balancing weight in `[0, 1]`.
    Strict,
    Smoothed(JumpRegularization),
    Pattern(Arc<[NodeState]>),
}

/// Pieces of the operator at a point; `R = ku - sing - crit - load`.
#[derive(Debug, Clone)]
pub struct Parts {
    pub ku: Vec<f64>,
    pub sing: Vec<f64>,
    pub crit: Vec<f64>,
    pub load: Vec<f64>,
    /// Jump weight realized at each node.
    pub weight: Vec<f64>,
}

impl Parts {
    pub fn residual(&self) -> Vec<f64> {
        (0..self.ku.len())
            .map(|i| self.ku[i] - self.sing[i] - self.crit[i] - self.load[i])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Operator<'g> {
    pub grid: &'g Grid,
    pub spec: ProblemSpec,
    pub jump: JumpMode,
    pub critical: bool,
    pub load: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOut {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

impl<'g> Operator<'g> {
    pub fn new(grid: &'g Grid, spec: ProblemSpec, jump: JumpMode, critical: bool) -> Self {
        Self {
            grid,
            spec,
            jump,
            critical,
            load: None,
        }
    }

    pub fn with_load(mut self, load: Vec<f64>) -> Self {
        self.load = Some(load);
        self
    }

    fn pinned(&self, i: usize, u: f64) -> bool {
        match &self.jump {
            JumpMode::Strict => u == self.spec.a,
            JumpMode::Pattern(p) => p[i] == NodeState::Pinned,
            _ => false,
        }
    }

    fn weight(&self, i: usize, u: f64) -> f64 {
        match &self.jump {
            JumpMode::Off => 1.0,
            JumpMode::Strict => {
                if u < self.spec.a {
                    1.0
                } else {
                    0.0
                }
            }
            JumpMode::Smoothed(reg) => chi_eps(u - self.spec.a, *reg),
            JumpMode::Pattern(p) => match p[i] {
                NodeState::Below => 1.0,
                _ => 0.0,
            },
        }
    }

    fn weight_prime(&self, u: f64) -> f64 {
        match &self.jump {
            JumpMode::Smoothed(reg) => chi_eps_prime(u - self.spec.a, *reg),
            _ => 0.0,
        }
    }

    /// Power load `λ ∫ (u_h)_+^{2*-1} φ_i`.
    pub fn critical_load(&self, u: &[f64]) -> Vec<f64> {
        let p = self.spec.power();
        let lam = self.spec.lambda;
        self.grid
            .load_qp2(u, u, |v, _| if v > 0.0 { lam * v.powf(p) } else { 0.0 })
    }

    fn check_positive(&self, u: &[f64]) -> Result<()> {
        for (i, &v) in u.iter().enumerate() {
            if !(v >= U_FLOOR) {
                return Err(Error::PositivityLoss { node: i, value: v });
            }
        }
        Ok(())
    }

    /// Operator pieces; pinned nodes take the balancing weight clamped to `[0, 1]`.
    pub fn parts(&self, u: &[f64]) -> Result<Parts> {
        self.check_positive(u)?;
        let n = u.len();
        let lam = self.spec.lambda;
        let d = self.spec.delta;
        let mass = self.grid.mass();
        let ku = self.grid.stiffness_apply(u);
        let crit = if self.critical {
            self.critical_load(u)
        } else {
            vec![0.0; n]
        };
        let load = self.load.clone().unwrap_or_else(|| vec![0.0; n]);
        let mut sing = vec![0.0; n];
        let mut weight = vec![0.0; n];
        for i in 0..n {
            let unit = lam * mass[i] * u[i].powf(-d);
            let w = if self.pinned(i, u[i]) {
                ((ku[i] - crit[i] - load[i]) / unit).clamp(0.0, 1.0)
            } else {
                self.weight(i, u[i])
            };
            weight[i] = w;
            sing[i] = w * unit;
        }
        Ok(Parts {
            ku,
            sing,
            crit,
            load,
            weight,
        })
    }

    /// Unclamped balancing weights at pinned nodes (NaN elsewhere).
    pub fn pinned_weights(&self, u: &[f64]) -> Result<Vec<f64>> {
        let parts = self.parts(u)?;
        let lam = self.spec.lambda;
        let mass = self.grid.mass();
        Ok((0..u.len())
            .map(|i| {
                if self.pinned(i, u[i]) {
                    let unit = lam * mass[i] * u[i].powf(-self.spec.delta);
                    (parts.ku[i] - parts.crit[i] - parts.load[i]) / unit
                } else {
                    f64::NAN
                }
            })
            .collect())
    }

    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.parts(u)?.residual())
    }

    /// `‖R/m‖_∞ / ‖(sing + crit + load)/m‖_∞`.
    pub fn rel_residual(&self, u: &[f64]) -> Result<f64> {
        Ok(rel_residual_of(&self.parts(u)?, self.grid.mass()))
    }

    /// Jacobian as a shift of the stiffness matrix; pinned nodes are frozen.
    pub fn jacobian(&self, u: &[f64]) -> Shift {
        let n = u.len();
        let lam = self.spec.lambda;
        let d = self.spec.delta;
        let mass = self.grid.mass();
        let mut shift = Shift::zeros(self.grid);
        for i in 0..n {
            let w = self.weight(i, u[i]);
            let wp = self.weight_prime(u[i]);
            shift.diag[i] +=
                lam * mass[i] * (d * w * u[i].powf(-d - 1.0) - wp * u[i].powf(-d));
        }
        if self.critical {
            let p = self.spec.power();
            self.grid.add_mass_qp2(u, u, &mut shift, |v, _| {
                if v > 0.0 {
                    -lam * p * v.powf(p - 1.0)
                } else {
                    0.0
                }
            });
        }
        let fixed: Vec<bool> = (0..n).map(|i| self.pinned(i, u[i])).collect();
        if fixed.iter().any(|&f| f) {
            shift.fixed = fixed;
        }
        shift
    }

    /// Number of negative eigenvalues of the Jacobian (radial grids only).
    pub fn negative_directions(&self, u: &[f64]) -> Option<usize> {
        let shift = self.jacobian(u);
        self.grid
            .shifted_tridiag(&shift)
            .map(|t| t.negative_eigenvalues())
    }

    /// Energy whose gradient is the residual, for operators without the
    /// power term; those are convex, which makes it a safe merit function.
    fn convex_energy(&self, u: &[f64]) -> Option<f64> {
        if self.critical {
            return None;
        }
        let d = self.spec.delta;
        let prim: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &x)| match &self.jump {
                JumpMode::Off => h_sing(x, d),
                JumpMode::Strict => primitive_G(x, &self.spec),
                JumpMode::Smoothed(reg) => primitive_G_eps(x, &self.spec, *reg),
                JumpMode::Pattern(p) => match p[i] {
                    NodeState::Below => h_sing(x, d),
                    _ => 0.0,
                },
            })
            .collect();
        let lin = self
            .load
            .as_ref()
            .map_or(0.0, |b| b.iter().zip(u).map(|(x, y)| x * y).sum());
        Some(self.grid.dirichlet(u) - self.spec.lambda * self.grid.integrate_nodal(&prim) - lin)
    }

    /// Residual with pinned entries zeroed, and its `M^{-1}` norm.
    fn newton_residual(&self, u: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        let parts = self.parts(u)?;
        let rel = rel_residual_of(&parts, self.grid.mass());
        let mut r = parts.residual();
        for i in 0..u.len() {
            if self.pinned(i, u[i]) {
                r[i] = 0.0;
            }
        }
        let merit = r
            .iter()
            .zip(self.grid.mass())
            .map(|(x, m)| x * x / m)
            .sum::<f64>()
            .sqrt();
        Ok((r, merit, rel))
    }

    /// Damped Newton. A step is halved until every node keeps at least half
    /// its value and the residual norm decreases. Iteration also stops once
    /// the update is at round-off level; the caller judges the final residual.
    pub fn newton(&self, u0: Vec<f64>, opts: NewtonOpts) -> Result<NewtonOut> {
        let mut u = u0;
        let (mut r, mut merit, mut rel) = self.newton_residual(&u)?;
        let mut stalled = 0;
        for it in 0..opts.max_iter {
            if rel <= opts.tol {
                return Ok(NewtonOut {
                    u,
                    iterations: it,
                    rel_residual: rel,
                });
            }
            let shift = self.jacobian(&u);
            let mut step = self.grid.solve_shifted(&shift, &r)?;
            step.iter_mut().for_each(|s| *s = -*s);
            let e0 = self.convex_energy(&u);
            let slope: f64 = r.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let ok_pos = u
                    .iter()
                    .zip(&step)
                    .all(|(&ui, &si)| ui + alpha * si >= 0.5 * ui);
                if ok_pos {
                    let trial: Vec<f64> =
                        u.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
                    if let Ok((rt, mt, relt)) = self.newton_residual(&trial) {
                        let energy_ok = match (e0, self.convex_energy(&trial)) {
                            (Some(e0), Some(et)) => slope < 0.0 && et <= e0 + 1e-4 * alpha * slope,
                            _ => false,
                        };
                        if mt < merit * (1.0 - 1e-4 * alpha)
                            || (mt <= merit && relt <= opts.tol)
                            || energy_ok
                        {
                            // Accepted steps that barely move the residual mean
                            // the linearization points at no nearby root.
                            stalled = if mt > 0.9 * merit { stalled + 1 } else { 0 };
                            let small = alpha * sup_norm(&step) <= 1e-14 * sup_norm(&trial);
                            u = trial;
                            r = rt;
                            merit = mt;
                            rel = relt;
                            accepted = true;
                            if small {
                                return Ok(NewtonOut {
                                    u,
                                    iterations: it + 1,
                                    rel_residual: rel,
                                });
                            }
                            if stalled >= 8 && rel > opts.tol {
                                return Err(Error::Convergence {
                                    what: "damped Newton (stagnating residual)".into(),
                                    iterations: it + 1,
                                    residual: rel,
                                });
                            }
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No decrease possible: the residual sits at its round-off floor
                // if the full step is negligible, otherwise this is a failure.
                if sup_norm(&step) <= 1e-10 * sup_norm(&u) {
                    return Ok(NewtonOut {
                        u,
                        iterations: it + 1,
                        rel_residual: rel,
                    });
                }
                return Err(Error::Convergence {
                    what: "damped Newton line search".into(),
                    iterations: it + 1,
                    residual: rel,
                });
            }
        }
        if rel <= opts.tol {
            return Ok(NewtonOut {
                u,
                iterations: opts.max_iter,
                rel_residual: rel,
            });
        }
        Err(Error::Convergence {
            what: "damped Newton".into(),
            iterations: opts.max_iter,
            residual: rel,
        })
    }
}

pub fn rel_residual_of(parts: &Parts, mass: &[f64]) -> f64 {
    let r = parts.residual();
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..r.len() {
        num = num.max((r[i] / mass[i]).abs());
        den = den.max(((parts.sing[i] + parts.crit[i] + parts.load[i]) / mass[i]).abs());
    }
    if den == 0.0 {
        den = parts
            .ku
            .iter()
            .zip(mass)
            .fold(0.0f64, |acc, (k, m)| acc.max((k / m).abs()));
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
