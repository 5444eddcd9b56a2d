//! Box-constrained PANOC wrapped in an augmented Lagrangian outer loop.
//!
//! Problems have the form
//!
//! ```text
//! minimize f(u)  subject to  u in U (a box),  F(u) <= 0
//! ```
//!
//! The outer loop minimizes `psi(u) = f(u) + c/2 * |[F(u) + y/c]_+|^2` over
//! the box with PANOC and updates multipliers with `y+ = max(0, y + c F(u))`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ValidationError};
use crate::scalar::Real;

mod alm;
mod lbfgs;
mod panoc;

pub use alm::{alm_solve, AlmSolver};
pub use lbfgs::Lbfgs;
pub use panoc::{panoc_solve, InnerResult, Panoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SolverError {
    /// A cost, constraint or gradient oracle produced NaN or infinity.
    #[error("oracle returned a non-finite value")]
    NonFiniteOracle,
}

/// Componentwise bounds `lower <= u <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> BoxSet<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self, ValidationError> {
        ensure(lower.len() == upper.len(), "box", "bound lengths differ")?;
        ensure(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "box",
            "lower bound exceeds upper bound",
        )?;
        Ok(Self { lower, upper })
    }

    /// Unbounded in every coordinate.
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![T::neg_infinity(); n], upper: vec![T::infinity(); n] }
    }

    /// `n` copies of a per-block bound, e.g. an input box tiled over a horizon.
    pub fn tiled(lower: &[T], upper: &[T], copies: usize) -> Self {
        Self { lower: lower.repeat(copies), upper: upper.repeat(copies) }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, z: &[T]) -> bool {
        z.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| l <= x && x <= u)
    }

    pub fn project_in_place(&self, z: &mut [T]) {
        for (x, (&l, &u)) in z.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.max(l).min(u);
        }
    }
}

/// Componentwise clamp of `z` onto `bounds`.
pub fn project_box<T: Real>(z: &[T], bounds: &BoxSet<T>) -> Vec<T> {
    let mut out = z.to_vec();
    bounds.project_in_place(&mut out);
    out
}

/// What the solver sees of an optimization problem.
///
/// Oracles take `&mut self` so implementations may keep scratch buffers.
pub trait ParametricProblem<T: Real> {
    /// Decision dimension.
    fn n(&self) -> usize;
    /// Number of constraints `F(u) <= 0`.
    fn m(&self) -> usize;
    fn bounds(&self) -> &BoxSet<T>;

    fn cost(&mut self, u: &[T]) -> T;
    fn cost_grad(&mut self, u: &[T], grad: &mut [T]);
    fn cmap(&mut self, u: &[T], out: &mut [T]);
    /// Writes `J_F(u)^T w` into `out`.
    fn cmap_jtv(&mut self, u: &[T], w: &[T], out: &mut [T]);

    /// `f(u)`, writing `F(u)` into `cmap_out`.
    fn cost_and_cmap(&mut self, u: &[T], cmap_out: &mut [T]) -> T {
        self.cmap(u, cmap_out);
        self.cost(u)
    }

    /// Writes `grad f(u) + J_F(u)^T w` into `out`.
    fn grad_plus_jtv(&mut self, u: &[T], w: &[T], out: &mut [T]) {
        self.cost_grad(u, out);
        if self.m() > 0 {
            let mut jtw = vec![T::zero(); out.len()];
            self.cmap_jtv(u, w, &mut jtw);
            for (o, j) in out.iter_mut().zip(jtw) {
                *o = *o + j;
            }
        }
    }
}

/// `psi(u; c, y) = f(u) + c/2 |[F(u) + y/c]_+|^2`.
pub fn psi_value<T: Real, P: ParametricProblem<T> + ?Sized>(u: &[T], c: T, y: &[T], problem: &mut P) -> T {
    let mut f = vec![T::zero(); problem.m()];
    let cost = problem.cost_and_cmap(u, &mut f);
    cost + penalty_term(&f, c, y)
}

/// Gradient of [`psi_value`]: `grad f(u) + c J_F(u)^T [F(u) + y/c]_+`.
pub fn psi_grad<T: Real, P: ParametricProblem<T> + ?Sized>(u: &[T], c: T, y: &[T], problem: &mut P) -> Vec<T> {
    let mut f = vec![T::zero(); problem.m()];
    problem.cmap(u, &mut f);
    shifted_weights_in_place(&mut f, c, y);
    let mut grad = vec![T::zero(); problem.n()];
    problem.grad_plus_jtv(u, &f, &mut grad);
    grad
}

/// `c/2 |[F + y/c]_+|^2`, written as `|[cF + y]_+|^2 / (2c)`.
pub(crate) fn penalty_term<T: Real>(f: &[T], c: T, y: &[T]) -> T {
    let s: T = f
        .iter()
        .zip(y)
        .map(|(&fi, &yi)| {
            let z = (c * fi + yi).max(T::zero());
            z * z
        })
        .sum();
    s / (c + c)
}

/// Overwrites `f` with `[c f + y]_+`, the multiplier-like weights of the penalty gradient.
pub(crate) fn shifted_weights_in_place<T: Real>(f: &mut [T], c: T, y: &[T]) {
    for (fi, &yi) in f.iter_mut().zip(y) {
        *fi = (c * *fi + yi).max(T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmSettings<T> {
    /// Final inner tolerance on the fixed-point residual (infinity norm).
    pub eps: T,
    /// Infeasibility tolerance.
    pub delta: T,
    /// Penalty growth factor.
    pub rho: T,
    /// Initial penalty.
    pub c0: T,
    /// Sufficient decrease coefficient for the multiplier change.
    pub theta_sd: T,
    /// Maximum outer iterations.
    pub nu_max: usize,
    /// Multiplier clamp.
    pub y_clamp: T,
    /// First inner tolerance; halved every outer iteration down to `eps`.
    pub eps_init: T,
    /// Wall-clock cap for one solve in seconds; non-positive disables it.
    pub time_budget: T,
    /// Cap on PANOC iterations per inner solve.
    pub max_inner_iters: usize,
    /// Cap on PANOC iterations summed over one solve; 0 disables it.
    /// Running out counts as an exhausted budget, like the wall clock.
    pub iteration_budget: usize,
    /// L-BFGS memory length.
    pub lbfgs_memory: usize,
}

impl<T: Real> Default for AlmSettings<T> {
    fn default() -> Self {
        Self {
            eps: T::lit(1e-4),
            delta: T::lit(1e-3),
            rho: T::lit(1.5),
            c0: T::lit(1000.0),
            theta_sd: T::lit(0.25),
            nu_max: 50,
            y_clamp: T::lit(1e6),
            eps_init: T::lit(1e-3),
            time_budget: T::lit(0.04),
            max_inner_iters: 500,
            iteration_budget: 0,
            lbfgs_memory: 10,
        }
    }
}

impl<T: Real> AlmSettings<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let pos = |x: T| x > T::zero() && x.is_finite();
        ensure(pos(self.eps), "solver.eps", "must be positive")?;
        ensure(pos(self.delta), "solver.delta", "must be positive")?;
        ensure(self.rho > T::one() && self.rho.is_finite(), "solver.rho", "must exceed 1")?;
        ensure(pos(self.c0), "solver.c0", "must be positive")?;
        ensure(
            self.theta_sd > T::zero() && self.theta_sd < T::one(),
            "solver.theta_sd",
            "must lie in (0, 1)",
        )?;
        ensure(self.nu_max >= 1, "solver.nu_max", "must be at least 1")?;
        ensure(pos(self.y_clamp), "solver.y_clamp", "must be positive")?;
        ensure(self.eps <= self.eps_init, "solver.eps_init", "must be at least eps")?;
        ensure(!self.time_budget.is_nan(), "solver.time_budget", "must be a number")?;
        ensure(self.max_inner_iters >= 1, "solver.max_inner_iters", "must be at least 1")?;
        ensure(self.lbfgs_memory >= 1, "solver.lbfgs_memory", "must be at least 1")
    }

    pub fn cast<S: Real>(&self) -> AlmSettings<S> {
        let c = |x: T| S::lit(x.as_f64());
        AlmSettings {
            eps: c(self.eps),
            delta: c(self.delta),
            rho: c(self.rho),
            c0: c(self.c0),
            theta_sd: c(self.theta_sd),
            nu_max: self.nu_max,
            y_clamp: c(self.y_clamp),
            eps_init: c(self.eps_init),
            time_budget: c(self.time_budget),
            max_inner_iters: self.max_inner_iters,
            iteration_budget: self.iteration_budget,
            lbfgs_memory: self.lbfgs_memory,
        }
    }

    pub(crate) fn deadline(&self, start: Instant) -> Option<Instant> {
        let secs = self.time_budget.as_f64();
        (secs > 0.0).then(|| start + std::time::Duration::from_secs_f64(secs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxOuterIterations,
    TimeBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome<T> {
    pub u_star: Vec<T>,
    pub y_star: Vec<T>,
    pub status: SolveStatus,
    /// Fixed-point residual (infinity norm) of the last inner iterate.
    pub fpr_norm: T,
    /// `|[F(u*)]_+|_inf`.
    pub infeasibility: T,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub inner_iters_per_outer: Vec<usize>,
    /// Wall-clock seconds.
    pub solve_time: f64,
    pub penalty_final: T,
}

impl<T: Real> SolverOutcome<T> {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn multiplier_norm(&self) -> T {
        crate::scalar::norm_sq(&self.y_star).sqrt()
    }
}
