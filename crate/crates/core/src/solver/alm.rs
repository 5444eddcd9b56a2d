use std::time::Instant;

use super::{AlmSettings, Panoc, ParametricProblem, SolveStatus, SolverError, SolverOutcome};
use crate::scalar::Real;

/// Augmented Lagrangian outer loop with reusable buffers.
#[derive(Debug, Clone)]
pub struct AlmSolver<T> {
    panoc: Panoc<T>,
    u: Vec<T>,
    y: Vec<T>,
    y_bar: Vec<T>,
    fvals: Vec<T>,
}

impl<T: Real> AlmSolver<T> {
    pub fn new(n: usize, m: usize, memory: usize) -> Self {
        Self {
            panoc: Panoc::new(n, m, memory),
            u: vec![T::zero(); n],
            y: vec![T::zero(); m],
            y_bar: vec![T::zero(); m],
            fvals: vec![T::zero(); m],
        }
    }

    fn ensure_dims(&mut self, n: usize, m: usize, memory: usize) {
        self.panoc.ensure_dims(n, m, memory);
        self.u.resize(n, T::zero());
        self.y.resize(m, T::zero());
        self.y_bar.resize(m, T::zero());
        self.fvals.resize(m, T::zero());
    }

    /// Solves `min f(u)` over the box subject to `F(u) <= 0`.
    ///
    /// Each outer iteration clamps the multipliers to `[0, y_clamp]`, minimizes
    /// `psi` to the current inner tolerance warm-started at the previous point,
    /// and sets `y = max(0, y_bar + c F(u))`. The solve stops once the
    /// multiplier change is at most `c * delta`, the inner residual is at most
    /// `eps`, and `[F(u)]_+ <= delta`. Otherwise the penalty grows by `rho`
    /// when the multiplier change did not shrink by `theta_sd`, and the inner
    /// tolerance halves (floored at `eps`).
    pub fn solve<P: ParametricProblem<T> + ?Sized>(
        &mut self,
        problem: &mut P,
        u0: &[T],
        y0: &[T],
        settings: &AlmSettings<T>,
    ) -> Result<SolverOutcome<T>, SolverError> {
        let start = Instant::now();
        let deadline = settings.deadline(start);
        let (n, m) = (problem.n(), problem.m());
        assert_eq!(u0.len(), n, "initial guess length");
        assert_eq!(y0.len(), m, "multiplier guess length");
        self.ensure_dims(n, m, settings.lbfgs_memory);

        self.u.copy_from_slice(u0);
        self.y.copy_from_slice(y0);
        let mut c = settings.c0;
        let mut eps_bar = settings.eps_init.max(settings.eps);
        let mut z_prev = T::zero();
        let mut inner_total = 0;
        let mut per_outer = Vec::with_capacity(settings.nu_max);
        let mut fpr_norm = T::infinity();
        let mut infeasibility = T::zero();
        let mut status = SolveStatus::MaxOuterIterations;

        for nu in 0..settings.nu_max {
            for (yb, &yv) in self.y_bar.iter_mut().zip(&self.y) {
                *yb = yv.min(settings.y_clamp).max(T::zero());
            }
            let allowance = match settings.iteration_budget {
                0 => settings.max_inner_iters,
                b => settings.max_inner_iters.min(b.saturating_sub(inner_total)),
            };
            let inner = self.panoc.solve(problem, c, &self.y_bar, &mut self.u, eps_bar, allowance, deadline)?;
            inner_total += inner.iterations;
            per_outer.push(inner.iterations);
            fpr_norm = inner.fpr_norm;

            problem.cmap(&self.u, &mut self.fvals);
            if self.fvals.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::NonFiniteOracle);
            }
            let mut z = T::zero();
            infeasibility = T::zero();
            for i in 0..m {
                let y_new = (self.y_bar[i] + c * self.fvals[i]).max(T::zero());
                z = z.max((y_new - self.y[i]).abs());
                self.y[i] = y_new;
                infeasibility = infeasibility.max(self.fvals[i]);
            }

            if z <= c * settings.delta && fpr_norm <= settings.eps && infeasibility <= settings.delta {
                status = SolveStatus::Converged;
                break;
            }
            let spent = settings.iteration_budget > 0 && inner_total >= settings.iteration_budget;
            if spent || inner.deadline_hit || deadline.is_some_and(|d| Instant::now() >= d) {
                status = SolveStatus::TimeBudgetExhausted;
                break;
            }
            if nu > 0 && z > settings.theta_sd * z_prev {
                c = c * settings.rho;
            }
            z_prev = z;
            eps_bar = (eps_bar * T::lit(0.5)).max(settings.eps);
        }

        Ok(SolverOutcome {
            u_star: self.u.clone(),
            y_star: self.y.clone(),
            status,
            fpr_norm,
            infeasibility: infeasibility.max(T::zero()),
            outer_iters: per_outer.len(),
            inner_iters_total: inner_total,
            inner_iters_per_outer: per_outer,
            solve_time: start.elapsed().as_secs_f64(),
            penalty_final: c,
        })
    }
}

/// One-shot convenience wrapper around [`AlmSolver`].
pub fn alm_solve<T: Real, P: ParametricProblem<T> + ?Sized>(
    problem: &mut P,
    u0: &[T],
    y0: &[T],
    settings: &AlmSettings<T>,
) -> Result<SolverOutcome<T>, SolverError> {
    AlmSolver::new(problem.n(), problem.m(), settings.lbfgs_memory).solve(problem, u0, y0, settings)
}
