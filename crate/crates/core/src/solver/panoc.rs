use std::time::Instant;

use super::{penalty_term, shifted_weights_in_place, Lbfgs, ParametricProblem, SolverError};
use crate::scalar::{all_finite, dot, norm_inf, norm_sq, Real};

/// Safety factor between the step size and the inverse Lipschitz estimate.
const GAMMA_L_COEFF: f64 = 0.95;
const LIPSCHITZ_UPDATE_EPSILON: f64 = 1e-6;
const MAX_LIPSCHITZ_UPDATES: usize = 30;
const MAX_LINESEARCH: usize = 2;
const MIN_L_ESTIMATE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerResult<T> {
    pub iterations: usize,
    /// `|u - proj(u - gamma grad psi(u))|_inf / gamma` at the last iterate.
    pub fpr_norm: T,
    pub converged: bool,
    pub deadline_hit: bool,
}

/// PANOC workspace for minimizing `psi(.; c, y)` over the problem's box.
///
/// Each iteration takes a projected-gradient step `u_bar = proj(u - gamma grad psi(u))`,
/// then moves along `(1 - tau) u_bar + tau (u + d)`, where `d` is an L-BFGS direction
/// for the fixed-point residual `r = u - u_bar`. `tau` is halved until the
/// forward-backward envelope decreases enough; `tau = 0` always qualifies.
#[derive(Debug, Clone)]
pub struct Panoc<T> {
    n: usize,
    fvals: Vec<T>,
    u: Vec<T>,
    grad: Vec<T>,
    u_bar: Vec<T>,
    fpr: Vec<T>,
    u_prev: Vec<T>,
    fpr_prev: Vec<T>,
    dir: Vec<T>,
    u_try: Vec<T>,
    grad_try: Vec<T>,
    u_bar_try: Vec<T>,
    fpr_try: Vec<T>,
    lbfgs: Lbfgs<T>,
}

impl<T: Real> Panoc<T> {
    pub fn new(n: usize, m: usize, memory: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            n,
            fvals: vec![T::zero(); m],
            u: z(),
            grad: z(),
            u_bar: z(),
            fpr: z(),
            u_prev: z(),
            fpr_prev: z(),
            dir: z(),
            u_try: z(),
            grad_try: z(),
            u_bar_try: z(),
            fpr_try: z(),
            lbfgs: Lbfgs::new(n.max(1), memory),
        }
    }

    /// Reallocates only when a dimension changed.
    pub fn ensure_dims(&mut self, n: usize, m: usize, memory: usize) {
        if n != self.n || m != self.fvals.len() || memory != self.lbfgs.memory() {
            *self = Self::new(n, m, memory);
        }
    }

    /// Minimizes `psi(.; c, y)` starting from `u` (projected first) and
    /// writes the result, which always lies in the box, back into `u`.
    #[allow(clippy::too_many_arguments)]
    pub fn solve<P: ParametricProblem<T> + ?Sized>(
        &mut self,
        problem: &mut P,
        c: T,
        y: &[T],
        u: &mut [T],
        eps_bar: T,
        max_iters: usize,
        deadline: Option<Instant>,
    ) -> Result<InnerResult<T>, SolverError> {
        let n = problem.n();
        self.ensure_dims(n, problem.m(), self.lbfgs.memory());
        self.lbfgs.reset();
        if n == 0 {
            return Ok(InnerResult { iterations: 0, fpr_norm: T::zero(), converged: true, deadline_hit: false });
        }

        let mut psi = PsiOracle { problem, c, y, fvals: &mut self.fvals };
        let half = T::lit(0.5);
        let gamma_l = T::lit(GAMMA_L_COEFF);

        problem_box(psi.problem).project_in_place(u);
        self.u.copy_from_slice(u);
        let mut psi_u = psi.value_grad(&self.u, &mut self.grad)?;

        // Local Lipschitz estimate from a small perturbation.
        let mut h_sq = T::zero();
        for (t, &x) in self.u_try.iter_mut().zip(&self.u) {
            let h = (T::lit(1e-6) * x.abs()).max(T::lit(1e-12));
            *t = x + h;
            h_sq = h_sq + h * h;
        }
        psi.value_grad(&self.u_try, &mut self.grad_try)?;
        let dg_sq: T = self.grad_try.iter().zip(&self.grad).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let lip = (dg_sq / h_sq).sqrt().max(T::lit(MIN_L_ESTIMATE));
        let mut gamma = gamma_l / lip;
        let mut sigma = (T::one() - gamma_l) / (T::lit(4.0) * gamma);

        forward_backward(psi.problem, &self.u, &self.grad, gamma, &mut self.u_bar, &mut self.fpr);
        let mut psi_u_bar = psi.value(&self.u_bar)?;

        let mut gamma_changed = true;
        let mut iters = 0usize;
        loop {
            // Shrink the step until the quadratic upper bound holds at u_bar.
            let mut updates = 0;
            loop {
                let fpr_sq = norm_sq(&self.fpr);
                let bound = psi_u - dot(&self.grad, &self.fpr)
                    + gamma_l / (T::lit(2.0) * gamma) * fpr_sq
                    + T::lit(LIPSCHITZ_UPDATE_EPSILON) * psi_u.abs();
                if psi_u_bar <= bound || updates >= MAX_LIPSCHITZ_UPDATES {
                    break;
                }
                gamma = gamma * half;
                sigma = sigma * T::lit(2.0);
                self.lbfgs.reset();
                gamma_changed = true;
                forward_backward(psi.problem, &self.u, &self.grad, gamma, &mut self.u_bar, &mut self.fpr);
                psi_u_bar = psi.value(&self.u_bar)?;
                updates += 1;
            }

            let fpr_norm = norm_inf(&self.fpr) / gamma;
            let deadline_hit = deadline.is_some_and(|d| Instant::now() >= d);
            if fpr_norm <= eps_bar || iters >= max_iters || deadline_hit {
                u.copy_from_slice(&self.u_bar);
                return Ok(InnerResult {
                    iterations: iters,
                    fpr_norm,
                    converged: fpr_norm <= eps_bar,
                    deadline_hit: deadline_hit && fpr_norm > eps_bar,
                });
            }

            if !gamma_changed {
                for i in 0..n {
                    self.u_try[i] = self.u[i] - self.u_prev[i];
                    self.grad_try[i] = self.fpr[i] - self.fpr_prev[i];
                }
                self.lbfgs.update(&self.u_try, &self.grad_try, norm_sq(&self.fpr).sqrt());
            }
            gamma_changed = false;

            self.dir.copy_from_slice(&self.fpr);
            self.lbfgs.apply(&mut self.dir);

            let fpr_sq = norm_sq(&self.fpr);
            let fbe = psi_u - dot(&self.grad, &self.fpr) + fpr_sq / (T::lit(2.0) * gamma);
            let target = fbe - sigma * fpr_sq;

            let mut tau = T::one();
            let mut psi_try = T::zero();
            let mut accepted = false;
            if self.lbfgs.active() > 0 {
                for _ in 0..MAX_LINESEARCH {
                    // (1 - tau) u_bar + tau (u - H r)
                    for i in 0..n {
                        let newton = self.u[i] - self.dir[i];
                        self.u_try[i] = self.u_bar[i] + tau * (newton - self.u_bar[i]);
                    }
                    psi_try = psi.value_grad(&self.u_try, &mut self.grad_try)?;
                    forward_backward(psi.problem, &self.u_try, &self.grad_try, gamma, &mut self.u_bar_try, &mut self.fpr_try);
                    let r_sq = norm_sq(&self.fpr_try);
                    let fbe_try = psi_try - dot(&self.grad_try, &self.fpr_try) + r_sq / (T::lit(2.0) * gamma);
                    if fbe_try <= target {
                        accepted = true;
                        break;
                    }
                    tau = tau * half;
                }
            }
            if !accepted {
                self.u_try.copy_from_slice(&self.u_bar);
                psi_try = psi.value_grad(&self.u_try, &mut self.grad_try)?;
                forward_backward(psi.problem, &self.u_try, &self.grad_try, gamma, &mut self.u_bar_try, &mut self.fpr_try);
            }
            let psi_bar_try = psi.value(&self.u_bar_try)?;

            std::mem::swap(&mut self.u_prev, &mut self.u);
            std::mem::swap(&mut self.fpr_prev, &mut self.fpr);
            std::mem::swap(&mut self.u, &mut self.u_try);
            std::mem::swap(&mut self.grad, &mut self.grad_try);
            std::mem::swap(&mut self.u_bar, &mut self.u_bar_try);
            std::mem::swap(&mut self.fpr, &mut self.fpr_try);
            psi_u = psi_try;
            psi_u_bar = psi_bar_try;
            iters += 1;
        }
    }
}

fn problem_box<T: Real, P: ParametricProblem<T> + ?Sized>(p: &P) -> &super::BoxSet<T> {
    p.bounds()
}

/// `u_bar = proj(u - gamma g)`, `fpr = u - u_bar`.
fn forward_backward<T: Real, P: ParametricProblem<T> + ?Sized>(
    problem: &P,
    u: &[T],
    grad: &[T],
    gamma: T,
    u_bar: &mut [T],
    fpr: &mut [T],
) {
    for i in 0..u.len() {
        u_bar[i] = u[i] - gamma * grad[i];
    }
    problem.bounds().project_in_place(u_bar);
    for i in 0..u.len() {
        fpr[i] = u[i] - u_bar[i];
    }
}

struct PsiOracle<'a, T, P: ?Sized> {
    problem: &'a mut P,
    c: T,
    y: &'a [T],
    fvals: &'a mut [T],
}

impl<T: Real, P: ParametricProblem<T> + ?Sized> PsiOracle<'_, T, P> {
    fn value(&mut self, u: &[T]) -> Result<T, SolverError> {
        let f = self.problem.cost_and_cmap(u, self.fvals);
        let v = f + penalty_term(self.fvals, self.c, self.y);
        // max() in the penalty swallows NaN, so check the constraint values directly.
        if v.is_finite() && all_finite(self.fvals) {
            Ok(v)
        } else {
            Err(SolverError::NonFiniteOracle)
        }
    }

    fn value_grad(&mut self, u: &[T], grad: &mut [T]) -> Result<T, SolverError> {
        let v = self.value(u)?;
        shifted_weights_in_place(self.fvals, self.c, self.y);
        self.problem.grad_plus_jtv(u, self.fvals, grad);
        if all_finite(grad) {
            Ok(v)
        } else {
            Err(SolverError::NonFiniteOracle)
        }
    }
}

/// One-shot PANOC solve of `min psi(u; c, y)` over the box from `u0`.
pub fn panoc_solve<T: Real, P: ParametricProblem<T> + ?Sized>(
    problem: &mut P,
    c: T,
    y: &[T],
    u0: &[T],
    eps_bar: T,
    max_iters: usize,
    deadline: Option<Instant>,
) -> Result<(Vec<T>, InnerResult<T>), SolverError> {
    let mut panoc = Panoc::new(problem.n(), problem.m(), 10);
    let mut u = u0.to_vec();
    let res = panoc.solve(problem, c, y, &mut u, eps_bar, max_iters, deadline)?;
    Ok((u, res))
}
