//! Per-agent NMPC in single-shooting form.
//!
//! The decision variable is the input plan over the horizon; states are
//! eliminated by rolling the prediction model forward from the estimate.
//! Obstacles enter as spherical keep-out constraints at steps `1..=N`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ValidationError};
use crate::model::{Input, ModelParams, State, NU};
use crate::scalar::Real;
use crate::solver::{AlmSettings, AlmSolver, BoxSet, ParametricProblem, SolveStatus, SolverError, SolverOutcome};

mod cost;

pub use cost::{
    adapt_weights, constraint_map, cost_gradient, flatten, stage_cost, terminal_cost, total_cost, unflatten,
};
use cost::{adjoint_gradient, constraints_of_rollout, cost_of_rollout, rollout_flat};

/// Depth below the arena where unused obstacle slots are parked.
pub const INACTIVE_DEPTH: f64 = 1e3;

/// Diagonal cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Weights<T> {
    /// State weights; the first three entries are replaced by the adaptive `Q_p`.
    pub q_x: [T; 8],
    pub q_u: [T; 3],
    pub q_du: [T; 3],
    pub q_t: [T; 8],
    pub q_p_min: [T; 3],
    pub q_p_max: [T; 3],
    /// Scale of the multiplier sum in the adaptive position weight.
    pub b: T,
}

impl<T: Real> Default for Weights<T> {
    fn default() -> Self {
        let arr8 = |a: [f64; 8]| a.map(T::lit);
        let arr3 = |a: [f64; 3]| a.map(T::lit);
        Self {
            q_x: arr8([6.0, 6.0, 45.0, 6.0, 6.0, 6.0, 8.0, 8.0]),
            q_u: arr3([5.0, 10.0, 10.0]),
            q_du: arr3([10.0, 20.0, 20.0]),
            q_t: arr8([40.0, 40.0, 150.0, 20.0, 20.0, 20.0, 30.0, 30.0]),
            q_p_min: arr3([1.0, 1.0, 15.0]),
            q_p_max: arr3([6.0, 6.0, 45.0]),
            b: T::lit(0.01),
        }
    }
}

impl<T: Real> Weights<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let pos = |a: &[T]| a.iter().all(|&x| x > T::zero() && x.is_finite());
        ensure(pos(&self.q_x), "weights.q_x", "must be positive")?;
        ensure(pos(&self.q_u), "weights.q_u", "must be positive")?;
        ensure(pos(&self.q_du), "weights.q_du", "must be positive")?;
        ensure(pos(&self.q_t), "weights.q_t", "must be positive")?;
        ensure(pos(&self.q_p_min), "weights.q_p_min", "must be positive")?;
        ensure(pos(&self.q_p_max), "weights.q_p_max", "must be positive")?;
        ensure(
            self.q_p_min.iter().zip(&self.q_p_max).all(|(a, b)| a <= b),
            "weights.q_p_min",
            "must not exceed q_p_max",
        )?;
        ensure(self.b > T::zero() && self.b.is_finite(), "weights.b", "must be positive")
    }

    /// Copy with the position block of `q_x` set to `q_p`.
    pub fn with_position_weights(&self, q_p: [T; 3]) -> Self {
        let mut w = *self;
        w.q_x[..3].copy_from_slice(&q_p);
        w
    }

    pub fn cast<S: Real>(&self) -> Weights<S> {
        let c = |x: T| S::lit(x.as_f64());
        Weights {
            q_x: self.q_x.map(c),
            q_u: self.q_u.map(c),
            q_du: self.q_du.map(c),
            q_t: self.q_t.map(c),
            q_p_min: self.q_p_min.map(c),
            q_p_max: self.q_p_max.map(c),
            b: c(self.b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint<T> {
    pub x_ref: State<T>,
    pub u_ref: Input<T>,
}

impl<T: Real> Setpoint<T> {
    /// Rest at `p` with hover thrust as the input reference.
    pub fn hover_at(p: [T; 3], params: &ModelParams<T>) -> Self {
        Self { x_ref: State::at_rest(p), u_ref: Input::hover(params) }
    }
}

/// Predicted centers of one obstacle for steps `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack<T> {
    /// Agent the track belongs to; `None` for padding.
    pub source: Option<usize>,
    pub centers: Vec<[T; 3]>,
    pub radius: T,
    pub active: bool,
}

impl<T: Real> ObstacleTrack<T> {
    /// Unused slot: parked far below the arena with zero radius.
    pub fn inactive(horizon: usize) -> Self {
        let c = [T::zero(), T::zero(), -T::lit(INACTIVE_DEPTH)];
        Self { source: None, centers: vec![c; horizon + 1], radius: T::zero(), active: false }
    }

    pub fn fixed(source: Option<usize>, center: [T; 3], radius: T, horizon: usize) -> Self {
        Self { source, centers: vec![center; horizon + 1], radius, active: true }
    }
}

/// The fixed number of obstacle tracks handed to one NMPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSet<T> {
    pub tracks: Vec<ObstacleTrack<T>>,
}

impl<T: Real> ObstacleSet<T> {
    pub fn empty(n_obs: usize, horizon: usize) -> Self {
        Self { tracks: (0..n_obs).map(|_| ObstacleTrack::inactive(horizon)).collect() }
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn sources(&self) -> Vec<Option<usize>> {
        self.tracks.iter().map(|t| t.source).collect()
    }
}

/// Everything the controller needs besides the per-tick data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ControllerConfig<T> {
    pub model: ModelParams<T>,
    pub weights: Weights<T>,
    pub solver: AlmSettings<T>,
    pub u_min: [T; 3],
    pub u_max: [T; 3],
    pub n_obs: usize,
}

impl<T: Real> Default for ControllerConfig<T> {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            weights: Weights::default(),
            solver: AlmSettings::default(),
            u_min: [5.0, -0.25, -0.25].map(T::lit),
            u_max: [12.5, 0.25, 0.25].map(T::lit),
            n_obs: 3,
        }
    }
}

impl<T: Real> ControllerConfig<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.model.validate()?;
        self.weights.validate()?;
        self.solver.validate()?;
        ensure(
            self.u_min.iter().zip(&self.u_max).all(|(a, b)| a <= b),
            "controller.u_min",
            "must not exceed u_max",
        )?;
        ensure(self.u_min[0] >= T::zero(), "controller.u_min", "thrust bound must be non-negative")?;
        ensure(self.n_obs >= 1, "controller.n_obs", "must be at least 1")
    }

    pub fn input_box(&self) -> BoxSet<T> {
        BoxSet::tiled(&self.u_min, &self.u_max, self.model.horizon)
    }

    pub fn cast<S: Real>(&self) -> ControllerConfig<S> {
        let c = |x: T| S::lit(x.as_f64());
        ControllerConfig {
            model: self.model.cast(),
            weights: self.weights.cast(),
            solver: self.solver.cast(),
            u_min: self.u_min.map(c),
            u_max: self.u_max.map(c),
            n_obs: self.n_obs,
        }
    }
}

/// Solver diagnostics kept with each plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary<T> {
    pub status: SolveStatus,
    pub fpr_norm: T,
    pub infeasibility: T,
    pub multiplier_norm: T,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_iters_per_outer: Vec<usize>,
    pub solve_time: f64,
    pub penalty_final: T,
}

impl<T: Real> From<&SolverOutcome<T>> for SolveSummary<T> {
    fn from(o: &SolverOutcome<T>) -> Self {
        Self {
            status: o.status,
            fpr_norm: o.fpr_norm,
            infeasibility: o.infeasibility,
            multiplier_norm: o.multiplier_norm(),
            outer_iters: o.outer_iters,
            inner_iters: o.inner_iters_total,
            inner_iters_per_outer: o.inner_iters_per_outer.clone(),
            solve_time: o.solve_time,
            penalty_final: o.penalty_final,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution<T> {
    pub u_seq: Vec<Input<T>>,
    /// `rollout(x_hat, u_seq)`, `N + 1` states.
    pub predicted_states: Vec<State<T>>,
    pub y_star: Vec<T>,
    pub summary: SolveSummary<T>,
    /// The solver failed and the shifted previous plan was reused.
    pub fallback: bool,
}

impl<T: Real> NmpcSolution<T> {
    /// Input to apply now.
    pub fn first_input(&self) -> Input<T> {
        self.u_seq[0]
    }
}

/// Single-shooting NMPC problem for one agent at one tick.
pub struct NmpcProblem<'a, T> {
    pub x_hat: State<T>,
    pub u_prev: Input<T>,
    pub setpoint: &'a Setpoint<T>,
    /// Weights with the adaptive position block already applied.
    pub weights: Weights<T>,
    pub obstacles: &'a ObstacleSet<T>,
    pub params: &'a ModelParams<T>,
    pub bounds: &'a BoxSet<T>,
    states: Vec<State<T>>,
    cached_u: Vec<T>,
    cache_valid: bool,
}

impl<'a, T: Real> NmpcProblem<'a, T> {
    pub fn new(
        x_hat: State<T>,
        u_prev: Input<T>,
        setpoint: &'a Setpoint<T>,
        weights: Weights<T>,
        obstacles: &'a ObstacleSet<T>,
        params: &'a ModelParams<T>,
        bounds: &'a BoxSet<T>,
    ) -> Self {
        let n = params.horizon;
        Self {
            x_hat,
            u_prev,
            setpoint,
            weights,
            obstacles,
            params,
            bounds,
            states: Vec::with_capacity(n + 1),
            cached_u: vec![T::zero(); NU * n],
            cache_valid: false,
        }
    }

    fn ensure_rollout(&mut self, u: &[T]) {
        if !(self.cache_valid && self.cached_u == u) {
            rollout_flat(&self.x_hat, u, self.params, &mut self.states);
            self.cached_u.copy_from_slice(u);
            self.cache_valid = true;
        }
    }
}

impl<T: Real> ParametricProblem<T> for NmpcProblem<'_, T> {
    fn n(&self) -> usize {
        NU * self.params.horizon
    }

    fn m(&self) -> usize {
        self.params.horizon * self.obstacles.len()
    }

    fn bounds(&self) -> &BoxSet<T> {
        self.bounds
    }

    fn cost(&mut self, u: &[T]) -> T {
        self.ensure_rollout(u);
        cost_of_rollout(&self.states, u, &self.u_prev, self.setpoint, &self.weights)
    }

    fn cost_grad(&mut self, u: &[T], grad: &mut [T]) {
        self.ensure_rollout(u);
        adjoint_gradient(&self.states, u, &self.u_prev, self.setpoint, &self.weights, self.params, None, grad);
    }

    fn cmap(&mut self, u: &[T], out: &mut [T]) {
        self.ensure_rollout(u);
        constraints_of_rollout(&self.states, self.obstacles, out);
    }

    /// Adjoint pass seeded only by the constraint weights (cost weights zeroed).
    fn cmap_jtv(&mut self, u: &[T], w: &[T], out: &mut [T]) {
        self.ensure_rollout(u);
        let zero = Weights {
            q_x: [T::zero(); 8],
            q_u: [T::zero(); 3],
            q_du: [T::zero(); 3],
            q_t: [T::zero(); 8],
            ..self.weights
        };
        adjoint_gradient(&self.states, u, &self.u_prev, self.setpoint, &zero, self.params, Some((self.obstacles, w)), out);
    }

    fn grad_plus_jtv(&mut self, u: &[T], w: &[T], out: &mut [T]) {
        self.ensure_rollout(u);
        adjoint_gradient(
            &self.states,
            u,
            &self.u_prev,
            self.setpoint,
            &self.weights,
            self.params,
            Some((self.obstacles, w)),
            out,
        );
    }
}

/// One agent's NMPC controller: configuration, solver workspace, and the
/// adaptive position weight carried between ticks.
#[derive(Debug, Clone)]
pub struct Controller<T> {
    pub config: ControllerConfig<T>,
    bounds: BoxSet<T>,
    solver: AlmSolver<T>,
    q_p: [T; 3],
}

impl<T: Real> Controller<T> {
    pub fn new(config: ControllerConfig<T>) -> Result<Self, ValidationError> {
        config.validate()?;
        let n = NU * config.model.horizon;
        let m = config.model.horizon * config.n_obs;
        Ok(Self {
            bounds: config.input_box(),
            solver: AlmSolver::new(n, m, config.solver.lbfgs_memory),
            q_p: config.weights.q_p_max,
            config,
        })
    }

    /// Position weights that the next solve will use.
    pub fn position_weights(&self) -> [T; 3] {
        self.q_p
    }

    fn clamp_input(&self, u: Input<T>) -> Input<T> {
        let a = u.to_array();
        Input::from_array(std::array::from_fn(|k| a[k].max(self.config.u_min[k]).min(self.config.u_max[k])))
    }

    /// Warm start: previous plan shifted one step with the last input repeated,
    /// multipliers shifted the same way within each obstacle block.
    fn initial_guess(&self, setpoint: &Setpoint<T>, warm: Option<&NmpcSolution<T>>) -> (Vec<T>, Vec<T>) {
        let n = self.config.model.horizon;
        let m = n * self.config.n_obs;
        match warm {
            Some(prev) if prev.u_seq.len() == n && prev.y_star.len() == m => {
                let mut u = Vec::with_capacity(NU * n);
                for j in 0..n {
                    let src = prev.u_seq[(j + 1).min(n - 1)];
                    u.extend_from_slice(&self.clamp_input(src).to_array());
                }
                let mut y = vec![T::zero(); m];
                for (blk, prev_blk) in y.chunks_exact_mut(n).zip(prev.y_star.chunks_exact(n)) {
                    for j in 0..n {
                        blk[j] = prev_blk[(j + 1).min(n - 1)];
                    }
                }
                (u, y)
            }
            _ => {
                let u_ref = self.clamp_input(setpoint.u_ref).to_array();
                (u_ref.repeat(n), vec![T::zero(); m])
            }
        }
    }

    /// Solves the NMPC problem for this tick.
    ///
    /// The first input of the returned plan is the command to apply; the whole
    /// plan is what the agent broadcasts. Non-converged solves still return
    /// the solver's last iterate. If an oracle produces non-finite values the
    /// shifted warm-start plan is returned with `fallback` set.
    pub fn solve_step(
        &mut self,
        x_hat: &State<T>,
        u_prev: &Input<T>,
        setpoint: &Setpoint<T>,
        obstacles: &ObstacleSet<T>,
        warm: Option<&NmpcSolution<T>>,
    ) -> NmpcSolution<T> {
        assert_eq!(obstacles.len(), self.config.n_obs, "obstacle slot count");
        let params = self.config.model;
        let (u0, y0) = self.initial_guess(setpoint, warm);
        let weights = self.config.weights.with_position_weights(self.q_p);
        let mut problem = NmpcProblem::new(*x_hat, *u_prev, setpoint, weights, obstacles, &params, &self.bounds);

        match self.solver.solve(&mut problem, &u0, &y0, &self.config.solver) {
            Ok(outcome) => {
                self.q_p = adapt_weights(&outcome.y_star, &self.config.weights, params.horizon);
                let u_seq = unflatten(&outcome.u_star);
                let predicted_states = crate::model::rollout(x_hat, &u_seq, &params);
                NmpcSolution {
                    u_seq,
                    predicted_states,
                    summary: SolveSummary::from(&outcome),
                    y_star: outcome.y_star,
                    fallback: false,
                }
            }
            Err(SolverError::NonFiniteOracle) => {
                let u_seq = unflatten(&u0);
                let predicted_states = crate::model::rollout(x_hat, &u_seq, &params);
                NmpcSolution {
                    u_seq,
                    predicted_states,
                    summary: SolveSummary {
                        status: SolveStatus::MaxOuterIterations,
                        fpr_norm: T::nan(),
                        infeasibility: T::nan(),
                        multiplier_norm: T::zero(),
                        outer_iters: 0,
                        inner_iters: 0,
                        inner_iters_per_outer: Vec::new(),
                        solve_time: 0.0,
                        penalty_final: self.config.solver.c0,
                    },
                    y_star: y0,
                    fallback: true,
                }
            }
        }
    }
}
