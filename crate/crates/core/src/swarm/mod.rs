//! Deterministic multi-agent runtime.
//!
//! Each tick every agent estimates its state, reads the plans the others
//! broadcast on the previous tick, picks its obstacles, and solves its NMPC
//! problem. Solves run in parallel and only read the previous-tick snapshot,
//! so the result does not depend on scheduling. The plant is integrated with
//! RK4 at a finer step than the controller's Euler prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Controller, ControllerConfig, NmpcSolution, ObstacleSet, Setpoint};
use crate::error::{ensure, ValidationError};
use crate::model::{continuous_dynamics, Input, ModelParams, State, NX};
use crate::priority::{predict_track, priority_weights, select_obstacles, PredictedTrack, PriorityParams, SharedTrajectory};
use crate::scalar::Real;

pub mod estimator;
pub mod log;
pub mod noncoop;

pub use estimator::{estimate_velocity, Estimator, EstimatorConfig};
pub use log::{AgentTick, NonCoopTick, RunLog, Separation, TickRecord};
pub use noncoop::NonCooperativeAgent;
pub use crate::priority::constant_velocity_predict;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(#[from] ValidationError),
}

/// A position reached at (or held from) time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint<T> {
    pub t: T,
    pub p: [T; 3],
}

/// A cooperative agent: start position and setpoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct AgentSpec<T> {
    pub id: usize,
    pub start: [T; 3],
    /// Targets switched on at their times; the start position is held before the first.
    #[serde(default)]
    pub schedule: Vec<Waypoint<T>>,
}

impl<T: Real> AgentSpec<T> {
    pub fn target_at(&self, t: T) -> [T; 3] {
        self.schedule.iter().take_while(|w| w.t <= t).last().map_or(self.start, |w| w.p)
    }

    /// The last scheduled target.
    pub fn final_target(&self) -> [T; 3] {
        self.schedule.last().map_or(self.start, |w| w.p)
    }
}

/// Plant integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    /// Same scheme as the prediction model.
    Euler,
}

/// Simulation parameters shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SimSettings<T> {
    pub controller: ControllerConfig<T>,
    /// `n_obs` and `horizon` are taken from the controller configuration.
    pub priority: PriorityParams<T>,
    pub estimator: EstimatorConfig<T>,
    /// Plant integration step, s; must divide the control period.
    pub plant_dt: T,
    pub integrator: Integrator,
    /// Keep-out radius every agent advertises, m.
    pub radius: T,
    pub seed: u64,
    pub budget_clock: BudgetClock,
    /// Assumed cost of one inner iteration when the budget is counted in
    /// work, s.
    pub nominal_iteration_time: T,
}

/// How the per-solve time budget is enforced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetClock {
    /// The budget becomes an allowance of `time_budget / nominal_iteration_time`
    /// inner iterations. Runs are reproducible.
    #[default]
    Work,
    /// The wall clock, as on a vehicle. Outcomes depend on machine load.
    Wall,
}

impl<T: Real> Default for SimSettings<T> {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            priority: PriorityParams::default(),
            estimator: EstimatorConfig::default(),
            plant_dt: T::lit(0.005),
            integrator: Integrator::Rk4,
            radius: T::lit(0.4),
            seed: 0,
            budget_clock: BudgetClock::Work,
            nominal_iteration_time: T::lit(25e-6),
        }
    }
}

impl<T: Real> SimSettings<T> {
    pub fn control_dt(&self) -> T {
        self.controller.model.dt
    }

    /// Plant substeps per control period.
    pub fn substeps(&self) -> usize {
        (self.control_dt() / self.plant_dt).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.controller.validate()?;
        self.priority_params().validate()?;
        self.estimator.validate()?;
        ensure(self.plant_dt > T::zero() && self.plant_dt.is_finite(), "plant_dt", "must be positive")?;
        let ratio = self.control_dt() / self.plant_dt;
        ensure(
            ratio >= T::one() && (ratio - ratio.round()).abs() < T::lit(1e-6),
            "plant_dt",
            "control period must be an integer multiple of plant_dt",
        )?;
        ensure(self.radius > T::zero() && self.radius.is_finite(), "radius", "must be positive")?;
        ensure(
            self.nominal_iteration_time > T::zero() && self.nominal_iteration_time.is_finite(),
            "nominal_iteration_time",
            "must be positive",
        )
    }

    /// Controller configuration with the budget expressed per `budget_clock`.
    pub fn agent_controller(&self) -> ControllerConfig<T> {
        let mut config = self.controller;
        if self.budget_clock == BudgetClock::Work && config.solver.time_budget > T::zero() {
            let allowance = (config.solver.time_budget / self.nominal_iteration_time).ceil().to_usize().unwrap_or(usize::MAX);
            config.solver.iteration_budget = match config.solver.iteration_budget {
                0 => allowance,
                b => b.min(allowance),
            };
            config.solver.time_budget = T::zero();
        }
        config
    }

    pub fn priority_params(&self) -> PriorityParams<T> {
        PriorityParams { n_obs: self.controller.n_obs, horizon: self.controller.model.horizon, ..self.priority }
    }
}

/// One RK4 step of the continuous dynamics with the input held.
pub fn rk4_step<T: Real>(x: &State<T>, u: &Input<T>, params: &ModelParams<T>, h: T) -> State<T> {
    let add = |a: &State<T>, k: &[T; NX], s: T| {
        let av = a.to_array();
        State::from_array(std::array::from_fn(|i| av[i] + s * k[i]))
    };
    let half = h * T::lit(0.5);
    let k1 = continuous_dynamics(x, u, params);
    let k2 = continuous_dynamics(&add(x, &k1, half), u, params);
    let k3 = continuous_dynamics(&add(x, &k2, half), u, params);
    let k4 = continuous_dynamics(&add(x, &k3, h), u, params);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let xv = x.to_array();
    State::from_array(std::array::from_fn(|i| xv[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i])))
}

/// Explicit Euler step of length `h`.
pub fn euler_step<T: Real>(x: &State<T>, u: &Input<T>, params: &ModelParams<T>, h: T) -> State<T> {
    let f = continuous_dynamics(x, u, params);
    let xv = x.to_array();
    State::from_array(std::array::from_fn(|i| xv[i] + h * f[i]))
}

#[derive(Debug, Clone)]
struct Agent<T> {
    spec: AgentSpec<T>,
    truth: State<T>,
    controller: Controller<T>,
    estimator: Estimator<T>,
    plan: Option<NmpcSolution<T>>,
    applied: Input<T>,
}

/// The whole swarm between ticks.
#[derive(Debug, Clone)]
pub struct SimWorld<T> {
    settings: SimSettings<T>,
    agents: Vec<Agent<T>>,
    noncoop: Vec<NonCooperativeAgent<T>>,
    /// Latest broadcast per agent, indexed like `agents`.
    bus: Vec<Option<SharedTrajectory<T>>>,
    tick: u64,
    rng: ChaCha8Rng,
}

impl<T: Real> SimWorld<T> {
    pub fn new(
        settings: SimSettings<T>,
        agents: Vec<AgentSpec<T>>,
        noncoop: Vec<NonCooperativeAgent<T>>,
    ) -> Result<Self, SimError> {
        settings.validate()?;
        validate_population(&settings, &agents, &noncoop)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let noise = normal(settings.estimator.noise_std);
        let hover = Input::hover(&settings.controller.model);
        let agents = agents
            .into_iter()
            .map(|spec| {
                let mut estimator = Estimator::new(settings.estimator, settings.plant_dt);
                for _ in 0..=settings.estimator.window {
                    estimator.push(noisy(spec.start, noise.as_ref(), &mut rng));
                }
                Ok(Agent {
                    truth: State::at_rest(spec.start),
                    controller: Controller::new(settings.agent_controller())?,
                    estimator,
                    plan: None,
                    applied: hover,
                    spec,
                })
            })
            .collect::<Result<Vec<_>, ValidationError>>()?;
        let bus = vec![None; agents.len()];
        Ok(Self { settings, agents, noncoop, bus, tick: 0, rng })
    }

    pub fn settings(&self) -> &SimSettings<T> {
        &self.settings
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> T {
        T::from_u64(self.tick).unwrap() * self.settings.control_dt()
    }

    pub fn true_states(&self) -> Vec<State<T>> {
        self.agents.iter().map(|a| a.truth).collect()
    }

    pub fn agent_ids(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.spec.id).collect()
    }

    pub fn specs(&self) -> Vec<&AgentSpec<T>> {
        self.agents.iter().map(|a| &a.spec).collect()
    }

    /// Snapshot of the current state without solving.
    pub fn observe(&self) -> TickRecord<T> {
        TickRecord {
            tick: self.tick,
            time: self.time(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTick {
                    id: a.spec.id,
                    state: a.truth,
                    input: None,
                    solve: None,
                    fallback: false,
                    selected: Vec::new(),
                })
                .collect(),
            noncoop: self.noncoop_ticks(),
        }
    }

    fn noncoop_ticks(&self) -> Vec<NonCoopTick<T>> {
        let t = self.time();
        self.noncoop
            .iter()
            .map(|n| {
                let (p, v) = n.state_at(t);
                NonCoopTick { id: n.id, p, v }
            })
            .collect()
    }

    /// Obstacle sets for every agent from the current estimates and the
    /// previous tick's broadcasts.
    fn prioritize(&self, estimates: &[State<T>]) -> Vec<ObstacleSet<T>> {
        let params = self.settings.controller.model;
        let pp = self.settings.priority_params();
        let (n, dt, r) = (params.horizon, params.dt, self.settings.radius);

        let tracks: Vec<PredictedTrack<T>> = self
            .agents
            .iter()
            .zip(estimates)
            .zip(&self.bus)
            .map(|((a, x), entry)| {
                entry
                    .as_ref()
                    .and_then(|sh| {
                        let shared = SharedTrajectory { measured_state: *x, ..sh.clone() };
                        predict_track(&shared, &params, self.tick).ok()
                    })
                    .unwrap_or_else(|| PredictedTrack::constant_velocity(a.spec.id, x.p, x.v, r, n, dt))
            })
            .collect();
        let t = self.time();
        let scripted: Vec<PredictedTrack<T>> = self
            .noncoop
            .iter()
            .map(|nc| {
                let (p, v) = nc.state_at(t);
                PredictedTrack::constant_velocity(nc.id, p, v, nc.radius, n, dt)
            })
            .collect();

        (0..self.agents.len())
            .into_par_iter()
            .map(|i| {
                let others: Vec<PredictedTrack<T>> = tracks
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, tr)| tr.clone())
                    .chain(scripted.iter().cloned())
                    .collect();
                let w = priority_weights(&tracks[i].positions, &others, &pp);
                select_obstacles(&w, &others, &pp)
            })
            .collect()
    }

    /// Advances one control period and returns the record of the tick
    /// (states at its start, the inputs applied during it).
    pub fn step(&mut self) -> TickRecord<T> {
        let time = self.time();
        let tick = self.tick;
        let estimates: Vec<State<T>> =
            self.agents.iter().map(|a| a.estimator.estimate(a.truth.phi, a.truth.theta)).collect();
        let sets = self.prioritize(&estimates);
        let noncoop = self.noncoop_ticks();

        self.agents.par_iter_mut().zip(estimates.par_iter()).zip(sets.par_iter()).for_each(|((agent, x_hat), obs)| {
            let setpoint = Setpoint::hover_at(agent.spec.target_at(time), &agent.controller.config.model);
            let sol = agent.controller.solve_step(x_hat, &agent.applied, &setpoint, obs, agent.plan.as_ref());
            agent.applied = sol.first_input();
            agent.plan = Some(sol);
        });

        let record = TickRecord {
            tick,
            time,
            agents: self
                .agents
                .iter()
                .zip(&sets)
                .map(|(a, obs)| {
                    let plan = a.plan.as_ref().expect("solved this tick");
                    AgentTick {
                        id: a.spec.id,
                        state: a.truth,
                        input: Some(a.applied),
                        solve: Some(plan.summary.clone()),
                        fallback: plan.fallback,
                        selected: obs.sources(),
                    }
                })
                .collect(),
            noncoop,
        };

        self.integrate();
        self.bus = self
            .agents
            .iter()
            .map(|a| {
                a.plan.as_ref().map(|p| SharedTrajectory {
                    agent_id: a.spec.id,
                    measured_state: p.predicted_states[0],
                    input_seq: p.u_seq.clone(),
                    radius: self.settings.radius,
                    stamp: tick,
                })
            })
            .collect();
        self.tick += 1;
        record
    }

    fn integrate(&mut self) {
        let params = self.settings.controller.model;
        let h = self.settings.plant_dt;
        let noise = normal(self.settings.estimator.noise_std);
        for _ in 0..self.settings.substeps() {
            for agent in &mut self.agents {
                agent.truth = match self.settings.integrator {
                    Integrator::Rk4 => rk4_step(&agent.truth, &agent.applied, &params, h),
                    Integrator::Euler => euler_step(&agent.truth, &agent.applied, &params, h),
                };
                let sample = noisy(agent.truth.p, noise.as_ref(), &mut self.rng);
                agent.estimator.push(sample);
            }
        }
    }

    /// Runs `ticks` control periods and appends the final state.
    pub fn run(&mut self, ticks: u64) -> RunLog<T> {
        let mut records = Vec::with_capacity(ticks as usize + 1);
        for _ in 0..ticks {
            records.push(self.step());
        }
        records.push(self.observe());
        RunLog {
            control_dt: self.settings.control_dt(),
            budget: self.settings.controller.solver.time_budget.as_f64(),
            records,
        }
    }
}

fn normal<T: Real>(std: T) -> Option<Normal<f64>> {
    (std > T::zero()).then(|| Normal::new(0.0, std.as_f64()).expect("finite non-negative std"))
}

fn noisy<T: Real>(p: [T; 3], noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> [T; 3] {
    match noise {
        Some(n) => p.map(|x| x + T::lit(n.sample(rng))),
        None => p,
    }
}

fn validate_population<T: Real>(
    settings: &SimSettings<T>,
    agents: &[AgentSpec<T>],
    noncoop: &[NonCooperativeAgent<T>],
) -> Result<(), ValidationError> {
    ensure(!agents.is_empty(), "agents", "at least one cooperative agent is required")?;
    let mut ids: Vec<usize> = agents.iter().map(|a| a.id).chain(noncoop.iter().map(|n| n.id)).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(ValidationError::new("agents.id", format!("duplicate id {}", w[0])));
    }
    for a in agents {
        let field = format!("agents[{}]", a.id);
        ensure(a.start.iter().all(|x| x.is_finite()), &format!("{field}.start"), "must be finite")?;
        ensure(
            a.schedule.windows(2).all(|w| w[1].t >= w[0].t),
            &format!("{field}.schedule"),
            "times must be non-decreasing",
        )?;
        ensure(
            a.schedule.iter().all(|w| w.t >= T::zero() && w.t.is_finite() && w.p.iter().all(|x| x.is_finite())),
            &format!("{field}.schedule"),
            "waypoints must be finite with non-negative times",
        )?;
    }
    for n in noncoop {
        n.validate()?;
    }
    let r_max = noncoop.iter().map(|n| n.radius).fold(settings.radius, T::max);
    let starts: Vec<(usize, [T; 3])> = agents
        .iter()
        .map(|a| (a.id, a.start))
        .chain(noncoop.iter().map(|n| (n.id, n.state_at(T::zero()).0)))
        .collect();
    for (i, (ia, pa)) in starts.iter().enumerate() {
        for (ib, pb) in &starts[i + 1..] {
            let d = (0..3).map(|k| (pa[k] - pb[k]).powi(2)).sum::<T>().sqrt();
            if d < r_max {
                return Err(ValidationError::new(
                    "agents.start",
                    format!("agents {ia} and {ib} start {:.3} m apart, closer than {:.3} m", d.as_f64(), r_max.as_f64()),
                ));
            }
        }
    }
    Ok(())
}

/// Builds a world and runs it for `duration` seconds.
pub fn simulate<T: Real>(
    settings: SimSettings<T>,
    agents: Vec<AgentSpec<T>>,
    noncoop: Vec<NonCooperativeAgent<T>>,
    duration: T,
) -> Result<RunLog<T>, SimError> {
    ensure(duration >= T::zero() && duration.is_finite(), "duration", "must be non-negative")?;
    let ticks = (duration / settings.control_dt()).round().to_u64().unwrap_or(0);
    let mut world = SimWorld::new(settings, agents, noncoop)?;
    Ok(world.run(ticks))
}
