//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the
//! criteria execute one after another and the timing checks see an idle machine.

use std::cell::Cell;
use std::cmp::Ordering;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarm_nmpc::controller::{
    adapt_weights, cost_gradient, total_cost, unflatten, Controller, ControllerConfig, NmpcProblem,
    ObstacleSet, ObstacleTrack, Setpoint, Weights,
};
use swarm_nmpc::model::{rollout, Input, ModelParams, State};
use swarm_nmpc::priority::{priority_weights, select_obstacles, PredictedTrack, PriorityParams};
use swarm_nmpc::scenario::{
    builtin, builtin_names, run_scenario, write_run, RunSummary, ScenarioConfig, CONFIG_FILE, SELECTIONS_FILE,
    TRAJECTORY_FILE,
};
use swarm_nmpc::solver::{alm_solve, psi_grad, psi_value, AlmSettings, BoxSet, ParametricProblem, SolveStatus};
use swarm_nmpc::swarm::{AgentSpec, Waypoint};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn central_difference(u: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = u.to_vec();
    (0..u.len())
        .map(|i| {
            let h = 1e-6 * u[i].abs().max(1.0);
            x[i] = u[i] + h;
            let up = f(&x);
            x[i] = u[i] - h;
            let down = f(&x);
            x[i] = u[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm_inf(&diff) / norm_inf(numeric).max(1e-12)
}

/// Gradients against central differences, horizon 10 with two moving obstacles.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let params = ModelParams::<f64> { horizon: 10, ..ModelParams::default() };
    let config = ControllerConfig::<f64> { model: params, n_obs: 2, ..ControllerConfig::default() };
    let bounds = config.input_box();
    let weights = Weights::<f64>::default();
    let worst = Cell::new(0.0f64);
    let strategy = (
        prop::collection::vec(-1.0..1.0f64, 8),
        prop::collection::vec(0.0..1.0f64, 30),
        prop::collection::vec(-1.0..1.0f64, 3),
        prop::collection::vec(-0.35..0.35f64, 2 * 11 * 3),
        prop::collection::vec(0.0..50.0f64, 20),
        1.0..4.0f64,
    );
    let result = runner(100).run(&strategy, |(x, frac, target, offsets, y, log_c)| {
        let x_hat = State { p: [x[0], x[1], 1.0 + x[2]], v: [x[3], x[4], x[5]], phi: 0.2 * x[6], theta: 0.2 * x[7] };
        let u: Vec<f64> = frac
            .iter()
            .enumerate()
            .map(|(i, f)| config.u_min[i % 3] + f * (config.u_max[i % 3] - config.u_min[i % 3]))
            .collect();
        let u_prev = Input::new(9.0, 0.05, -0.05);
        let setpoint = Setpoint::hover_at([target[0], target[1], 1.0 + target[2]], &params);
        // Obstacles hug the ego rollout so a share of the constraints is active.
        let ego = rollout(&x_hat, &unflatten(&u), &params);
        let tracks = (0..2)
            .map(|i| ObstacleTrack {
                source: Some(i),
                centers: (0..=10)
                    .map(|j| std::array::from_fn(|k| ego[j].p[k] + offsets[(i * 11 + j) * 3 + k]))
                    .collect(),
                radius: 0.4,
                active: true,
            })
            .collect();
        let obstacles = ObstacleSet { tracks };
        let c = 10f64.powf(log_c);

        let seq = unflatten(&u);
        let g = cost_gradient(&seq, &x_hat, &u_prev, &setpoint, &weights, &params);
        let fd = central_difference(&u, |v| total_cost(&unflatten(v), &x_hat, &u_prev, &setpoint, &weights, &params));
        let e_cost = relative_error(&g, &fd);

        let mut problem = NmpcProblem::new(x_hat, u_prev, &setpoint, weights, &obstacles, &params, &bounds);
        let g = psi_grad(&u, c, &y, &mut problem);
        let fd = central_difference(&u, |v| psi_value(v, c, &y, &mut problem));
        let e_psi = relative_error(&g, &fd);

        worst.set(worst.get().max(e_cost).max(e_psi));
        prop_assert!(e_cost < 1e-5, "cost gradient relative error {e_cost:e}");
        prop_assert!(e_psi < 1e-5, "psi gradient relative error {e_psi:e}");
        Ok(())
    });
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!("100 instances, worst relative error {:.2e}, {elapsed:.2} s", worst.get());
    match result {
        Ok(()) => outcome(elapsed < 10.0, detail),
        Err(e) => outcome(false, format!("{detail}; {e}")),
    }
}

/// `min |u - z|^2` subject to `|u - o| >= r`.
struct SphereExterior {
    z: Vec<f64>,
    o: Vec<f64>,
    r: f64,
    bounds: BoxSet<f64>,
}

impl ParametricProblem<f64> for SphereExterior {
    fn n(&self) -> usize {
        self.z.len()
    }
    fn m(&self) -> usize {
        1
    }
    fn bounds(&self) -> &BoxSet<f64> {
        &self.bounds
    }
    fn cost(&mut self, u: &[f64]) -> f64 {
        u.iter().zip(&self.z).map(|(a, b)| (a - b) * (a - b)).sum()
    }
    fn cost_grad(&mut self, u: &[f64], grad: &mut [f64]) {
        for i in 0..u.len() {
            grad[i] = 2.0 * (u[i] - self.z[i]);
        }
    }
    fn cmap(&mut self, u: &[f64], out: &mut [f64]) {
        out[0] = self.r * self.r - u.iter().zip(&self.o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    fn cmap_jtv(&mut self, u: &[f64], w: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            out[i] = -2.0 * (u[i] - self.o[i]) * w[0];
        }
    }
}

fn analytic_solver_oracle() -> Outcome {
    let settings = AlmSettings::<f64> { time_budget: 0.0, ..AlmSettings::default() };
    let worst = Cell::new(0.0f64);
    let inside = Cell::new(0usize);
    let strategy = (
        prop::collection::vec(-1.0..1.0f64, 3),
        prop::collection::vec(-1.0..1.0f64, 3),
        0.2..2.0f64,
        0.3..1.5f64,
    );
    let result = runner(50).run(&strategy, |(dir, o, scale, r)| {
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        prop_assume!(len > 0.1);
        // Target at `scale * r` from the center.
        let z: Vec<f64> = (0..3).map(|k| o[k] + dir[k] / len * scale * r).collect();
        let d = scale * r;
        let expected: Vec<f64> =
            if d >= r { z.clone() } else { (0..3).map(|k| o[k] + r * (z[k] - o[k]) / d).collect() };
        let mut p = SphereExterior { z: z.clone(), o, r, bounds: BoxSet::new(vec![-10.0; 3], vec![10.0; 3]).unwrap() };
        let out = alm_solve(&mut p, &z, &[0.0], &settings).unwrap();
        prop_assert_eq!(out.status, SolveStatus::Converged);
        let err = (0..3).map(|k| (out.u_star[k] - expected[k]).abs()).fold(0.0, f64::max);
        worst.set(worst.get().max(err));
        prop_assert!(err <= 1e-3, "distance to closed form {err:e}");
        if d < r {
            inside.set(inside.get() + 1);
            prop_assert!(out.y_star[0] > 0.0, "inside target must bind the constraint");
        } else {
            prop_assert!(out.y_star[0] == 0.0, "outside target got multiplier {}", out.y_star[0]);
        }
        Ok(())
    });
    let detail = format!("50 instances ({} inside), worst error {:.2e}", inside.get(), worst.get());
    match result {
        Ok(()) => outcome(true, detail),
        Err(e) => outcome(false, format!("{detail}; {e}")),
    }
}

fn hover_tracking() -> Outcome {
    let config = ControllerConfig::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_input = 0.0f64;
    for _ in 0..20 {
        let p = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.5..3.0)];
        let mut ctrl = Controller::new(config).unwrap();
        let sp = Setpoint::hover_at(p, &config.model);
        let sol = ctrl.solve_step(&State::at_rest(p), &sp.u_ref, &sp, &ObstacleSet::empty(config.n_obs, 40), None);
        let u = sol.first_input();
        let dev = (u.thrust - 9.81).abs().max(u.phi_ref.abs()).max(u.theta_ref.abs());
        worst_input = worst_input.max(dev);
    }

    let mut slowest = 0.0f64;
    let mut all_reached = true;
    for k in 0..6 {
        let az = rng.gen_range(0.0..std::f64::consts::TAU);
        let el = rng.gen_range(-0.5..0.5f64);
        let start = [0.0, 0.0, 1.5];
        let target = [2.0 * el.cos() * az.cos(), 2.0 * el.cos() * az.sin(), 1.5 + 2.0 * el.sin()];
        let agent = AgentSpec { id: 0, start, schedule: vec![Waypoint { t: 0.0, p: target }] };
        let scenario = ScenarioConfig::new(&format!("step-{k}"), 10.0, vec![agent]);
        let log = run_scenario(&scenario).unwrap();
        let reached = log.records.iter().find(|r| {
            let p = r.agents[0].state.p;
            (0..3).map(|i| (p[i] - target[i]).powi(2)).sum::<f64>().sqrt() <= 0.05
        });
        match reached {
            Some(r) => slowest = slowest.max(r.time),
            None => all_reached = false,
        }
    }
    let pass = worst_input <= 1e-3 && all_reached && slowest <= 10.0;
    outcome(
        pass,
        format!(
            "hover input deviation {worst_input:.1e} over 20 positions; 2 m steps reached within 0.05 m after at most {slowest:.2} s{}",
            if all_reached { "" } else { " (some never)" }
        ),
    )
}

struct ScenarioRun {
    config: ScenarioConfig,
    summary: RunSummary,
    wall: f64,
    dir: tempfile::TempDir,
}

fn run_builtin(name: &str) -> ScenarioRun {
    let config = builtin(name).unwrap();
    let start = Instant::now();
    let log = run_scenario(&config).unwrap();
    let wall = start.elapsed().as_secs_f64();
    let dir = tempfile::tempdir().unwrap();
    let summary = write_run(dir.path(), &config, &log).unwrap();
    ScenarioRun { config, summary, wall, dir }
}

fn fmt_opt(d: Option<f64>) -> String {
    d.map_or_else(|| "none".into(), |d| format!("{d:.3} m"))
}

fn head_on(run: &ScenarioRun) -> Outcome {
    let m = &run.summary.metrics;
    let min = m.min_distance.unwrap_or(f64::INFINITY);
    let err = run.summary.max_final_target_error;
    outcome(
        min >= 0.3 && err <= 0.1 && run.wall < 60.0,
        format!("min distance {min:.3} m, worst final error {err:.3} m, {:.1} s", run.wall),
    )
}

fn team_swap(run: &ScenarioRun) -> Outcome {
    let m = &run.summary.metrics;
    let min = m.min_distance.unwrap_or(f64::INFINITY);
    let shape_ok = run.config.n_obs == 3 && run.config.model.horizon == 40 && run.config.agents.len() == 10;
    outcome(
        shape_ok && min >= 0.33 && m.non_convergence_rate <= 0.02 && run.wall < 600.0,
        format!(
            "min distance {min:.3} m, non-convergence {:.2}% of {} solves, {:.1} s",
            m.non_convergence_rate * 100.0,
            m.solves,
            run.wall
        ),
    )
}

fn intruder(run: &ScenarioRun) -> Outcome {
    let m = &run.summary.metrics;
    let to_intruder = m.min_non_cooperative_distance.unwrap_or(0.0);
    let coop = m.min_cooperative_distance.unwrap_or(f64::INFINITY);
    let speed = run.config.non_cooperative.iter().map(|n| n.max_speed()).fold(0.0, f64::max);
    outcome(
        !run.config.non_cooperative.is_empty() && speed <= 1.0 && to_intruder >= 0.28 && coop >= 0.3,
        format!(
            "min to intruder {}, between agents {}, intruder speed {speed:.2} m/s",
            fmt_opt(m.min_non_cooperative_distance),
            fmt_opt(m.min_cooperative_distance)
        ),
    )
}

fn solve_time_budget(run: &ScenarioRun) -> Outcome {
    let m = &run.summary.metrics;
    outcome(
        m.solve_time_mean < 0.04 && m.solve_time_p99 <= 0.04,
        format!(
            "team-swap mean {:.2} ms, p99 {:.2} ms, max {:.2} ms",
            m.solve_time_mean * 1e3,
            m.solve_time_p99 * 1e3,
            m.solve_time_max * 1e3
        ),
    )
}

/// Alg. 1 evaluated directly: weights from the double loop, then a full sort.
fn brute_force_selection(
    ego: &[[f64; 3]],
    others: &[PredictedTrack<f64>],
    p: &PriorityParams<f64>,
) -> (Vec<Option<usize>>, Vec<f64>) {
    let n = p.horizon as f64;
    let mut w = vec![0.0; others.len()];
    for (i, other) in others.iter().enumerate() {
        for j in 0..=p.horizon {
            let d = (0..3).map(|k| (ego[j][k] - other.positions[j][k]).powi(2)).sum::<f64>().sqrt();
            let vm = other.velocities[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if d <= other.radius && j == 0 {
                w[i] += p.big_m;
            } else if d <= other.radius + p.d_s {
                w[i] += (1.0 - d / (other.radius + p.d_s)).powi(2) * vm * (n / ((j + 1) as f64).powf(p.a));
            }
        }
    }
    let mut order: Vec<usize> = (0..others.len()).collect();
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(Ordering::Equal).then(others[a].agent_id.cmp(&others[b].agent_id)));
    let mut ids: Vec<Option<usize>> = order.iter().take(p.n_obs).map(|&i| Some(others[i].agent_id)).collect();
    ids.resize(p.n_obs, None);
    (ids, w)
}

fn random_track(rng: &mut ChaCha8Rng, id: usize, horizon: usize, dt: f64, spread: f64) -> PredictedTrack<f64> {
    let p0: [f64; 3] = std::array::from_fn(|k| rng.gen_range(-spread..spread) * if k == 2 { 0.3 } else { 1.0 });
    let v0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
    let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
    let times = (0..=horizon).map(|j| j as f64 * dt);
    PredictedTrack {
        agent_id: id,
        positions: times.clone().map(|t| std::array::from_fn(|k| p0[k] + v0[k] * t + 0.5 * a[k] * t * t)).collect(),
        velocities: times.map(|t| std::array::from_fn(|k| v0[k] + a[k] * t)).collect(),
        radius: rng.gen_range(0.2..0.5),
    }
}

fn prioritization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut mismatches, mut m_violations, mut forced) = (0, 0, 0);
    for _ in 0..1000 {
        let agents = rng.gen_range(1..=12);
        let horizon = [10, 20, 40][rng.gen_range(0..3)];
        let params = PriorityParams {
            d_s: rng.gen_range(0.05..0.5),
            a: rng.gen_range(0.3..1.5),
            n_obs: rng.gen_range(1..=4),
            horizon,
            ..PriorityParams::default()
        };
        // Tight spreads make j = 0 overlaps and exact zero-weight ties common.
        let spread = [0.5, 1.5, 4.0][rng.gen_range(0..3)];
        let ego = random_track(&mut rng, 0, horizon, 0.05, spread);
        let mut ids: Vec<usize> = (1..agents).map(|k| k * 7 % 13 + 1).collect();
        ids.sort_by_key(|_| rng.gen::<u32>());
        let others: Vec<PredictedTrack<f64>> = ids.iter().map(|&id| random_track(&mut rng, id, horizon, 0.05, spread)).collect();

        let w = priority_weights(&ego.positions, &others, &params);
        let got = select_obstacles(&w, &others, &params).sources();
        let (expected, w_ref) = brute_force_selection(&ego.positions, &others, &params);
        if got != expected {
            mismatches += 1;
        }
        // Overlapping agents come before everyone else.
        let overlapping: Vec<usize> = others
            .iter()
            .enumerate()
            .filter(|(_, o)| (0..3).map(|k| (ego.positions[0][k] - o.positions[0][k]).powi(2)).sum::<f64>().sqrt() <= o.radius)
            .map(|(_, o)| o.agent_id)
            .collect();
        forced += usize::from(!overlapping.is_empty());
        let leading = overlapping.len().min(params.n_obs);
        if got[..leading].iter().any(|id| !id.is_some_and(|id| overlapping.contains(&id))) {
            m_violations += 1;
        }
        if w_ref.iter().zip(&w).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0)) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && m_violations == 0,
        format!("1000 configurations, {mismatches} mismatches, {m_violations} M-dominance violations ({forced} with overlaps)"),
    )
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap()
}

fn determinism(first_runs: &[ScenarioRun]) -> Outcome {
    let mut differing = Vec::new();
    for name in builtin_names() {
        let again = run_builtin(name);
        let first = match first_runs.iter().find(|r| r.config.name == name) {
            Some(r) => r,
            None => &run_builtin(name),
        };
        for file in [TRAJECTORY_FILE, SELECTIONS_FILE, CONFIG_FILE] {
            if read(first.dir.path(), file) != read(again.dir.path(), file) {
                differing.push(format!("{name}/{file}"));
            }
        }
    }
    let names: Vec<&str> = builtin_names().collect();
    let detail = if differing.is_empty() {
        format!("{} built-ins run twice, trajectory, selection and config logs identical", names.len())
    } else {
        format!("differing logs: {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

fn adaptive_weights() -> Outcome {
    let weights = Weights::<f64>::default();
    let (n, n_obs) = (40, 3);
    let at_zero = adapt_weights(&vec![0.0; n * n_obs], &weights, n);
    let zero_ok = at_zero == weights.q_p_max;
    let strategy = (prop::collection::vec(0.0..5.0f64, n * n_obs), prop::collection::vec(0.0..100.0f64, 2..12));
    let result = runner(200).run(&strategy, |(y0, mut ts)| {
        ts.sort_by(f64::total_cmp);
        let mut last = adapt_weights(&vec![0.0; n * n_obs], &weights, n);
        for t in ts {
            let y: Vec<f64> = y0.iter().map(|v| t * v).collect();
            let q = adapt_weights(&y, &weights, n);
            for k in 0..3 {
                prop_assert!(q[k] <= last[k], "Q_p[{k}] grew from {} to {} at t = {t}", last[k], q[k]);
                prop_assert!(q[k] >= weights.q_p_min[k] && q[k] <= weights.q_p_max[k]);
            }
            last = q;
        }
        Ok(())
    });
    let detail = format!("Q_p(0) = {at_zero:?}, 200 rays");
    match result {
        Ok(()) => outcome(zero_ok, detail),
        Err(e) => outcome(false, format!("{detail}; {e}")),
    }
}

fn report(n: usize, title: &str, o: &Outcome) -> bool {
    println!("criterion {n:>2} {:<28} {}  {}", title, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters pass arguments; a listing must not run anything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut passed = 0;
    passed += report(1, "gradient correctness", &gradient_correctness()) as usize;
    passed += report(2, "analytic solver oracle", &analytic_solver_oracle()) as usize;
    passed += report(3, "hover tracking", &hover_tracking()) as usize;

    let runs: Vec<ScenarioRun> = ["head-on", "team-swap", "intruder"].into_iter().map(run_builtin).collect();
    passed += report(4, "two-agent head-on swap", &head_on(&runs[0])) as usize;
    passed += report(5, "ten-agent team swap", &team_swap(&runs[1])) as usize;
    passed += report(6, "intruder", &intruder(&runs[2])) as usize;
    passed += report(7, "solve-time budget", &solve_time_budget(&runs[1])) as usize;
    passed += report(8, "prioritization oracle", &prioritization_oracle()) as usize;
    passed += report(9, "determinism", &determinism(&runs)) as usize;
    passed += report(10, "adaptive weights", &adaptive_weights()) as usize;

    println!("acceptance: {passed}/10 criteria passed");
    if passed == 10 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
