//! Run directory layout.
//!
//! * `trajectory.csv`: one row per vehicle per tick (states, inputs, solver diagnostics)
//! * `selections.csv`: obstacle slots chosen by each agent per tick
//! * `timing.csv`: wall-clock solve times
//! * `series.csv`: per-tick minimum distance and solver diagnostics
//! * `config.json`: the scenario as run
//! * `summary.json`: metrics and final target errors
//!
//! The first two depend only on the scenario and seed; wall-clock data lives
//! in the last files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, ScenarioError};
use crate::controller::SolveSummary;
use crate::metrics::{metrics_report, Metrics};
use crate::model::{Input, State};
use crate::solver::SolveStatus;
use crate::swarm::{AgentTick, NonCoopTick, RunLog, TickRecord};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SELECTIONS_FILE: &str = "selections.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

const AGENT: &str = "agent";
const SCRIPTED: &str = "scripted";

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    tick: u64,
    time: f64,
    id: usize,
    kind: String,
    px: f64,
    py: f64,
    pz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    phi: Option<f64>,
    theta: Option<f64>,
    thrust: Option<f64>,
    phi_ref: Option<f64>,
    theta_ref: Option<f64>,
    status: Option<SolveStatus>,
    fpr: Option<f64>,
    infeasibility: Option<f64>,
    y_norm: Option<f64>,
    penalty: Option<f64>,
    outer_iters: Option<usize>,
    inner_iters: Option<usize>,
    inner_per_outer: Option<String>,
    fallback: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionRow {
    tick: u64,
    id: usize,
    selected: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimingRow {
    tick: u64,
    id: usize,
    solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub id: usize,
    /// Distance from the final state to the last scheduled target, m.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration: f64,
    pub final_target_errors: Vec<TargetError>,
    pub max_final_target_error: f64,
    pub metrics: Metrics,
}

impl RunSummary {
    pub fn new(config: &ScenarioConfig, log: &RunLog<f64>) -> Self {
        let last = log.final_record();
        let final_target_errors: Vec<TargetError> = config
            .agents
            .iter()
            .filter_map(|spec| {
                let a = last.agents.iter().find(|a| a.id == spec.id)?;
                let target = spec.final_target();
                let error = (0..3).map(|k| (a.state.p[k] - target[k]).powi(2)).sum::<f64>().sqrt();
                Some(TargetError { id: spec.id, error })
            })
            .collect();
        Self {
            scenario: config.name.clone(),
            seed: config.seed,
            duration: config.duration,
            max_final_target_error: final_target_errors.iter().map(|e| e.error).fold(0.0, f64::max),
            final_target_errors,
            metrics: metrics_report(log),
        }
    }
}

fn join_usize(v: impl IntoIterator<Item = Option<usize>>) -> String {
    v.into_iter().map(|x| x.map_or_else(|| "-".to_owned(), |i| i.to_string())).collect::<Vec<_>>().join(";")
}

fn split_usize(s: &str) -> Result<Vec<Option<usize>>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| if t == "-" { Ok(None) } else { t.parse().map(Some).map_err(|e| format!("`{t}`: {e}")) })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_owned(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Csv { path: path.to_owned(), source }
}

fn write_rows<R: Serialize>(path: &Path, rows: impl Iterator<Item = R>) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, ScenarioError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<R>, _>>().map_err(csv_err(path))
}

fn agent_row(r: &TickRecord<f64>, a: &AgentTick<f64>) -> TrajectoryRow {
    let s = a.solve.as_ref();
    TrajectoryRow {
        tick: r.tick,
        time: r.time,
        id: a.id,
        kind: AGENT.to_owned(),
        px: a.state.p[0],
        py: a.state.p[1],
        pz: a.state.p[2],
        vx: a.state.v[0],
        vy: a.state.v[1],
        vz: a.state.v[2],
        phi: Some(a.state.phi),
        theta: Some(a.state.theta),
        thrust: a.input.map(|u| u.thrust),
        phi_ref: a.input.map(|u| u.phi_ref),
        theta_ref: a.input.map(|u| u.theta_ref),
        status: s.map(|s| s.status),
        fpr: s.map(|s| s.fpr_norm),
        infeasibility: s.map(|s| s.infeasibility),
        y_norm: s.map(|s| s.multiplier_norm),
        penalty: s.map(|s| s.penalty_final),
        outer_iters: s.map(|s| s.outer_iters),
        inner_iters: s.map(|s| s.inner_iters),
        inner_per_outer: s.map(|s| join_usize(s.inner_iters_per_outer.iter().map(|&k| Some(k)))),
        fallback: s.map(|_| a.fallback),
    }
}

fn scripted_row(r: &TickRecord<f64>, n: &NonCoopTick<f64>) -> TrajectoryRow {
    TrajectoryRow {
        tick: r.tick,
        time: r.time,
        id: n.id,
        kind: SCRIPTED.to_owned(),
        px: n.p[0],
        py: n.p[1],
        pz: n.p[2],
        vx: n.v[0],
        vy: n.v[1],
        vz: n.v[2],
        phi: None,
        theta: None,
        thrust: None,
        phi_ref: None,
        theta_ref: None,
        status: None,
        fpr: None,
        infeasibility: None,
        y_norm: None,
        penalty: None,
        outer_iters: None,
        inner_iters: None,
        inner_per_outer: None,
        fallback: None,
    }
}

/// Writes every artifact of a finished run into `dir` (created if missing).
pub fn write_run(dir: &Path, config: &ScenarioConfig, log: &RunLog<f64>) -> Result<RunSummary, ScenarioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows = log.records.iter().flat_map(|r| {
        r.agents.iter().map(move |a| agent_row(r, a)).chain(r.noncoop.iter().map(move |n| scripted_row(r, n)))
    });
    write_rows(&dir.join(TRAJECTORY_FILE), rows)?;

    let selections = log.records.iter().flat_map(|r| {
        r.agents
            .iter()
            .filter(|a| a.solve.is_some())
            .map(move |a| SelectionRow { tick: r.tick, id: a.id, selected: join_usize(a.selected.iter().copied()) })
    });
    write_rows(&dir.join(SELECTIONS_FILE), selections)?;

    let timing = log.solves().zip(log.records.iter().flat_map(|r| {
        r.agents.iter().filter(|a| a.solve.is_some()).map(move |_| r.tick)
    }));
    write_rows(&dir.join(TIMING_FILE), timing.map(|((a, s), tick)| TimingRow { tick, id: a.id, solve_time: s.solve_time }))?;

    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_json()).map_err(io_err(&config_path))?;

    let summary = RunSummary::new(config, log);
    write_rows(&dir.join(SERIES_FILE), summary.metrics.per_tick.iter())?;
    let summary_path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, text).map_err(io_err(&summary_path))?;
    Ok(summary)
}

/// Rebuilds the scenario and run log from a run directory.
pub fn read_run(dir: &Path) -> Result<(ScenarioConfig, RunLog<f64>), ScenarioError> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
    let config = ScenarioConfig::from_json(&text).map_err(|source| ScenarioError::Parse { path: config_path, source })?;

    let traj_path = dir.join(TRAJECTORY_FILE);
    let sel_path = dir.join(SELECTIONS_FILE);
    let format = |path: &Path, message: String| ScenarioError::Format { path: path.to_owned(), message };
    let rows: Vec<TrajectoryRow> = read_rows(&traj_path)?;
    let selections: Vec<SelectionRow> = read_rows(&sel_path)?;
    let timing: Vec<TimingRow> = read_rows(&dir.join(TIMING_FILE))?;

    let mut records: Vec<TickRecord<f64>> = Vec::new();
    for row in rows {
        if records.last().is_none_or(|r| r.tick != row.tick) {
            records.push(TickRecord { tick: row.tick, time: row.time, agents: Vec::new(), noncoop: Vec::new() });
        }
        let rec = records.last_mut().expect("pushed above");
        let (p, v) = ([row.px, row.py, row.pz], [row.vx, row.vy, row.vz]);
        match row.kind.as_str() {
            AGENT => {
                let input = match (row.thrust, row.phi_ref, row.theta_ref) {
                    (Some(t), Some(phi), Some(theta)) => Some(Input::new(t, phi, theta)),
                    _ => None,
                };
                let solve = match row.status {
                    Some(status) => Some(SolveSummary {
                        status,
                        fpr_norm: row.fpr.unwrap_or(f64::NAN),
                        infeasibility: row.infeasibility.unwrap_or(f64::NAN),
                        multiplier_norm: row.y_norm.unwrap_or(f64::NAN),
                        outer_iters: row.outer_iters.unwrap_or(0),
                        inner_iters: row.inner_iters.unwrap_or(0),
                        inner_iters_per_outer: split_usize(row.inner_per_outer.as_deref().unwrap_or(""))
                            .map_err(|m| format(&traj_path, m))?
                            .into_iter()
                            .flatten()
                            .collect(),
                        solve_time: 0.0,
                        penalty_final: row.penalty.unwrap_or(f64::NAN),
                    }),
                    None => None,
                };
                rec.agents.push(AgentTick {
                    id: row.id,
                    state: State { p, v, phi: row.phi.unwrap_or(0.0), theta: row.theta.unwrap_or(0.0) },
                    input,
                    solve,
                    fallback: row.fallback.unwrap_or(false),
                    selected: Vec::new(),
                });
            }
            SCRIPTED => rec.noncoop.push(NonCoopTick { id: row.id, p, v }),
            other => return Err(format(&traj_path, format!("unknown vehicle kind `{other}`"))),
        }
    }

    let index_of = |records: &[TickRecord<f64>], tick: u64, id: usize| -> Option<(usize, usize)> {
        let r = records.binary_search_by_key(&tick, |r| r.tick).ok()?;
        let a = records[r].agents.iter().position(|a| a.id == id)?;
        Some((r, a))
    };
    for s in selections {
        let (r, a) = index_of(&records, s.tick, s.id)
            .ok_or_else(|| format(&sel_path, format!("no trajectory row for tick {} agent {}", s.tick, s.id)))?;
        records[r].agents[a].selected = split_usize(&s.selected).map_err(|m| format(&sel_path, m))?;
    }
    let timing_path = dir.join(TIMING_FILE);
    for t in timing {
        let (r, a) = index_of(&records, t.tick, t.id)
            .ok_or_else(|| format(&timing_path, format!("no trajectory row for tick {} agent {}", t.tick, t.id)))?;
        if let Some(s) = records[r].agents[a].solve.as_mut() {
            s.solve_time = t.solve_time;
        }
    }

    let settings = config.settings();
    let log = RunLog { control_dt: settings.control_dt(), budget: settings.controller.solver.time_budget, records };
    Ok((config, log))
}
