//! Run statistics computed purely from a [`RunLog`].

use serde::{Deserialize, Serialize};

use crate::solver::SolveStatus;
use crate::swarm::RunLog;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges starting at zero.
    pub edges: Vec<f64>,
    /// Counts per bin; values past the last edge land in the last bin.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], upper: f64, bins: usize) -> Self {
        let width = upper / bins as f64;
        let edges = (0..=bins).map(|k| k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if width > 0.0 { (v / width).floor().max(0.0) as usize } else { 0 };
            counts[k.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    pub tick: u64,
    pub time: f64,
    /// `None` when fewer than two vehicles are flying.
    pub min_distance: Option<f64>,
    pub max_fpr: f64,
    pub max_multiplier_norm: f64,
    pub max_infeasibility: f64,
    pub mean_inner_iters: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub converged: usize,
    pub max_outer_iterations: usize,
    pub time_budget_exhausted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub agents: usize,
    pub min_distance: Option<f64>,
    pub min_cooperative_distance: Option<f64>,
    pub min_non_cooperative_distance: Option<f64>,
    pub solves: usize,
    pub solve_time_mean: f64,
    pub solve_time_max: f64,
    pub solve_time_p99: f64,
    pub solve_time_histogram: Histogram,
    pub status: StatusCounts,
    pub non_convergence_rate: f64,
    pub fallbacks: usize,
    pub per_tick: Vec<TickMetrics>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Nearest-rank percentile of an unsorted sample; zero when empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn metrics_report(log: &RunLog<f64>) -> Metrics {
    let times: Vec<f64> = log.solves().map(|(_, s)| s.solve_time).collect();
    let mut status = StatusCounts::default();
    let mut fallbacks = 0;
    for (a, s) in log.solves() {
        match s.status {
            SolveStatus::Converged => status.converged += 1,
            SolveStatus::MaxOuterIterations => status.max_outer_iterations += 1,
            SolveStatus::TimeBudgetExhausted => status.time_budget_exhausted += 1,
        }
        fallbacks += usize::from(a.fallback);
    }
    let solves = times.len();
    let upper = if log.budget > 0.0 { log.budget } else { times.iter().copied().fold(0.0, f64::max) };
    let per_tick = log
        .records
        .iter()
        .map(|r| {
            let solved: Vec<_> = r.agents.iter().filter_map(|a| a.solve.as_ref()).collect();
            let max_of = |f: &dyn Fn(&crate::controller::SolveSummary<f64>) -> f64| {
                solved.iter().map(|s| f(s)).filter(|x| x.is_finite()).fold(0.0, f64::max)
            };
            TickMetrics {
                tick: r.tick,
                time: r.time,
                min_distance: finite(r.separation().overall()),
                max_fpr: max_of(&|s| s.fpr_norm),
                max_multiplier_norm: max_of(&|s| s.multiplier_norm),
                max_infeasibility: max_of(&|s| s.infeasibility),
                mean_inner_iters: if solved.is_empty() {
                    0.0
                } else {
                    solved.iter().map(|s| s.inner_iters as f64).sum::<f64>() / solved.len() as f64
                },
            }
        })
        .collect();
    Metrics {
        ticks: log.records.len(),
        agents: log.records.first().map_or(0, |r| r.agents.len()),
        min_distance: finite(log.min_distance()),
        min_cooperative_distance: finite(log.min_cooperative_distance()),
        min_non_cooperative_distance: finite(log.min_non_cooperative_distance()),
        solves,
        solve_time_mean: if solves == 0 { 0.0 } else { times.iter().sum::<f64>() / solves as f64 },
        solve_time_max: times.iter().copied().fold(0.0, f64::max),
        solve_time_p99: percentile(&times, 99.0),
        solve_time_histogram: Histogram::new(&times, upper, HISTOGRAM_BINS),
        status,
        non_convergence_rate: if solves == 0 { 0.0 } else { (solves - status.converged) as f64 / solves as f64 },
        fallbacks,
        per_tick,
    }
}
