use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use swarm_nmpc::scenario::{read_run, resolve, run_scenario, write_run, RunSummary, ScenarioError, BUILTINS};
use swarm_nmpc::swarm::BudgetClock;

#[derive(Parser)]
#[command(name = "swarm-nmpc", version, about = "Simulate distributed NMPC collision avoidance for UAV swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in and write the logs to a directory.
    Run {
        /// Path to a scenario JSON file, or the name of a built-in.
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Enforce the solve budget on the wall clock instead of as an
        /// iteration allowance. Runs are then no longer reproducible.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Recompute and print the metrics of a finished run.
    Metrics {
        log_dir: PathBuf,
        /// Print the full summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Built-in scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenariosAction,
    },
}

#[derive(Subcommand)]
enum ScenariosAction {
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.downcast_ref::<ScenarioError>().is_some_and(|s| {
                matches!(s, ScenarioError::Invalid(_) | ScenarioError::Parse { .. } | ScenarioError::UnknownBuiltin(_))
            });
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { scenario, out, seed, duration, wall_clock } => {
            let mut config = resolve(&scenario)?.with_overrides(seed, duration);
            if wall_clock {
                config.budget_clock = BudgetClock::Wall;
            }
            let log = run_scenario(&config)?;
            let summary = write_run(&out, &config, &log)?;
            print_summary(&summary);
            println!("logs written to {}", out.display());
        }
        Command::Metrics { log_dir, json } => {
            let summary = summarize(&log_dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print_summary(&summary);
            }
        }
        Command::Scenarios { action: ScenariosAction::List } => {
            let width = BUILTINS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
            for (name, description) in BUILTINS {
                println!("{name:width$}  {description}");
            }
        }
    }
    Ok(())
}

fn summarize(dir: &Path) -> anyhow::Result<RunSummary> {
    let (config, log) = read_run(dir).with_context(|| format!("reading run directory {}", dir.display()))?;
    anyhow::ensure!(!log.records.is_empty(), "{} contains no ticks", dir.display());
    Ok(RunSummary::new(&config, &log))
}

fn fmt_m(d: Option<f64>) -> String {
    d.map_or_else(|| "n/a".to_owned(), |d| format!("{d:.3} m"))
}

fn print_summary(s: &RunSummary) {
    let m = &s.metrics;
    println!("scenario            {} (seed {}, {} s)", s.scenario, s.seed, s.duration);
    println!("agents              {} over {} ticks", m.agents, m.ticks);
    println!("min distance        {}", fmt_m(m.min_distance));
    println!("  cooperative       {}", fmt_m(m.min_cooperative_distance));
    println!("  non-cooperative   {}", fmt_m(m.min_non_cooperative_distance));
    println!("solves              {}", m.solves);
    println!(
        "solve time          mean {:.2} ms, p99 {:.2} ms, max {:.2} ms",
        m.solve_time_mean * 1e3,
        m.solve_time_p99 * 1e3,
        m.solve_time_max * 1e3
    );
    println!(
        "non-convergence     {:.2}% ({} outer-iteration cap, {} budget)",
        m.non_convergence_rate * 100.0,
        m.status.max_outer_iterations,
        m.status.time_budget_exhausted
    );
    println!("fallbacks           {}", m.fallbacks);
    println!("final target error  {:.3} m (worst agent)", s.max_final_target_error);
}
