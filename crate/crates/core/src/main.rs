use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use beamform_ee::experiment::{self, ExperimentKind, ExperimentSpec};
use beamform_ee::{Execution, Mode, ScenarioConfig, SolverOptions};

#[derive(Parser, Debug)]
#[command(name = "beamform-ee", version, about = "Energy-efficient joint unicast/multicast beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// EE trace per iteration for each seed.
    Convergence(Args),
    /// Final EE versus the common-rate target (grid in Mbit/s).
    SweepRate(Args),
    /// Final EE and active private streams versus receive antennas per user.
    SweepAntennas(Args),
    /// One optimization per seed at the scenario's own settings.
    Single(Args),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Joint,
    MulticastOnly,
    Both,
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Scenario JSON; built-in reference scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Number of channel realizations.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Sweep values, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    mode: ModeArg,
    /// Relative EE change that stops the iteration.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Override the scenario's common-rate target (Mbit/s).
    #[arg(long)]
    rate_target: Option<f64>,
    /// Run realizations on one thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

fn spec_from(kind: ExperimentKind, args: &Args) -> anyhow::Result<ExperimentSpec> {
    let mut scenario = match &args.scenario {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("reading scenario {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(r) = args.rate_target {
        scenario.rate_target_mbps = r;
    }
    let modes = match args.mode {
        ModeArg::Joint => vec![Mode::Joint],
        ModeArg::MulticastOnly => vec![Mode::MulticastOnly],
        ModeArg::Both => vec![Mode::Joint, Mode::MulticastOnly],
    };
    Ok(ExperimentSpec {
        grid: args.grid.clone(),
        realizations: args.seeds,
        seed_base: args.seed_base,
        modes,
        solver: SolverOptions {
            rel_objective_tol: args.tol,
            max_iters: args.max_iters,
            ..SolverOptions::default()
        },
        execution: if args.sequential { Execution::Sequential } else { Execution::default() },
        ..ExperimentSpec::new(kind, scenario)
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (kind, args) = match &cli.command {
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
        Command::SweepRate(a) => (ExperimentKind::SweepRate, a),
        Command::SweepAntennas(a) => (ExperimentKind::SweepAntennas, a),
        Command::Single(a) => (ExperimentKind::Single, a),
    };
    let spec = spec_from(kind, args)?;
    let rows = experiment::run(&spec)?;
    experiment::write_csv_file(&rows, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let summary = experiment::summarize(&rows);
    let summary_path = experiment::summary_path(&args.out);
    experiment::write_csv_file(&summary, &summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    let infeasible = rows.iter().filter(|r| !r.is_feasible()).count();
    log::info!("{} rows -> {} ({} infeasible)", rows.len(), args.out.display(), infeasible);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
