#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Globals, Plan};
use config::{CResult, Config};

#[derive(Parser, Debug)]
#[command(
    name = "herding",
    version,
    about = "Seeded experiments on herding, revealed preferences and incentive control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo runs per cell; overrides the `runs` key.
    #[arg(long, global = true)]
    runs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sequential social learning over a grid of priors and true states.
    HerdingSim,
    /// Herding regions on a grid over the belief simplex.
    Regions,
    /// Rational-inattention test and utility reconstruction from action samples.
    Brp,
    /// Socialistic stopping cost against the threshold.
    StoppingSweep,
    /// Total incentive and classification rate against the threshold.
    IncentiveSweep,
    /// Stochastic approximation of the incentive threshold.
    Spsa,
    /// Word-of-mouth hierarchy.
    Wom,
    /// Naive asynchronous fusion and its double counting.
    Async,
}

fn plan(command: Command, cfg: &Config) -> CResult<Box<dyn Plan>> {
    Ok(match command {
        Command::HerdingSim => Box::new(commands::HerdingSim::from_config(cfg)?),
        Command::Regions => Box::new(commands::Regions::from_config(cfg)?),
        Command::Brp => Box::new(commands::Brp::from_config(cfg)?),
        Command::StoppingSweep => Box::new(commands::StoppingSweep::from_config(cfg)?),
        Command::IncentiveSweep => Box::new(commands::IncentiveSweep::from_config(cfg)?),
        Command::Spsa => Box::new(commands::Spsa::from_config(cfg)?),
        Command::Wom => Box::new(commands::Wom::from_config(cfg)?),
        Command::Async => Box::new(commands::Async::from_config(cfg)?),
    })
}

fn prepare(cli: &Cli) -> CResult<(Box<dyn Plan>, Globals)> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::empty(),
    };
    let seed = cli.seed.unwrap_or(cfg.get("seed", 0)?);
    let runs = cli.runs.unwrap_or(cfg.get("runs", 100)?);
    if runs == 0 {
        return Err(config::ConfigError::new("runs", "must be positive"));
    }
    let p = plan(cli.command, &cfg)?;
    cfg.finish()?;
    Ok((p, Globals { seed, runs }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (plan, globals) = match prepare(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match plan.run(globals) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    for (name, body) in &outcome.files {
        let path = cli.out.join(name);
        if let Err(e) = std::fs::write(&path, body) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
        println!("wrote {}", path.display());
    }
    match outcome.negative {
        Some(msg) => {
            println!("negative verdict: {msg}");
            ExitCode::from(3)
        }
        None => ExitCode::SUCCESS,
    }
}
