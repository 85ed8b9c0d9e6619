//! `definetti`: simulate portfolios, solve reinsurance problems, emit curves
//! and cross-check against brute-force oracles.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use definetti::solvers::{Measure, Mode};
use definetti::Error;

use config::RunConfig;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "definetti", version, about = "Optimal reinsurance on empirical loss distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the sample matrix of a parametric portfolio and write it as CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Sample CSV destination (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one problem and write a JSON report.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Report destination (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Contract CSV destination.
        #[arg(long)]
        contract_out: Option<PathBuf>,
    },
    /// Solve the penalized problem along a lambda grid, or sweep h(eta).
    Curve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        grid_min: f64,
        #[arg(long)]
        grid_max: f64,
        #[arg(long, default_value_t = 101)]
        grid_steps: usize,
        /// Sweep eta at the configured lambda instead of sweeping lambda.
        #[arg(long)]
        eta_sweep: bool,
    },
    /// Cross-check the solver against a brute-force oracle on a small instance.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MeasureArg {
    Variance,
    Cvar,
    Var,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Penalized,
    Constrained,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    measure: Option<MeasureArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Bound on the risk measure of the retained total.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample CSV replacing the configured risks.
    #[arg(long)]
    samples: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> definetti::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.measure {
            cfg.measure = Some(match m {
                MeasureArg::Variance => Measure::Variance,
                MeasureArg::Cvar => Measure::Cvar,
                MeasureArg::Var => Measure::Var,
            });
        }
        if let Some(m) = self.mode {
            cfg.mode = Some(match m {
                ModeArg::Penalized => Mode::Penalized,
                ModeArg::Constrained => Mode::Constrained,
            });
        }
        // a flag for one of lambda/c replaces whichever the config carried
        if let Some(l) = self.lambda {
            cfg.lambda = Some(l);
            if self.c.is_none() {
                cfg.c = None;
            }
        }
        if let Some(c) = self.c {
            cfg.c = Some(c);
            if self.lambda.is_none() {
                cfg.lambda = None;
            }
        }
        if let Some(a) = self.alpha {
            cfg.alpha = Some(a);
        }
        if let Some(s) = self.seed {
            cfg.portfolio.seed = s;
        }
        if let Some(path) = &self.samples {
            cfg.use_samples(path.clone());
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Contract(_) | Error::Refused(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Parse { .. } | Error::Io(_) => EXIT_DATA,
        Error::Bracket(_) | Error::NonMonotone { .. } | Error::NonConvergence { .. } | Error::Infeasible(_) => EXIT_SOLVER,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("DEFINETTI_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation(format!("DEFINETTI_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::validation(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<bool, Error> {
    init_threads()?;
    match cli.command {
        Command::Simulate { run, out } => commands::simulate(&run.resolve()?, out.as_deref()).map(|_| true),
        Command::Solve { run, out, contract_out } => {
            commands::solve(&run.resolve()?, out.as_deref(), contract_out.as_deref()).map(|_| true)
        }
        Command::Curve { run, out, grid_min, grid_max, grid_steps, eta_sweep } => {
            let points = commands::grid(grid_min, grid_max, grid_steps)?;
            commands::curve(&run.resolve()?, &points, eta_sweep, out.as_deref()).map(|_| true)
        }
        Command::Verify { run, out } => commands::verify(&run.resolve()?, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: solver and oracle disagree beyond tolerance");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
