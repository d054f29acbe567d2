// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use amfd_core::LcpMethod;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } => 1,
            Self::Solver(_) => 2,
            Self::Validation(_) => 3,
        }
    }

    /// Parameter errors raised by the core name a field and count as
    /// configuration errors; everything else is a solver failure.
    pub fn from_core(e: amfd_core::Error) -> Self {
        match e {
            amfd_core::Error::InvalidParameter { name, reason } => Self::Config { field: name.into(), reason },
            amfd_core::Error::DiagonalDominanceViolated { .. } => {
                Self::Config { field: "vol".into(), reason: e.to_string() }
            }
            amfd_core::Error::GridTooLarge { .. } => Self::Config { field: "node_cap".into(), reason: e.to_string() },
            other => Self::Solver(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amfd", version, about = "Finite-difference pricing of American puts on one or more assets")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads for solves and Monte Carlo paths.
    #[arg(long, global = true, env = "AMFD_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve once and print the value at (t = 0, x0) as JSON.
    Price {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every node of the solution as CSV.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Refinement study; writes a CSV or JSON report.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "converge.json")]
        out: PathBuf,
    },
    /// Sweep over the computational radius R; writes a CSV or JSON report.
    Localize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "localize.json")]
        out: PathBuf,
    },
    /// Monte Carlo exit probabilities against the exponential bound.
    Exitprob {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Self-checks of the stencil, the difference operators and the solver.
    Validate {
        /// Fewer and smaller instances.
        #[arg(long)]
        small: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long = "R1")]
    r1: Option<f64>,
    #[arg(long = "R2")]
    r2: Option<f64>,
    #[arg(long = "T")]
    expiry: Option<f64>,
    #[arg(long)]
    method: Option<LcpMethod>,
    #[arg(long)]
    lcp_tol: Option<f64>,
    /// Drop the early-exercise constraint.
    #[arg(long)]
    european: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            tau: self.tau,
            h: self.h,
            r: self.r,
            r1: self.r1,
            r2: self.r2,
            expiry: self.expiry,
            method: self.method,
            lcp_tol: self.lcp_tol,
            european: self.european,
            seed: self.seed,
        });
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Price { run, grid_out } => commands::price(&run.load()?, grid_out.as_deref()),
        Command::Converge { run, out } => commands::converge(&run.load()?, &out),
        Command::Localize { run, out } => commands::localize(&run.load()?, &out),
        Command::Exitprob { run, out } => commands::exitprob(&run.load()?, out.as_deref()),
        Command::Validate { small, seed } => commands::validate(small, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // unknown flags and malformed values are configuration errors
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("amfd: config error in `jobs`: must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(jobs);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("amfd: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amfd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
