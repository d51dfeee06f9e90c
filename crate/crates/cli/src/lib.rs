//! Command-line front end: configuration, dispatch and file output.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{split_override, Command, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Plot(#[from] plot::PlotError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Check(_) => 4,
            CliError::Io(_) | CliError::Plot(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Check(_) => "check",
            CliError::Io(_) => "io",
            CliError::Plot(_) => "plot",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "optlattice",
    version,
    about = "Energy transport in optical lattices: simulations, convergence studies and moment computations",
    after_help = "Configuration values can be overridden with --section.key=value, e.g. --solver.dt=1e-5."
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Run the solver and write snapshots and a diagnostics timeseries.
    Simulate(CommonArgs),
    /// Run a grid or time-step refinement study.
    Convergence(CommonArgs),
    /// Print the density and energy of the equilibrium with given multipliers.
    Moments(CommonArgs),
    /// Recover the multipliers from a density and energy.
    Invert(CommonArgs),
    /// Compare quadrature of the band integrals with their closed forms.
    VerifyIntegrals(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// INI configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Verify the command's consistency checks; failures exit with status 4.
    #[arg(long)]
    check: bool,
    /// Print the resolved configuration instead of running.
    #[arg(long)]
    print_config: bool,
}

/// Runs the CLI with `args` (including the program name) and returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    for arg in args.into_iter().map(Into::into) {
        match arg.to_str().and_then(split_override) {
            Some(_) => overrides.push(arg.to_string_lossy().into_owned()),
            None => plain.push(arg),
        }
    }
    let cli = match Cli::try_parse_from(plain) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, &overrides, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Convergence(a) => (Command::Convergence, a),
        Sub::Moments(a) => (Command::Moments, a),
        Sub::Invert(a) => (Command::Invert, a),
        Sub::VerifyIntegrals(a) => (Command::VerifyIntegrals, a),
    };
    let cfg = RunConfig::load(args.config.as_deref(), overrides, command)?;
    if args.print_config {
        write!(out, "{}", cfg.serialize())?;
        return Ok(());
    }
    match command {
        Command::Simulate => commands::simulate(&cfg, args.check, out),
        Command::Convergence => commands::convergence(&cfg, args.check, out),
        Command::Moments => commands::moments_cmd(&cfg, args.check, out),
        Command::Invert => commands::invert_cmd(&cfg, args.check, out),
        Command::VerifyIntegrals => commands::verify_integrals(&cfg, args.check, out),
    }
}
