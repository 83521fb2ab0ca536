//! Command-line driver: configuration, sweeps, verification and output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::RunContext;
pub use config::RunConfig;
pub use error::CliError;
pub use verify::Fault;

#[derive(Debug, Parser)]
#[command(name = "dynhomog", version, about = "Dynamic homogenization of layered elastic composites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Micromechanical and exact dispersion branches.
    Dispersion(CommonArgs),
    /// Overall and on-branch effective parameters.
    Homogenize(CommonArgs),
    /// Reconstructed field profiles next to the exact mode shape.
    Fields {
        #[command(flatten)]
        common: CommonArgs,
        /// Wavenumber as a fraction of pi/a.
        #[arg(long)]
        q: f64,
        /// 1-based branch index.
        #[arg(long)]
        branch: usize,
    },
    /// Invariant suite over pseudo-random samples.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<Fault>,
    },
}

fn context(common: &CommonArgs) -> Result<RunContext, CliError> {
    let (config, text) = RunConfig::load(&common.config)?;
    Ok(RunContext::new(config, text, common.out.clone(), common.jobs))
}

/// Runs one command and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Dispersion(c) => commands::dispersion(&context(c)?),
        Command::Homogenize(c) => commands::homogenize(&context(c)?),
        Command::Fields { common, q, branch } => commands::fields(&context(common)?, *q, *branch),
        Command::Verify { common, inject_fault } => {
            let ctx = context(common)?;
            let (report, paths) = verify::verify(&ctx, *inject_fault)?;
            for c in &report.checks {
                println!(
                    "{:<24} {}  worst {:.3e}  tol {:.1e}  n {}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.worst,
                    c.tolerance,
                    c.samples
                );
            }
            if report.passed {
                Ok(paths)
            } else {
                Err(CliError::VerifyFailed {
                    failed: report.failed(),
                })
            }
        }
    }
}
