//! Command-line front end for the `erank` tool.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use erank_core::par::{self, Execution};

pub mod config;
pub mod error;
mod estimate;
mod matrices;
mod output;
mod sweep;

pub use error::{CliError, EXIT_DIVERGED, EXIT_INPUT, EXIT_OK, EXIT_VERIFY};

#[derive(Debug, Parser)]
#[command(name = "erank", version, about = "Spectral capacity of attention and generalization-gap sweeps")]
pub struct Cli {
    /// Emit one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectral summary of each matrix CSV.
    Analyze {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Check the norm inequality chain on attention matrices.
    Verify {
        files: Vec<PathBuf>,
        /// Generate COUNT random n x n softmax matrices from SEED.
        #[arg(long, num_args = 3, value_names = ["N", "COUNT", "SEED"], conflicts_with = "files")]
        random: Option<Vec<u64>>,
        /// Accept matrices that are not row-stochastic (only the rank check applies).
        #[arg(long)]
        allow_general: bool,
    },
    /// Evaluate the generalization bound term by term.
    Bound {
        #[arg(long = "R")]
        rank_cap: f64,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long = "L-tot", default_value_t = 1.0)]
        l_tot: f64,
        #[arg(long = "B", default_value_t = 1.0)]
        sens_op: f64,
        #[arg(long = "C", default_value_t = 1.0)]
        c_rc: f64,
        #[arg(long = "c", default_value_t = 1.0)]
        c_dev: f64,
        #[arg(long = "C2", default_value_t = 1.0)]
        c2: f64,
        #[arg(long = "L-S", default_value_t = 0.0)]
        empirical_loss: f64,
    },
    /// Decoupled, coupled and feasible Rademacher estimates.
    Rademacher {
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train across sample sizes and compare the gap with the bound.
    Sweep {
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config and planned grid without running.
        #[arg(long)]
        dry_run: bool,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Fit how sensitivity operator norms scale with sequence length.
    Zscaling {
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the resolved configuration and its hash.
    Config {
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// What a command produced: text for stdout and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub code: u8,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome {
            stdout,
            code: EXIT_OK,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let exec = if cli.jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    par::with_jobs(cli.jobs, || dispatch(cli, exec))
}

fn dispatch(cli: &Cli, exec: Execution) -> Result<Outcome, CliError> {
    let json = cli.json;
    match &cli.command {
        Command::Analyze { files } => matrices::analyze(files, json),
        Command::Verify {
            files,
            random,
            allow_general,
        } => matrices::verify(files, random.as_deref(), *allow_general, json, exec),
        Command::Bound {
            rank_cap,
            m,
            delta,
            l_tot,
            sens_op,
            c_rc,
            c_dev,
            c2,
            empirical_loss,
        } => estimate::bound(
            erank_core::bounds::BoundInputs {
                rank_cap: *rank_cap,
                m: *m,
                delta: *delta,
                l_tot: *l_tot,
                sens_op: *sens_op,
                c_rc: *c_rc,
                c_dev: *c_dev,
                c2: *c2,
                empirical_loss: *empirical_loss,
            },
            json,
        ),
        Command::Rademacher { config, overrides } => {
            let r = config::resolve(config.as_deref(), overrides)?;
            estimate::rademacher(&r, json, exec)
        }
        Command::Zscaling { config, overrides } => {
            let r = config::resolve(config.as_deref(), overrides)?;
            estimate::z_scaling(&r, json, exec)
        }
        Command::Sweep {
            config,
            overrides,
            out,
            dry_run,
            force,
        } => {
            let r = config::resolve(config.as_deref(), overrides)?;
            sweep::run(&r, out.as_deref(), *dry_run, *force, json, exec)
        }
        Command::Config { config, overrides } => {
            let r = config::resolve(config.as_deref(), overrides)?;
            let doc = serde_json::json!({ "config_hash": r.hash, "config": r.config });
            Ok(Outcome::ok(output::json_line(&doc)))
        }
    }
}
