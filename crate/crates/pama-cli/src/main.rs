//! `pama`: rank aggregation with heterogeneous rankers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pama_cli::commands::{self, CommonArgs};
use pama_cli::config::{Mode, PartialPolicy, RunConfig};
use pama_cli::{error_document, exit_code, CliError};

#[derive(Parser)]
#[command(name = "pama")]
#[command(about = "Rank aggregation with heterogeneous rankers")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PartialFlag {
    Auto,
    Yes,
    No,
}

impl From<PartialFlag> for PartialPolicy {
    fn from(f: PartialFlag) -> Self {
        match f {
            PartialFlag::Auto => PartialPolicy::Auto,
            PartialFlag::Yes => PartialPolicy::Yes,
            PartialFlag::No => PartialPolicy::No,
        }
    }
}

#[derive(Parser)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// How to treat empty ranking cells.
    #[arg(long, value_enum)]
    partial: Option<PartialFlag>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate replicate data sets for a scenario.
    Simulate(RunArgs),
    /// Fit the model to ranking lists (posterior sampling or MLE).
    Fit(RunArgs),
    /// Run scenarios x methods and report recovery metrics.
    Benchmark(RunArgs),
    /// Run the built-in diagnostic checks.
    Check {
        /// Optional config (accepted for uniformity; checks ignore it).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn init_threads() {
    if let Ok(value) = std::env::var("PAMA_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        } else {
            eprintln!("warning: PAMA_THREADS={value} is not a number; ignored");
        }
    }
}

fn expect_mode(cfg: &RunConfig, allowed: &[Mode], what: &str) -> anyhow::Result<()> {
    if allowed.contains(&cfg.mode) {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "config mode does not match the `{what}` subcommand"
        )))
    }
}

fn run() -> anyhow::Result<()> {
    init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Fit(args) => {
            let cfg = RunConfig::load(&args.config)?;
            expect_mode(&cfg, &[Mode::FitBayes, Mode::FitMle], "fit")?;
            let path = commands::cmd_fit(
                &cfg,
                &CommonArgs {
                    seed: args.seed,
                    out: args.out,
                    partial: args.partial.map(Into::into),
                },
            )?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Simulate(args) => {
            let cfg = RunConfig::load(&args.config)?;
            expect_mode(&cfg, &[Mode::Simulate], "simulate")?;
            let path = commands::cmd_simulate(
                &cfg,
                &CommonArgs {
                    seed: args.seed,
                    out: args.out,
                    partial: args.partial.map(Into::into),
                },
            )?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Benchmark(args) => {
            let cfg = RunConfig::load(&args.config)?;
            expect_mode(&cfg, &[Mode::Benchmark], "benchmark")?;
            let path = commands::cmd_benchmark(
                &cfg,
                &CommonArgs {
                    seed: args.seed,
                    out: args.out,
                    partial: args.partial.map(Into::into),
                },
            )?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Check { config: _ } => {
            if commands::cmd_check()? {
                Ok(())
            } else {
                Err(CliError::runtime("one or more checks failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            println!("{}", error_document(&err, code));
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
