use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predfilt_cli::config::ExperimentConfig;
use predfilt_cli::runner::{self, RunError};
use predfilt_cli::suites::{self, Suite};

#[derive(Parser)]
#[command(
    name = "predfilt",
    version,
    about = "Low-rank Kalman filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Record the per-step covariance error bound.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Run an acceptance suite and report measured values against thresholds.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Validate the MNIST IDX training files in a directory.
    MnistFetchCheck {
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn fail(err: RunError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed_override,
            diagnostics,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(RunError::Config(e)),
            };
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            cfg.diagnostics |= diagnostics;
            match runner::run(&cfg, &out) {
                Ok(rows) => {
                    for r in &rows {
                        println!(
                            "seed {}: cumulative reward {:.4}, best {:.4}",
                            r.seed, r.cumulative_reward, r.best_reward
                        );
                    }
                    println!("wrote {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify { suite } => {
            let results = suites::run_suite(suite);
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| !r.is_failure()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::MnistFetchCheck { data_dir } => {
            let dir =
                data_dir.or_else(|| std::env::var_os(runner::DATA_DIR_ENV).map(PathBuf::from));
            match runner::load_mnist(dir.as_deref()) {
                Ok(data) => {
                    println!(
                        "{} images of {}x{}, label counts {:?}",
                        data.len(),
                        data.rows,
                        data.cols,
                        data.label_histogram()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
