//! `iocl`: config-driven runner for simulate, fit and recover pipelines
//! and figure data.

mod config;
mod error;
mod figures;
mod output;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::figures::Figure;

#[derive(Parser)]
#[command(name = "iocl", version, about = "Inverse optimal control experiments from closed-loop data")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset: <out>/dataset.jsonl and its meta sidecar.
    Simulate(Common),
    /// Fit EM to a dataset: <out>/fit.json and <out>/loglik.csv.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset to fit (default <out>/dataset.jsonl).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Recover cost or dynamics from a fit report: <out>/recovery.json and CSVs.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Fit report (default <out>/fit.json).
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Regenerate the data behind one figure into <out>/<tag>/.
    Figure {
        tag: Figure,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the figure's default seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// simulate, fit and recover in sequence.
    All(Common),
}

fn load(common: &Common) -> CliResult<(Experiment, PathBuf)> {
    let mut exp = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| exp.output.clone());
    Ok((exp, out))
}

fn or_default(path: Option<PathBuf>, out: &Path, file: &str) -> PathBuf {
    path.unwrap_or_else(|| out.join(file))
}

fn run(command: Command) -> CliResult<PathBuf> {
    match command {
        Command::Simulate(common) => {
            let (exp, out) = load(&common)?;
            pipeline::run_simulate(&exp, &out)
        }
        Command::Fit { common, dataset } => {
            let (exp, out) = load(&common)?;
            pipeline::run_fit(&exp, &or_default(dataset, &out, pipeline::DATASET_FILE), &out)
        }
        Command::Recover { common, fit } => {
            let (exp, out) = load(&common)?;
            pipeline::run_recover(&exp, &or_default(fit, &out, pipeline::FIT_FILE), &out)
        }
        Command::Figure { tag, out, seed } => figures::run_figure(tag, seed, &out),
        Command::All(common) => {
            let (exp, out) = load(&common)?;
            pipeline::run_all(&exp, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IOCL_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.into()).build_global() {
            eprintln!("error: {e}");
            return error::exit_code(&CliError::Usage(e.to_string()));
        }
    }
    match run(cli.command) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            error::exit_code(&e)
        }
    }
}
