//! `lenticolor`: batch color reconstruction of lenticular film scans.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{JobConfig, SimArgs, StageArgs, UsageError, CONFIG_ENV};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "lenticolor", version, about = "Color reconstruction for scans of lenticular film")]
struct Cli {
    /// TOML job configuration; command-line flags take precedence.
    #[arg(long, short = 'c', global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full reconstruction of one or more scans.
    Pipeline {
        /// Scan files or glob patterns.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Boundary likelihood map of a scan (LFR).
    Detect {
        input: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Lenticule grid fitted to a likelihood map (LGRID).
    Fit {
        /// Likelihood map (LFR).
        map: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        /// Starting grid instead of the peak detector.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Stripe image of a scan under a grid (LFR or 16-bit PNG).
    Extract {
        input: PathBuf,
        #[arg(long, short = 'g')]
        grid: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Full-color image from a stripe image.
    Demosaic {
        input: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Applies a color matrix to an RGB image.
    ConvertColor {
        input: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Synthetic scans with ground-truth grids from a directory of images.
    Simulate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        /// Number of scenes.
        #[arg(long, short = 'n', default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Scan with a grid drawn over it.
    Overlay {
        scan: PathBuf,
        #[arg(long, short = 'g')]
        grid: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
    },
}

fn job_with(config: Option<&Path>, stage: &StageArgs) -> Result<JobConfig> {
    let mut job = JobConfig::load(config)?;
    stage.apply(&mut job);
    Ok(job)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Pipeline { inputs, output, stage } => {
            let reports = commands::pipeline(&inputs, &output, job_with(config, &stage)?)?;
            if reports.iter().all(|r| r.ok()) {
                return Ok(ExitCode::SUCCESS);
            }
            Ok(ExitCode::from(EXIT_FAILURE))
        }
        Command::Detect { input, output, stage } => {
            commands::detect(&input, &output, &job_with(config, &stage)?).map(|_| ExitCode::SUCCESS)
        }
        Command::Fit { map, output, init, stage } => {
            commands::fit(&map, init.as_deref(), &output, &job_with(config, &stage)?).map(|_| ExitCode::SUCCESS)
        }
        Command::Extract { input, grid, output, stage } => {
            commands::extract(&input, &grid, &output, &job_with(config, &stage)?).map(|_| ExitCode::SUCCESS)
        }
        Command::Demosaic { input, output, stage } => {
            commands::demosaic_stripe(&input, &output, &job_with(config, &stage)?).map(|_| ExitCode::SUCCESS)
        }
        Command::ConvertColor { input, output, stage } => {
            commands::convert_color(&input, &output, &job_with(config, &stage)?).map(|_| ExitCode::SUCCESS)
        }
        Command::Simulate {
            corpus,
            output,
            count,
            sim,
        } => {
            let mut job = JobConfig::load(config)?;
            sim.apply(&mut job);
            let reports = commands::simulate(&corpus, &output, count, &job)?;
            if reports.iter().all(|r| r.error.is_none()) {
                return Ok(ExitCode::SUCCESS);
            }
            Ok(ExitCode::from(EXIT_FAILURE))
        }
        Command::Overlay { scan, grid, output } => {
            commands::overlay(&scan, &grid, &output).map(|_| ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
