//! `ctiqa`: command-line front end of the CT image quality harness.
//!
//! Exit status: 0 success, 1 fatal error, 2 configuration or input error,
//! 3 finished with failed records.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{BackendFlags, PromptFlags, RunFlags};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn fatal(m: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: m.into(),
        }
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: m.into(),
        }
    }

    pub fn partial(m: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: m.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ctiqa",
    version,
    about = "Score CT image quality with multimodal language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and decode every image.
    IngestCheck {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fill the `noise` column with Poisson-Gaussian estimates.
    EstimateNoise {
        #[arg(long)]
        manifest: PathBuf,
        /// Output manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        decimals: u32,
    },
    /// Fill the `region` column by asking the backend.
    TagRegions {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Response cache directory.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendFlags,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Run one inference strategy over the test split.
    Run(RunFlags),
    /// Compute PLCC, SROCC, KROCC and Overall for a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build result tables (and figures) from finished run directories.
    Report {
        /// Run directories containing `summary.json`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset (PNG images and manifests).
    SynthDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        train: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2023)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::IngestCheck { manifest } => commands::ingest_check(&manifest),
        Command::EstimateNoise {
            manifest,
            out,
            decimals,
        } => commands::estimate_noise(&manifest, &out, decimals),
        Command::TagRegions {
            manifest,
            out,
            cache_dir,
            backend,
            prompt,
        } => commands::tag_regions(&manifest, &out, cache_dir.as_deref(), &backend, &prompt),
        Command::Run(flags) => commands::run(&flags),
        Command::Evaluate {
            predictions,
            manifest,
            out,
        } => commands::evaluate(&predictions, &manifest, out.as_deref()),
        Command::Report { runs, out } => commands::report(&runs, &out),
        Command::SynthDataset {
            out,
            train,
            test,
            size,
            seed,
        } => commands::synth_dataset(&out, train, test, size, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
