//! `counterfair`: run audits, individual pipeline stages and black-box
//! audits from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit statuses.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "counterfair",
    version,
    about = "Counterfactual fairness audits for candidate scoring models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON experiment configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed. Overrides COUNTERFAIR_SEED, which overrides the config.
    #[arg(long, env = "COUNTERFAIR_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic population: truth.csv, features.csv, latents.csv.
    GenData(Common),
    /// Train the scoring model on a population; writes the checkpoint and
    /// out-of-fold predictions.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Invert every candidate's features to a latent code.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit one latent boundary per protected attribute on inverted codes.
    LearnBoundary {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// inversion.json written by invert.
        #[arg(long)]
        inversion: PathBuf,
    },
    /// Edit protected members across the boundaries and score originals
    /// and counterfactuals with a trained model.
    Counterfactualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by train.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inversion: PathBuf,
        /// Directory of boundary files written by learn-boundary.
        #[arg(long)]
        boundaries: PathBuf,
    },
    /// Run all three experiments and write the report bundle.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Reuse stage checkpoints from this directory (created if absent).
        #[arg(long)]
        stages: Option<PathBuf>,
    },
    /// Audit from score files alone.
    AuditBlackbox {
        #[command(flatten)]
        common: Common,
        /// Original scores (candidate_id,gender,ethnicity,age_group,valid,o..i).
        #[arg(long)]
        orig: PathBuf,
        /// Counterfactual scores (candidate_id,edited_attribute,o_cf..i_cf).
        #[arg(long)]
        cf: Option<PathBuf>,
    },
    /// DI sweeps over top-N and threshold grids for a scores file.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Re-render report.md and plots from a report.json.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli, &args[1..].join(" ")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("counterfair: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
