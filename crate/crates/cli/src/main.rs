mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PruneFlags;

/// Exit status contract: 0 success, 1 validation or check failure, 2 usage error.
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "filtprune", version, about = "Prune redundant convolution filters by clustering them")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random choice (representatives, heuristic B, synthetic weights, check inputs).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-layer clustering (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// JSON file with a PruneConfig; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer summary of a bundle and its validation diagnostics.
    Inspect { bundle: PathBuf },
    /// Structural validation only.
    Validate { bundle: PathBuf },
    /// Number of clusters per prunable layer over a grid of thresholds.
    Sweep {
        bundle: PathBuf,
        /// Grid as start:stop:step (inclusive).
        #[arg(long, default_value = "0.1:1.0:0.01", conflicts_with = "taus")]
        grid: String,
        /// Explicit comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Write the CSV here instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        prune: PruneFlags,
    },
    /// Cluster every prunable layer and write the resulting plan.
    Plan {
        bundle: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        prune: PruneFlags,
    },
    /// Build (or load) a plan, apply it and write the smaller bundle.
    Prune {
        bundle: PathBuf,
        #[arg(long)]
        out_bundle: PathBuf,
        /// Where to write the plan (default: <out-bundle>.plan.json).
        #[arg(long, conflicts_with = "plan")]
        out_plan: Option<PathBuf>,
        /// Apply this existing plan instead of clustering.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Count batch-norm scale and shift as parameters.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        prune: PruneFlags,
    },
    /// FLOP and parameter report for one architecture, or the reduction between two.
    Cost {
        before: PathBuf,
        after: Option<PathBuf>,
        /// Report the reduction this plan would achieve on `before`.
        #[arg(long, conflicts_with = "after")]
        plan: Option<PathBuf>,
        #[arg(long)]
        full: bool,
    },
    /// Verify a pruned bundle against its source and plan.
    Check {
        before: PathBuf,
        after: PathBuf,
        plan: PathBuf,
        /// Random inputs for the functional comparison.
        #[arg(long, default_value_t = 25)]
        inputs: usize,
        /// Largest allowed absolute output difference.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Write one of the built-in reference architectures.
    Zoo {
        #[arg(value_parser = ["vgg16", "resnet56", "resnet110"])]
        name: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Fill the architecture with seeded random weights.
        #[arg(long)]
        weights: bool,
        /// Replace a conv kernel with N planted groups of near-duplicate filters (layer=N, repeatable; implies --weights).
        #[arg(long, value_name = "LAYER=N")]
        plant: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
