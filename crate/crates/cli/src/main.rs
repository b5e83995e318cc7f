//! `efcxr`: cohort construction, patient-level splitting, training,
//! evaluation, and attribution figures as composable subcommands over one
//! declarative run config.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/validation failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "efcxr",
    version,
    about = "Chest x-ray ejection-fraction classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the labeled cohort manifest and demographics report.
    CohortBuild {
        #[command(flatten)]
        common: Common,
        /// Use a synthetic cohort; optional KEY=VALUE pairs
        /// (n, class_signal, image_size, seed) override the config.
        #[arg(long, num_args = 0.., value_name = "KEY=VALUE")]
        synthetic: Option<Vec<String>>,
    },
    /// Assign studies to train/val/test at patient granularity.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier; writes history and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Backbone override: densenet121 | efficientnet_b0 | resnet50 | tiny_conv.
        #[arg(long)]
        arch: Option<String>,
        /// Toggle the augmentation policy.
        #[arg(long, value_parser = ["on", "off"])]
        augment: Option<String>,
    },
    /// Score the test split; writes predictions and metric reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score (default: <run_dir>/best.ckpt).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subgroup facets (race,sex).
        #[arg(long)]
        subgroups: Option<String>,
    },
    /// Render saliency and Grad-CAM figures for selected cases.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Predictions CSV (default: <run_dir>/predictions.csv).
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        /// Cases per outcome group.
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated methods (saliency,gradcam).
        #[arg(long)]
        methods: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CohortBuild { common, synthetic } => {
            commands::cohort_build(&common.config, common.seed, synthetic.as_deref())
        }
        Command::Split { common } => commands::split(&common.config, common.seed),
        Command::Train {
            common,
            arch,
            augment,
        } => commands::train(
            &common.config,
            common.seed,
            arch.as_deref(),
            augment.as_deref(),
        ),
        Command::Evaluate {
            common,
            checkpoint,
            subgroups,
        } => commands::evaluate(
            &common.config,
            common.seed,
            checkpoint.as_deref(),
            subgroups.as_deref(),
        ),
        Command::Explain {
            common,
            checkpoint,
            predictions,
            k,
            methods,
        } => commands::explain(
            &common.config,
            common.seed,
            checkpoint.as_deref(),
            predictions.as_deref(),
            k,
            methods.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
