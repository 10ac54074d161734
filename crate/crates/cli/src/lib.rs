//! Command-line front end of visocc: run configuration, on-disk formats and
//! the subcommands that tie the pipeline together.

pub mod commands;
pub mod config;
pub mod formats;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use visocc_train::TrainError;

pub use config::{ConfigError, RunConfig, Split};
pub use formats::FormatError;

#[derive(Debug, Parser)]
#[command(
    name = "visocc",
    version,
    about = "Self-supervised occupancy pretraining on simulated lidar scans"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the documented configuration (defaults, or the given file resolved).
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate the scans of one split.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "pretrain")]
        split: Split,
    },
    /// Generate visibility queries for the simulated scans of one split.
    MakeQueries {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "pretrain")]
        split: Split,
    },
    /// Pretrain from the scan and query files of the pretrain split.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Simulate scans and queries in memory instead of reading files.
        #[arg(long)]
        in_process: bool,
    },
    /// Occupancy accuracy of a checkpoint on held-out scenes.
    EvalOcc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Semantic segmentation probe of a checkpoint (or of a fresh encoder).
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required_unless_present = "random_init")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        random_init: bool,
    },
    /// Binary separability probes of a checkpoint against a fresh encoder.
    Separability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep one hyperparameter over several seeds and tabulate probe mIoU.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a scan and sampled occupancy predictions as an ASCII PLY.
    ExportPly {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Path of a `.bin` scan written by `simulate`.
        #[arg(long)]
        scan: PathBuf,
    },
}

/// Runs one command; text meant for stdout is returned.
pub fn run(command: &Command) -> anyhow::Result<String> {
    use commands as c;
    let load = |p: &PathBuf| RunConfig::load(p);
    Ok(match command {
        Command::Config { config } => match config {
            Some(p) => load(p)?.render(),
            None => RunConfig::default().render(),
        },
        Command::Simulate { config, split } => {
            format!("{}\n", c::simulate(&load(config)?, *split)?.display())
        }
        Command::MakeQueries { config, split } => {
            format!("{}\n", c::make_queries(&load(config)?, *split)?.display())
        }
        Command::Pretrain { config, in_process } => {
            let outcome = c::pretrain(&load(config)?, *in_process)?;
            let last = outcome.report.epochs.last().map_or(f64::NAN, |e| e.loss);
            format!("final loss {last:.6}\n")
        }
        Command::EvalOcc { config, checkpoint } => {
            let occ = c::eval_occ(&load(config)?, checkpoint)?
                .occupancy
                .expect("occupancy metrics");
            format!(
                "accuracy {:.4} (labels), {:.4} (truth), coverage {:.3}\n",
                occ.vs_labels.accuracy, occ.vs_truth.accuracy, occ.coverage
            )
        }
        Command::Probe {
            config, checkpoint, ..
        } => {
            let m = c::run_probe(&load(config)?, checkpoint.as_deref())?
                .probe
                .expect("probe metrics");
            format!("mIoU {:.2}%, accuracy {:.4}\n", 100.0 * m.miou, m.accuracy)
        }
        Command::Separability { config, checkpoint } => {
            let s = c::separability(&load(config)?, checkpoint)?
                .separability
                .expect("separability metrics");
            format!(
                "ground vs other {:.4} (random {:.4}), left vs right {:.4} (random {:.4}), random labels {:.4}\n",
                s.ground_vs_other.trained, s.ground_vs_other.random, s.left_right.trained, s.left_right.random, s.random_labels
            )
        }
        Command::Ablate { config } => c::ablate(&load(config)?)?.to_text(),
        Command::ExportPly {
            config,
            checkpoint,
            scan,
        } => {
            format!(
                "{}\n",
                c::export_ply(&load(config)?, checkpoint, scan)?.display()
            )
        }
    })
}

/// Category of the one-line error report.
pub fn error_category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if let Some(f) = cause.downcast_ref::<FormatError>() {
            return match f {
                FormatError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    "missing_input"
                }
                FormatError::Io { .. } => "io",
                _ => "format",
            };
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::NonFinite { .. } => "non_finite",
                TrainError::InvalidConfig(_) | TrainError::OverlappingScenes(..) => "config",
                _ => "runtime",
            };
        }
    }
    "runtime"
}

/// `error: <category>: <message>` on a single line.
pub fn error_line(e: &anyhow::Error) -> String {
    let message = format!("{e:#}").replace('\n', " ");
    format!("error: {}: {message}", error_category(e))
}
