//! `fracdet`: synthesize, augment, train, detect, evaluate and render.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

mod commands;
mod detections;
mod exit;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fracdet", version, about = "Small-data two-stage fracture detector")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline config (TOML). Unset keys take their documented defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Experiment seed; overrides the config `seed` key.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (a file for `detect` and `render`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus (images, VOC annotations, split manifest) to --out.
    Synth,
    /// Expand the training originals of a manifest into --out.
    Augment {
        /// Input manifest; defaults to `data.manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Explicit augmentation plan (JSON); defaults to `augment.plan`.
        #[arg(long, value_name = "PATH")]
        plan: Option<PathBuf>,
    },
    /// Train on the train split; writes model.fdck, loss.csv and config.toml to --out.
    Train {
        /// Input manifest; defaults to `data.manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Detect in image files; writes detections JSON to --out or stdout.
    Detect {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Minimum certainty; overrides `eval.score_threshold`.
        #[arg(long, value_name = "P")]
        score_threshold: Option<f64>,
        #[arg(required = true, value_name = "IMAGE")]
        images: Vec<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest split; writes report and detections to --out.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Input manifest; defaults to `data.manifest`.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Both)]
        format: FormatArg,
    },
    /// Draw detections onto an image and save it as PNG to --out.
    Render {
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Detections JSON as written by `detect` or `eval`.
        #[arg(long, value_name = "PATH")]
        detections: PathBuf,
        /// Entry to draw; defaults to the image file stem.
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Both,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let name = commands::name(&cli.command);
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("fracdet {name}: {}", exit::describe(&e));
            ExitCode::from(exit::classify(&e))
        }
    }
}
