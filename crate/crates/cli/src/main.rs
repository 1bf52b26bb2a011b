mod config;
mod error;
mod files;
mod stages;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, ExitKind};

/// Batch stages of the vocal-cord ultrasound pipeline.
///
/// Every option can also be given in a `key = value` file passed with
/// `--config` (dashes and underscores are interchangeable in keys). Flags
/// take precedence over the file; `VIPR_SEED` supplies the seed when
/// neither does.
#[derive(Parser, Debug)]
#[command(name = "vipr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantom videos (Y4M) with per-frame YOLO ROI labels.
    PhantomGen(stages::PhantomGenArgs),
    /// Keep every n-th frame of Y4M videos as PNGs and assign splits.
    Extract(stages::ExtractArgs),
    /// Zero configured overlay rectangles in every frame.
    Anonymize(stages::AnonymizeArgs),
    /// Crop to the labeled ROI (when present) and resample to 256x256.
    Standardize(stages::StandardizeArgs),
    /// Build the four-group synthetic dataset.
    Synth(stages::SynthArgs),
    /// Expand a synthetic dataset eightfold.
    Augment(stages::AugmentArgs),
    /// Train the paralysis classifier.
    Train(stages::TrainArgs),
    /// Evaluate a checkpoint on a labeled manifest.
    EvalCls(stages::EvalClsArgs),
    /// Evaluate detector output against YOLO ground truths.
    EvalDet(stages::EvalDetArgs),
    /// Compare analytic and numerical gradients on a tiny network.
    Gradcheck(stages::GradcheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PhantomGen(a) => stages::phantom_gen(a),
        Command::Extract(a) => stages::extract(a),
        Command::Anonymize(a) => stages::anonymize(a),
        Command::Standardize(a) => stages::standardize(a),
        Command::Synth(a) => stages::synth(a),
        Command::Augment(a) => stages::augment(a),
        Command::Train(a) => stages::train(a),
        Command::EvalCls(a) => stages::eval_cls(a),
        Command::EvalDet(a) => stages::eval_det(a),
        Command::Gradcheck(a) => stages::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitKind::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            ExitCode::from(ExitKind::Internal as u8)
        }
    }
}
