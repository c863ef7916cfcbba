//! `wakegate` command-line front end.

mod commands;
mod config;
mod failure;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wakegate::evalkit::Task;

use crate::commands::PrepSteps;
use crate::config::AppConfig;
use crate::failure::CliResult;

#[derive(Debug, Parser)]
#[command(name = "wakegate", version, about = "Streaming wakeword detection with speaker authentication")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set pipeline.wake_threshold=0.6`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream WAV files (or raw 16-bit PCM on stdin) and print JSON-lines events.
    Detect {
        /// WAV files, each a separate client; none or `-` reads stdin.
        inputs: Vec<PathBuf>,
    },
    /// Build a speaker profile from a directory of WAV clips.
    Enroll {
        clips_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the wakeword classifier from positive and negative clip directories.
    Train {
        positives: PathBuf,
        negatives: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch loss trace (defaults next to the model).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Score a manifest and report FRR/FAR and the equal error rate.
    Eval {
        manifest: PathBuf,
        #[arg(long, default_value = "wakeword")]
        task: Task,
        /// Write the threshold sweep as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Normalize, trim silence and segment recordings.
    Prep {
        inputs: PathBuf,
        outputs: PathBuf,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        vad: bool,
        /// Cut fixed-length segments of this many seconds.
        #[arg(long)]
        segment: Option<f64>,
        /// Seconds skipped between segments.
        #[arg(long, default_value_t = 0.0, requires = "segment")]
        gap: f64,
    },
    /// Write augmented copies of every clip plus an applied-ops manifest.
    Augment {
        inputs: PathBuf,
        outputs: PathBuf,
        #[arg(long, default_value_t = 1)]
        multiplier: usize,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        #[arg(long)]
        rir_dir: Option<PathBuf>,
    },
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = AppConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Detect { inputs } => commands::detect(&config, inputs, &mut out),
        Command::Enroll { clips_dir, out: path } => commands::enroll_cmd(&config, clips_dir, path.as_deref(), &mut out),
        Command::Train {
            positives,
            negatives,
            out: path,
            loss_csv,
        } => commands::train_cmd(&config, positives, negatives, path.as_deref(), loss_csv.as_deref(), &mut out),
        Command::Eval { manifest, task, report } => {
            commands::eval_cmd(&config, manifest, *task, report.as_deref(), &mut out)
        }
        Command::Prep {
            inputs,
            outputs,
            normalize,
            vad,
            segment,
            gap,
        } => {
            let steps = PrepSteps {
                normalize: *normalize,
                vad: *vad,
                segment: segment.map(|s| (s, *gap)),
            };
            commands::prep_cmd(&config, inputs, outputs, steps, &mut out)
        }
        Command::Augment {
            inputs,
            outputs,
            multiplier,
            noise_dir,
            rir_dir,
        } => commands::augment_cmd(
            &config,
            inputs,
            outputs,
            *multiplier,
            noise_dir.as_deref(),
            rir_dir.as_deref(),
            &mut out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
