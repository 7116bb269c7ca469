//! Command-line pipeline: `preprocess`, `train`, `eval`, `ablate`, `synth`.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Study;
use config::PipelineConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mpcnn", version, about = "Per-minute sleep apnea detection from single-lead ECG")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StudyArg {
    Features,
    Window,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, window, detect beats and write distance-profile features (.mpf).
    Preprocess {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the CNN on a feature file and write a model (.mpnn).
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a feature file.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also report AHI-based per-recording diagnosis and correlation.
        #[arg(long)]
        per_recording: bool,
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Channel-subset or window-length ablation study.
    Ablate {
        #[arg(long, value_enum)]
        study: StudyArg,
        #[arg(long)]
        data_dir: PathBuf,
        /// Held-out recordings; without it each run is scored on its validation split.
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Write a synthetic ECG corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        records: usize,
        #[arg(long, default_value_t = 30)]
        minutes: usize,
        /// Noise level; defaults to the generator's own.
        #[arg(long)]
        snr_db: Option<f64>,
    },
}

fn dispatch(cli: &Cli, cfg: &PipelineConfig) -> Result<String, CliError> {
    let mut out = String::new();
    match &cli.command {
        Command::Preprocess { data_dir, out: path } => {
            let r = commands::cmd_preprocess(data_dir, path, cfg)?;
            let _ = writeln!(
                out,
                "wrote {} segments (L={}, C={}) to {}",
                r.file.segments.len(),
                r.file.length,
                r.file.channels.len(),
                path.display()
            );
            out.push_str(&r.report.to_text());
        }
        Command::Train { features, out: path } => {
            let a = commands::cmd_train(features, path, cfg)?;
            out.push_str(&a.outcome.history.to_table());
            let _ = writeln!(
                out,
                "train_segments = {}\nval_segments = {}\nbest_epoch = {}\nwrote {}, {}, {}",
                a.outcome.train_indices.len(),
                a.outcome.val_indices.len(),
                a.outcome.best_epoch,
                a.model_path.display(),
                a.best_path.display(),
                a.history_path.display()
            );
        }
        Command::Eval {
            features,
            model,
            per_recording,
            report,
        } => {
            let e = commands::cmd_eval(features, model, *per_recording, report.as_deref(), cfg)?;
            out.push_str(&e.report);
        }
        Command::Ablate {
            study,
            data_dir,
            test_dir,
            repeats,
            out: path,
        } => {
            let study = match study {
                StudyArg::Features => Study::Features,
                StudyArg::Window => Study::Window,
            };
            let t = commands::cmd_ablate(study, data_dir, test_dir.as_deref(), *repeats, cfg)?;
            if let Some(p) = path {
                std::fs::write(p, &t.text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            }
            out.push_str(&t.text);
        }
        Command::Synth {
            out: dir,
            records,
            minutes,
            snr_db,
        } => {
            let ids = commands::cmd_synth(dir, *records, *minutes, cfg.seed, *snr_db)?;
            let _ = writeln!(out, "wrote {} records to {}: {}", ids.len(), dir.display(), ids.join(" "));
        }
    }
    Ok(out)
}

/// Loads the effective config and runs the selected command, returning its
/// console output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(cli, &cfg)),
        _ => dispatch(cli, &cfg),
    }
}
