use std::path::PathBuf;

use thiserror::Error;

use mpcnn::beat_detection::BeatError;
use mpcnn::ecg_io::EcgIoError;
use mpcnn::evaluation::EvalError;
use mpcnn::mp_features::FeatureError;
use mpcnn::neural_net::NnError;
use mpcnn::preprocess::PreprocessError;
use mpcnn::synthetic::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("no records (.hea files) found in {}", .0.display())]
    NoRecords(PathBuf),
    #[error("record {record}: {source}")]
    Record {
        record: String,
        #[source]
        source: EcgIoError,
    },
    #[error(transparent)]
    Data(#[from] EcgIoError),
    #[error("record {record}: {message}")]
    Signal { record: String, message: String },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    /// Short category printed in front of the message.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) | CliError::Features(FeatureError::Io { .. }) | CliError::Model(NnError::Io { .. }) => "io",
            CliError::NoRecords(_) | CliError::Record { .. } | CliError::Data(_) => "data",
            CliError::Signal { .. } => "signal",
            CliError::Features(_) => "features",
            CliError::Model(_) => "model",
            CliError::Eval(_) => "eval",
            CliError::Synth(_) => "synth",
        }
    }

    pub fn message(&self) -> String {
        self.to_string()
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Features(FeatureError::Io { .. }) | CliError::Model(NnError::Io { .. }) => 3,
            CliError::NoRecords(_) | CliError::Record { .. } | CliError::Data(_) | CliError::Signal { .. } => 4,
            CliError::Features(_) => 5,
            CliError::Model(_) => 6,
            CliError::Eval(_) => 7,
            CliError::Synth(_) => 8,
        }
    }

    pub fn signal(record: &str, e: impl std::fmt::Display) -> Self {
        CliError::Signal {
            record: record.to_string(),
            message: e.to_string(),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Config(format!("filter: {e}"))
    }
}

impl From<BeatError> for CliError {
    fn from(e: BeatError) -> Self {
        CliError::Config(format!("beat detector: {e}"))
    }
}
