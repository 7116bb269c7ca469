//! One-dimensional LeNet-5 style CNN with hand-written backpropagation,
//! Adam, a step learning-rate schedule and deterministic seeded training.
//!
//! Computation is in `f64`. Parameters and batch-norm running statistics are
//! rounded to `f32` after every update, so a saved `.mpnn` file reproduces a
//! model exactly.

mod io;
mod layers;
mod model;
mod optim;
mod tensor;
mod train;


use thiserror::Error;

use crate::Label;

pub use io::{decode_model, encode_model, load_model, save_model, MAGIC as MPNN_MAGIC, VERSION as MPNN_VERSION};
pub use layers::{
    softmax, softmax_cross_entropy, Activation, BatchNorm1d, Conv1d, Dense, Dropout, GlobalMaxPool, MaxPool1d, Mode,
    Param, Relu,
};
pub use model::{ArchConfig, Layer, Model};
pub use optim::{Adam, LrSchedule};
pub use tensor::Tensor3;
pub use train::{
    batch_tensor, evaluate_loss, predict, stratified_split, train, train_step, EpochRecord, History, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalisation needs at least 2 samples in training, got {0}")]
    DegenerateBatch(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("class {0} has fewer than 2 segments")]
    EmptyClass(Label),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
