//! Sleep apnea detection from single-lead ECG using distance-profile features.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ecg_io`] reads WFDB-style records (`.hea`/`.dat`) and per-minute
//!    apnea labels (`.apn` or `.apn.txt`).
//! 2. [`preprocess`] band-pass filters the signal, cuts five-minute analysis
//!    windows around every labeled minute and rejects implausible heart rates.
//! 3. [`beat_detection`] finds R peaks and derives P peaks from them.
//! 4. [`mp_features`] builds the pairwise Euclidean distance matrix between
//!    P-anchored subsequences and reduces it to MinDP/MaxDP/MeanDP channels.
//! 5. [`neural_net`] trains a small LeNet-5 style 1D CNN on those channels and
//!    [`evaluation`] scores it per minute and per recording (AHI).
//!
//! [`synthetic`] generates labeled ECG with known fiducials so every stage can
//! be exercised without the real dataset.
//!
//! Data-parallel loops go through [`exec::Execution`]. With the `parallel`
//! feature (default) they run on rayon; without it, or with
//! [`exec::Execution::Sequential`], they run on the calling thread. Both paths
//! produce bit-identical results.

pub mod beat_detection;
pub mod ecg_io;
pub mod evaluation;
pub mod exec;
pub mod mp_features;
pub mod neural_net;
pub mod preprocess;
pub mod synthetic;

mod label;

pub use label::Label;
