//! Semi-supervised seizure prediction from multichannel EEG.
//!
//! The pipeline turns 28-second EEG windows into `n x 56 x 112` STFT magnitude
//! spectrograms, trains a DCGAN on them without labels, reuses the
//! discriminator's convolutional trunk as a frozen feature extractor, and fits
//! a small fully connected head on labeled preictal/interictal windows.
//! Evaluation follows seizure-wise leave-one-out cross-validation with window
//! AUC and SOP/SPH alarm semantics.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: deterministic f64 layer engine with manual backpropagation.
//! - [`signal_io`]: recordings, annotations, file formats, synthetic EEG.
//! - [`preprocess`]: STFT, line-noise bin mask, window extraction, balancing.
//! - [`gan`]: generator/discriminator construction and adversarial training.
//! - [`classifier`]: monitor split, transfer head training, prediction.
//! - [`eval`]: labeling policy, cross-validation plans, ROC/AUC, alarms, reports.

pub mod classifier;
mod container;
pub mod error;
pub mod eval;
pub mod gan;
pub mod preprocess;
pub mod signal_io;
pub mod tensor;

pub use error::{Error, Result};
