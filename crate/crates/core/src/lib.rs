//! Unsupervised discrete acoustic-unit discovery and voice resynthesis.
//!
//! The crate learns frame-level discrete codes from audio (conditional
//! VQ-VAE, minibatch K-Means, diagonal GMM), maps codes back to
//! target-voice linear spectrograms with a multi-scale convolutional
//! inverter trained with MSE plus an adversarial loss, recovers phase with
//! Griffin-Lim, and scores representations by ABX discriminability and
//! bitrate.
//!
//! Modules:
//!
//! - [`dsp`]: STFT/ISTFT, mel filterbank, MFCC with deltas, Griffin-Lim.
//! - [`grad`]: small reverse-mode autodiff engine, layers and Adam.
//! - [`cluster`]: minibatch K-Means, diagonal GMM, time reduction.
//! - [`vq`]: conditional VQ-VAE with straight-through quantization.
//! - [`inverter`]: code-to-spectrogram network, discriminator, synthesis.
//! - [`metrics`]: DTW, ABX and bitrate.
//! - [`corpus`]: WAV I/O, manifests, the tensor bundle container.
//! - [`diagnostics`]: finite-difference gradient checks of every layer
//!   and both training objectives.

pub mod cluster;
pub mod corpus;
pub mod diagnostics;
pub mod dsp;
mod error;
pub mod grad;
pub mod inverter;
mod matrix;
pub mod metrics;
pub mod vq;

pub use dsp::{AudioBuffer, FeatureKind, FeatureSequence, StftConfig};
pub use error::{Error, Result};
pub use matrix::{nearest_row, squared_distance, Matrix};
pub use vq::CodeSequence;
