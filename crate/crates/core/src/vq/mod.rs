//! Conditional VQ-VAE: a strided convolutional encoder, nearest-neighbour
//! quantization with straight-through gradients, and a decoder conditioned
//! on a learned speaker embedding.

mod codebook;
mod codes;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use codebook::{perplexity, quantize, Codebook};
pub use codes::CodeSequence;
pub use loss::{straight_through, vq_loss, VqLoss};
pub use model::{CodebookInit, SpeakerTable, VqVae, VqVaeConfig, VQVAE_KIND};
pub use train::{train_vqvae, StepMetrics, VqTrainConfig, VqTrainer, VqTraining, VqUtterance};

use crate::cluster::ClusterError;
use crate::corpus::CorpusError;
use crate::grad::GradError;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, VqError>;
