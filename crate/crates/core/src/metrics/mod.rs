//! Representation evaluation: DTW distances, ABX discriminability and
//! entropy bitrate.

mod abx;
mod bitrate;
mod dtw;

pub use abx::{abx_score, abx_trial, parse_triples, AbxReport, AbxTriple, CategoryScore};
pub use bitrate::{bitrate, entropy_bits};
pub use dtw::{cosine_distance, cost_matrix, dtw, symmetric_kl, FrameDistance, KL_FLOOR};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
