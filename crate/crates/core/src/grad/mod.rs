//! Reverse-mode automatic differentiation over `f64` tensors, with the
//! layers, optimizer and gradient checker the models in this crate need.

mod adam;
mod check;
mod conv;
mod graph;
mod layers;
mod params;
mod tensor;

#[cfg(test)]
mod tests;

pub use adam::{AdamConfig, AdamState};
pub use check::{
    compare_gradients, grad_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck,
};
pub use graph::{BatchStats, Gradients, Graph, Padding, Var};
pub use layers::{LayerSpec, Mode, Sequential, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<GradError>,
    },
    #[error("invalid graph state: {0}")]
    State(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GradError>;
