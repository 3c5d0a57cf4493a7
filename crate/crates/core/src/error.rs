use thiserror::Error;

use crate::cluster::ClusterError;
use crate::corpus::CorpusError;
use crate::dsp::DspError;
use crate::grad::GradError;
use crate::inverter::InverterError;
use crate::metrics::MetricsError;
use crate::vq::VqError;

/// Any error produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Inverter(#[from] InverterError),
}

pub type Result<T> = std::result::Result<T, Error>;
