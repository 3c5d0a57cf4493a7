//! Deterministic signal processing: STFT/ISTFT, mel filterbank, MFCC with
//! deltas, Griffin-Lim phase reconstruction and resampling.

mod features;
mod griffin_lim;
mod mel;
mod resample;
mod stft;

pub use features::{
    deltas, extract_features, log_mel_spectrogram, mfcc, FeatureConfig, FeatureKind,
    FeatureSequence, MFCC_DIM,
};
pub use griffin_lim::{griffin_lim, spectral_convergence, GriffinLimOutput};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use resample::resample;
pub use stft::{
    istft, magnitude, stft, window_coefficients, ComplexSpectrogram, MagnitudeSpectrogram,
    Spectrogram, StftConfig, Window,
};

use thiserror::Error;

/// Sample rate every corpus is resampled to on ingest.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("audio has {len} samples, shorter than one {window}-sample window")]
    EmptyInput { len: usize, window: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("spectrogram was produced with {found:?} but {expected:?} was requested")]
    ConfigMismatch {
        expected: Box<StftConfig>,
        found: Box<StftConfig>,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono waveform with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Checks the processing preconditions: nonempty, positive rate, finite samples.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(DspError::Input("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(DspError::EmptyInput { len: 0, window: 1 });
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::Input(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}
