use super::model::{Inverter, LOG_FLOOR};
use super::{upsample_codes, InverterError, Result};
use crate::dsp::{griffin_lim, AudioBuffer, MagnitudeSpectrogram, Spectrogram};
use crate::{CodeSequence, Matrix};

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub audio: AudioBuffer,
    /// Predicted linear magnitudes, `T_s × bins`.
    pub spectrogram: Matrix,
    /// Griffin-Lim spectral convergence per iteration.
    pub convergence: Vec<f64>,
}

/// A magnitude spectrogram as a `frames × bins` matrix.
pub fn spectrogram_matrix(mag: &MagnitudeSpectrogram) -> Matrix {
    Matrix::from_vec(mag.n_frames(), mag.n_bins(), mag.as_slice().to_vec())
}

/// Root-mean-square difference of log magnitudes over the frames both
/// spectrograms share.
pub fn log_spectral_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(InverterError::Input(format!(
            "spectrograms have {} and {} bins",
            a.cols(),
            b.cols()
        )));
    }
    let frames = a.rows().min(b.rows());
    if frames == 0 {
        return Err(InverterError::Input("empty spectrogram".into()));
    }
    let sum: f64 = (0..frames)
        .flat_map(|t| a.row(t).iter().zip(b.row(t)))
        .map(|(x, y)| ((x + LOG_FLOOR).ln() - (y + LOG_FLOOR).ln()).powi(2))
        .sum();
    Ok((sum / (frames * a.cols()) as f64).sqrt())
}

impl Inverter {
    /// Duplicates the code vectors to the frame rate, predicts magnitudes
    /// and recovers a waveform with Griffin-Lim.
    pub fn synthesize_vectors(
        &self,
        vectors: &Matrix,
        iterations: usize,
        seed: u64,
    ) -> Result<Synthesis> {
        if vectors.cols() != self.config.code_dim {
            return Err(InverterError::Config(format!(
                "code vectors have dimension {}, inverter expects {}",
                vectors.cols(),
                self.config.code_dim
            )));
        }
        let up = upsample_codes(vectors, self.config.time_reduction)?;
        let spectrogram = self.predict_magnitude(&up)?;
        let mag = Spectrogram::from_vec(
            spectrogram.rows(),
            self.config.stft,
            spectrogram.as_slice().to_vec(),
        );
        let gl = griffin_lim(
            &mag,
            &self.config.stft,
            iterations,
            seed,
            self.config.sample_rate,
        )?;
        Ok(Synthesis {
            audio: gl.audio,
            spectrogram,
            convergence: gl.errors,
        })
    }

    /// Synthesis from discrete units. The code model must share the
    /// inverter's time reduction and code dimension.
    pub fn synthesize(
        &self,
        codes: &CodeSequence,
        codebook: &Matrix,
        iterations: usize,
        seed: u64,
    ) -> Result<Synthesis> {
        if codes.reduction != self.config.time_reduction {
            return Err(InverterError::Config(format!(
                "codes have time reduction {}, inverter was trained with {}",
                codes.reduction, self.config.time_reduction
            )));
        }
        if codebook.cols() != self.config.code_dim {
            return Err(InverterError::Config(format!(
                "codebook has dimension {}, inverter expects {}",
                codebook.cols(),
                self.config.code_dim
            )));
        }
        if codes.is_empty() {
            return Err(InverterError::Input("empty code sequence".into()));
        }
        let vectors = codes.to_vectors(codebook).ok_or_else(|| {
            InverterError::Config(format!(
                "codes index a codebook of {} entries, got {} rows",
                codes.codebook_size,
                codebook.rows()
            ))
        })?;
        self.synthesize_vectors(&vectors, iterations, seed)
    }
}
