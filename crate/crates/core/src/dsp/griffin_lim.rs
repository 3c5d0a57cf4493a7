use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::stft::{istft_with, stft_with, FftPair};
use super::{AudioBuffer, ComplexSpectrogram, DspError, MagnitudeSpectrogram, Result, StftConfig};

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub audio: AudioBuffer,
    /// Spectral convergence of each iterate, first to last.
    pub errors: Vec<f64>,
}

impl GriffinLimOutput {
    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(0.0)
    }
}

/// Multiplicity of a half-spectrum bin in the full two-sided spectrum.
fn bin_weight(k: usize, n_bins: usize) -> f64 {
    if k == 0 || k == n_bins - 1 {
        1.0
    } else {
        2.0
    }
}

/// `‖|S| − M‖_F / ‖M‖_F` over the two-sided spectrum. Zero when `M` is zero.
pub fn spectral_convergence(estimate: &ComplexSpectrogram, target: &MagnitudeSpectrogram) -> f64 {
    let bins = target.n_bins();
    let frames = estimate.n_frames().min(target.n_frames());
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..frames {
        for (k, (s, m)) in estimate.frame(t).iter().zip(target.frame(t)).enumerate() {
            let w = bin_weight(k, bins);
            num += w * (s.norm() - m).powi(2);
            den += w * m * m;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Iterative phase recovery: start from uniform random phase, then
/// alternate inverse STFT, forward STFT and magnitude replacement.
pub fn griffin_lim(
    mag: &MagnitudeSpectrogram,
    cfg: &StftConfig,
    iterations: usize,
    seed: u64,
    sample_rate: u32,
) -> Result<GriffinLimOutput> {
    if iterations == 0 {
        return Err(DspError::Input(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    if mag.config() != cfg {
        return Err(DspError::ConfigMismatch {
            expected: Box::new(*cfg),
            found: Box::new(*mag.config()),
        });
    }
    if let Some(bad) = mag.as_slice().iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(DspError::Input(format!(
            "magnitudes must be finite and nonnegative, found {bad}"
        )));
    }
    cfg.validate()?;
    let fft = FftPair::new(cfg.fft_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = mag
        .as_slice()
        .iter()
        .map(|&m| Complex64::from_polar(m, rng.random_range(-PI..PI)))
        .collect();
    let mut estimate = ComplexSpectrogram::from_vec(mag.n_frames(), *cfg, data);

    let mut errors = Vec::with_capacity(iterations);
    let mut samples = Vec::new();
    for _ in 0..iterations {
        samples = istft_with(&estimate, &fft);
        if samples.len() < cfg.window_length {
            break;
        }
        let rebuilt = stft_with(&samples, cfg, &fft)?;
        errors.push(spectral_convergence(&rebuilt, mag));
        for (e, (r, &m)) in estimate
            .as_mut_slice()
            .iter_mut()
            .zip(rebuilt.as_slice().iter().zip(mag.as_slice()))
        {
            let n = r.norm();
            *e = if n > 0.0 {
                r * (m / n)
            } else {
                Complex64::new(m, 0.0)
            };
        }
    }
    Ok(GriffinLimOutput {
        audio: AudioBuffer::new(samples, sample_rate),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft};

    fn chirp(len: usize) -> AudioBuffer {
        let sr = 16_000.0;
        let samples = (0..len)
            .map(|n| {
                let t = n as f64 / sr;
                0.5 * (2.0 * PI * (200.0 + 400.0 * t) * t).sin()
                    + 0.2 * (2.0 * PI * 1300.0 * t).sin()
            })
            .collect();
        AudioBuffer::new(samples, 16_000)
    }

    fn small_cfg() -> StftConfig {
        StftConfig {
            fft_size: 512,
            window_length: 400,
            hop_length: 160,
            window: crate::dsp::Window::Hann,
        }
    }

    #[test]
    fn error_falls_and_is_monotone() {
        let cfg = small_cfg();
        let mag = magnitude(&stft(&chirp(8000), &cfg).unwrap());
        let one = griffin_lim(&mag, &cfg, 1, 3, 16_000).unwrap();
        let many = griffin_lim(&mag, &cfg, 60, 3, 16_000).unwrap();
        assert!(many.final_error() < one.final_error());
        for w in many.errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_magnitude_gives_silence() {
        let cfg = small_cfg();
        let mag = MagnitudeSpectrogram::from_vec(10, cfg, vec![0.0; 10 * cfg.n_bins()]);
        let out = griffin_lim(&mag, &cfg, 5, 1, 16_000).unwrap();
        assert!(out.audio.samples.iter().all(|&s| s == 0.0));
        assert_eq!(out.final_error(), 0.0);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = small_cfg();
        let mag = magnitude(&stft(&chirp(4000), &cfg).unwrap());
        let a = griffin_lim(&mag, &cfg, 10, 42, 16_000).unwrap();
        let b = griffin_lim(&mag, &cfg, 10, 42, 16_000).unwrap();
        assert_eq!(a.audio.samples, b.audio.samples);
        let c = griffin_lim(&mag, &cfg, 10, 43, 16_000).unwrap();
        assert_ne!(a.audio.samples, c.audio.samples);
    }

    #[test]
    fn rejects_non_finite_magnitudes() {
        let cfg = small_cfg();
        let mut data = vec![1.0; 4 * cfg.n_bins()];
        data[3] = f64::NAN;
        let mag = MagnitudeSpectrogram::from_vec(4, cfg, data);
        assert!(matches!(
            griffin_lim(&mag, &cfg, 2, 0, 16_000),
            Err(DspError::Input(_))
        ));
        let mag = MagnitudeSpectrogram::from_vec(4, cfg, vec![1.0; 4 * cfg.n_bins()]);
        assert!(griffin_lim(&mag, &cfg, 0, 0, 16_000).is_err());
    }
}
