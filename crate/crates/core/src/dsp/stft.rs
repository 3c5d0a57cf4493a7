use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AudioBuffer, DspError, Result};

/// Overlap-add envelope values below this are treated as unobserved samples.
const ENVELOPE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(&self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hann" => Some(Window::Hann),
            "rectangular" | "rect" => Some(Window::Rectangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl StftConfig {
    /// 25 ms Hann window, 10 ms hop, 2048-point FFT (1025 bins).
    pub fn speech(sample_rate: u32) -> Self {
        Self {
            fft_size: 2048,
            window_length: (sample_rate as usize * 25) / 1000,
            hop_length: (sample_rate as usize * 10) / 1000,
            window: Window::Hann,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples, zero if shorter than a window.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            1 + (len - self.window_length) / self.hop_length
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 {
            return Err(DspError::Config("hop_length must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(self.hop_length <= self.window_length && self.window_length <= self.fft_size) {
            return Err(DspError::Config(format!(
                "need hop ({}) <= window ({}) <= fft ({})",
                self.hop_length, self.window_length, self.fft_size
            )));
        }
        // Weighted overlap-add inversion needs a nonzero squared-window sum at
        // every steady-state sample.
        let w = window_coefficients(self);
        let min_env = (0..self.hop_length)
            .map(|n| {
                (n..self.window_length)
                    .step_by(self.hop_length)
                    .map(|i| w[i] * w[i])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        if min_env <= ENVELOPE_FLOOR {
            return Err(DspError::Config(format!(
                "{} window of length {} does not overlap-add to a nonzero envelope at hop {}",
                self.window.name(),
                self.window_length,
                self.hop_length
            )));
        }
        Ok(())
    }
}

pub fn window_coefficients(cfg: &StftConfig) -> Vec<f64> {
    let n = cfg.window_length;
    match cfg.window {
        Window::Hann => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect(),
        Window::Rectangular => vec![1.0; n],
    }
}

/// Time-major spectrogram: `frames × bins` values plus the STFT configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    frames: usize,
    bins: usize,
    data: Vec<T>,
    config: StftConfig,
}

pub type ComplexSpectrogram = Spectrogram<Complex64>;
pub type MagnitudeSpectrogram = Spectrogram<f64>;

impl<T: Copy> Spectrogram<T> {
    pub fn from_vec(frames: usize, config: StftConfig, data: Vec<T>) -> Self {
        let bins = config.n_bins();
        assert_eq!(data.len(), frames * bins, "spectrogram data length");
        Self {
            frames,
            bins,
            data,
            config,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    pub fn n_bins(&self) -> usize {
        self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

pub(crate) struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    stft_with(&audio.samples, cfg, &FftPair::new(cfg.fft_size))
}

pub(crate) fn stft_with(
    samples: &[f64],
    cfg: &StftConfig,
    fft: &FftPair,
) -> Result<ComplexSpectrogram> {
    if samples.len() < cfg.window_length {
        return Err(DspError::EmptyInput {
            len: samples.len(),
            window: cfg.window_length,
        });
    }
    let window = window_coefficients(cfg);
    let frames = cfg.frame_count(samples.len());
    let bins = cfg.n_bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..frames {
        let start = t * cfg.hop_length;
        buf.fill(Complex64::new(0.0, 0.0));
        for (i, (&s, &w)) in samples[start..start + cfg.window_length]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[i].re = s * w;
        }
        fft.forward.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        bins,
        data,
        config: *cfg,
    })
}

/// Elementwise magnitude of a complex spectrogram.
pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    Spectrogram {
        frames: spec.frames,
        bins: spec.bins,
        data: spec.data.iter().map(|c| c.norm()).collect(),
        config: spec.config,
    }
}

/// Weighted overlap-add inverse: the least-squares signal whose STFT is
/// closest to `spec`. Output length is `(T-1)·hop + window_length`.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, sample_rate: u32) -> Result<AudioBuffer> {
    if spec.config != *cfg {
        return Err(DspError::ConfigMismatch {
            expected: Box::new(*cfg),
            found: Box::new(spec.config),
        });
    }
    cfg.validate()?;
    let samples = istft_with(spec, &FftPair::new(cfg.fft_size));
    Ok(AudioBuffer::new(samples, sample_rate))
}

pub(crate) fn istft_with(spec: &ComplexSpectrogram, fft: &FftPair) -> Vec<f64> {
    let cfg = &spec.config;
    if spec.frames == 0 {
        return Vec::new();
    }
    let n = cfg.fft_size;
    let window = window_coefficients(cfg);
    let len = (spec.frames - 1) * cfg.hop_length + cfg.window_length;
    let mut out = vec![0.0; len];
    let mut envelope = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..spec.bins].copy_from_slice(frame);
        for k in 1..n / 2 {
            buf[n - k] = frame[k].conj();
        }
        fft.inverse.process(&mut buf);
        let start = t * cfg.hop_length;
        for i in 0..cfg.window_length {
            out[start + i] += buf[i].re * scale * window[i];
            envelope[start + i] += window[i] * window[i];
        }
    }
    for (o, e) in out.iter_mut().zip(&envelope) {
        *o = if *e > ENVELOPE_FLOOR { *o / e } else { 0.0 };
    }
    out
}
