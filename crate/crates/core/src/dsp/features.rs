use std::f64::consts::PI;

use super::stft::{magnitude, stft};
use super::{mel_filterbank, AudioBuffer, DspError, Result, StftConfig};
use crate::Matrix;

/// 13 cepstra plus first and second order deltas.
pub const MFCC_DIM: usize = 39;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc39,
    Mel80,
    Linear,
    Custom(usize),
}

impl FeatureKind {
    /// Frame dimensionality, when fixed by the kind.
    pub fn dim(&self) -> Option<usize> {
        match self {
            FeatureKind::Mfcc39 => Some(MFCC_DIM),
            FeatureKind::Mel80 => Some(80),
            FeatureKind::Linear => None,
            FeatureKind::Custom(d) => Some(*d),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FeatureKind::Mfcc39 => "mfcc39".into(),
            FeatureKind::Mel80 => "mel80".into(),
            FeatureKind::Linear => "linear".into(),
            FeatureKind::Custom(d) => format!("custom{d}"),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mfcc39" | "mfcc" => Some(FeatureKind::Mfcc39),
            "mel80" | "mel" => Some(FeatureKind::Mel80),
            "linear" => Some(FeatureKind::Linear),
            other => other
                .strip_prefix("custom")
                .and_then(|d| d.parse().ok())
                .map(FeatureKind::Custom),
        }
    }
}

/// Time-major `T × D` frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Matrix,
    pub kind: FeatureKind,
    /// Frames per second.
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(frames: Matrix, kind: FeatureKind, frame_rate: f64) -> Self {
        Self {
            frames,
            kind,
            frame_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub stft: StftConfig,
    /// Mel bands feeding the cepstrum.
    pub mfcc_mel_bands: usize,
    pub n_cepstra: usize,
    /// Keep c0 (true) or replace it with frame log-energy (false).
    pub use_c0: bool,
    pub log_floor: f64,
    pub delta_width: usize,
}

impl FeatureConfig {
    pub fn new(kind: FeatureKind, sample_rate: u32) -> Self {
        Self {
            kind,
            stft: StftConfig::speech(sample_rate),
            mfcc_mel_bands: 40,
            n_cepstra: 13,
            use_c0: true,
            log_floor: 1e-10,
            delta_width: 2,
        }
    }

    /// Stable textual form, used for cache keys and run reports.
    pub fn describe(&self) -> String {
        format!(
            "kind={} fft={} win={} hop={} window={} mfcc_mel={} cepstra={} c0={} floor={:e} delta={}",
            self.kind.name(),
            self.stft.fft_size,
            self.stft.window_length,
            self.stft.hop_length,
            self.stft.window.name(),
            self.mfcc_mel_bands,
            self.n_cepstra,
            self.use_c0,
            self.log_floor,
            self.delta_width
        )
    }
}

/// Regression deltas `d_t = Σ n (c[t+n] − c[t−n]) / (2 Σ n²)` with edge
/// frames replicated.
pub fn deltas(features: &Matrix, width: usize) -> Matrix {
    let (t_len, dim) = (features.rows(), features.cols());
    let mut out = Matrix::zeros(t_len, dim);
    if width == 0 || t_len == 0 {
        return out;
    }
    let denom = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |i: isize| i.clamp(0, t_len as isize - 1) as usize;
    for t in 0..t_len {
        let row = out.row_mut(t);
        for n in 1..=width {
            let fwd = features.row(clamp(t as isize + n as isize));
            let back = features.row(clamp(t as isize - n as isize));
            for d in 0..dim {
                row[d] += n as f64 * (fwd[d] - back[d]);
            }
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

/// Orthonormal DCT-II, first `n_out` coefficients.
fn dct2_ortho(input: &[f64], n_out: usize) -> Vec<f64> {
    let n = input.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = input
                .iter()
                .enumerate()
                .map(|(i, &x)| x * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            s * scale
        })
        .collect()
}

fn power_frames(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Matrix> {
    audio.validate()?;
    let mag = magnitude(&stft(audio, cfg)?);
    let data = mag.as_slice().iter().map(|m| m * m).collect();
    Ok(Matrix::from_vec(mag.n_frames(), mag.n_bins(), data))
}

fn log_mel(power: &Matrix, fb: &Matrix, floor: f64) -> Matrix {
    let mut out = Matrix::zeros(power.rows(), fb.rows());
    for t in 0..power.rows() {
        let p = power.row(t);
        for (m, band) in fb.iter_rows().enumerate() {
            let e: f64 = band.iter().zip(p).map(|(w, x)| w * x).sum();
            out[(t, m)] = e.max(floor).ln();
        }
    }
    out
}

pub fn log_mel_spectrogram(
    audio: &AudioBuffer,
    cfg: &StftConfig,
    n_mels: usize,
    floor: f64,
) -> Result<Matrix> {
    let fb = mel_filterbank(n_mels, cfg, audio.sample_rate)?;
    Ok(log_mel(&power_frames(audio, cfg)?, &fb, floor))
}

/// 13 cepstra (DCT-II of floored log-mel energies) with Δ and Δ² appended.
pub fn mfcc(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    if cfg.n_cepstra > cfg.mfcc_mel_bands {
        return Err(DspError::Config(format!(
            "{} cepstra requested from {} mel bands",
            cfg.n_cepstra, cfg.mfcc_mel_bands
        )));
    }
    let power = power_frames(audio, &cfg.stft)?;
    let fb = mel_filterbank(cfg.mfcc_mel_bands, &cfg.stft, audio.sample_rate)?;
    let lm = log_mel(&power, &fb, cfg.log_floor);
    let mut cep = Matrix::zeros(lm.rows(), cfg.n_cepstra);
    for t in 0..lm.rows() {
        let c = dct2_ortho(lm.row(t), cfg.n_cepstra);
        cep.row_mut(t).copy_from_slice(&c);
        if !cfg.use_c0 {
            let energy: f64 = power.row(t).iter().sum();
            cep[(t, 0)] = energy.max(cfg.log_floor).ln();
        }
    }
    let d1 = deltas(&cep, cfg.delta_width);
    let d2 = deltas(&d1, cfg.delta_width);
    let dim = 3 * cfg.n_cepstra;
    let mut frames = Matrix::zeros(cep.rows(), dim);
    for t in 0..cep.rows() {
        let row = frames.row_mut(t);
        row[..cfg.n_cepstra].copy_from_slice(cep.row(t));
        row[cfg.n_cepstra..2 * cfg.n_cepstra].copy_from_slice(d1.row(t));
        row[2 * cfg.n_cepstra..].copy_from_slice(d2.row(t));
    }
    let kind = if dim == MFCC_DIM {
        FeatureKind::Mfcc39
    } else {
        FeatureKind::Custom(dim)
    };
    Ok(FeatureSequence::new(
        frames,
        kind,
        audio.sample_rate as f64 / cfg.stft.hop_length as f64,
    ))
}

/// Computes the feature kind named in `cfg`.
pub fn extract_features(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let rate = audio.sample_rate as f64 / cfg.stft.hop_length as f64;
    match cfg.kind {
        FeatureKind::Mfcc39 => mfcc(audio, cfg),
        FeatureKind::Mel80 => Ok(FeatureSequence::new(
            log_mel_spectrogram(audio, &cfg.stft, 80, cfg.log_floor)?,
            FeatureKind::Mel80,
            rate,
        )),
        FeatureKind::Linear => {
            audio.validate()?;
            let mag = magnitude(&stft(audio, &cfg.stft)?);
            let (t, b) = (mag.n_frames(), mag.n_bins());
            Ok(FeatureSequence::new(
                Matrix::from_vec(t, b, mag.into_vec()),
                FeatureKind::Linear,
                rate,
            ))
        }
        FeatureKind::Custom(_) => Err(DspError::Config(
            "custom features are supplied externally, not extracted".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_has_zero_deltas() {
        let m = Matrix::from_vec(6, 2, [3.5, -1.0].repeat(6));
        assert!(deltas(&m, 2).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_has_unit_interior_delta() {
        let m = Matrix::from_vec(10, 1, (0..10).map(|t| t as f64).collect());
        let d = deltas(&m, 2);
        for t in 2..8 {
            assert!((d[(t, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deltas_match_scalar_oracle() {
        let c = [0.3, -1.2, 2.5, 0.7, 4.0];
        // brute-force: replicate edges explicitly, apply the regression sum
        let padded: Vec<f64> = [c[0], c[0]]
            .iter()
            .chain(c.iter())
            .chain([c[4], c[4]].iter())
            .copied()
            .collect();
        let expected: Vec<f64> = (0..5)
            .map(|t| {
                let p = t + 2;
                (1.0 * (padded[p + 1] - padded[p - 1]) + 2.0 * (padded[p + 2] - padded[p - 2]))
                    / 10.0
            })
            .collect();
        let got = deltas(&Matrix::from_vec(5, 1, c.to_vec()), 2);
        for t in 0..5 {
            assert!((got[(t, 0)] - expected[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn mfcc_is_39_dimensional_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = AudioBuffer::new(
            (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect(),
            16_000,
        );
        let cfg = FeatureConfig::new(FeatureKind::Mfcc39, 16_000);
        let f = mfcc(&noise, &cfg).unwrap();
        assert_eq!(f.dim(), MFCC_DIM);
        assert_eq!(f.kind, FeatureKind::Mfcc39);
        assert!(f.frames.is_finite());
        assert!((f.frame_rate - 100.0).abs() < 1e-12);
    }

    #[test]
    fn silence_hits_log_floor_without_nan() {
        let cfg = FeatureConfig::new(FeatureKind::Mfcc39, 16_000);
        let f = mfcc(&AudioBuffer::new(vec![0.0; 4000], 16_000), &cfg).unwrap();
        assert!(f.frames.is_finite());
        // deltas of a time-constant track
        for t in 0..f.len() {
            for d in 13..39 {
                assert_eq!(f.frames[(t, d)], 0.0);
            }
        }
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let c = dct2_ortho(&[2.0; 8], 4);
        assert!((c[0] - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn feature_kind_names_round_trip() {
        for k in [
            FeatureKind::Mfcc39,
            FeatureKind::Mel80,
            FeatureKind::Linear,
            FeatureKind::Custom(64),
        ] {
            assert_eq!(FeatureKind::from_name(&k.name()), Some(k));
        }
    }

    #[test]
    fn mel80_dimensions() {
        let audio = AudioBuffer::new((0..4000).map(|i| (i as f64 * 0.05).sin()).collect(), 16_000);
        let f = extract_features(&audio, &FeatureConfig::new(FeatureKind::Mel80, 16_000)).unwrap();
        assert_eq!(f.dim(), 80);
        let lin =
            extract_features(&audio, &FeatureConfig::new(FeatureKind::Linear, 16_000)).unwrap();
        assert_eq!(lin.dim(), 1025);
    }
}
