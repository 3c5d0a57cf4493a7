use super::{DspError, Result, StftConfig};
use crate::Matrix;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist,
/// evaluated at the FFT bin centre frequencies. Unnormalized (peak 1).
pub fn mel_filterbank(n_mels: usize, cfg: &StftConfig, sample_rate: u32) -> Result<Matrix> {
    let n_bins = cfg.n_bins();
    if n_mels == 0 {
        return Err(DspError::Config("n_mels must be at least 1".into()));
    }
    if n_mels > n_bins {
        return Err(DspError::Config(format!(
            "{n_mels} mel bands exceed the {n_bins} available FFT bins"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;

    let mut fb = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(DspError::Config(format!(
                "mel band {m} ({lo:.1}-{hi:.1} Hz) contains no FFT bin; use fewer bands or a larger FFT"
            )));
        }
    }
    Ok(fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Second implementation: natural-log mel formula, filters built by
    /// walking bins per band rather than bands per bin.
    fn reference_filterbank(n_mels: usize, n_fft: usize, sr: f64) -> Vec<Vec<f64>> {
        let to_mel = |f: f64| 1127.0 * (f / 700.0).ln_1p();
        let to_hz = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
        let max_mel = to_mel(sr / 2.0);
        let step = max_mel / (n_mels as f64 + 1.0);
        let n_bins = n_fft / 2 + 1;
        let mut out = vec![vec![0.0; n_bins]; n_mels];
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            for (m, row) in out.iter_mut().enumerate() {
                let l = to_hz(step * m as f64);
                let c = to_hz(step * (m as f64 + 1.0));
                let h = to_hz(step * (m as f64 + 2.0));
                row[k] = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < h {
                    (h - f) / (h - c)
                } else {
                    0.0
                };
            }
        }
        out
    }

    #[test]
    fn matches_reference_row_sums() {
        let cfg = StftConfig::speech(16_000);
        let fb = mel_filterbank(80, &cfg, 16_000).unwrap();
        let reference = reference_filterbank(80, 2048, 16_000.0);
        for (m, r) in reference.iter().enumerate() {
            let ours: f64 = fb.row(m).iter().sum();
            let theirs: f64 = r.iter().sum();
            assert!((ours - theirs).abs() < 1e-6, "band {m}: {ours} vs {theirs}");
        }
    }

    #[test]
    fn rows_nonzero_and_peaks_increase() {
        let cfg = StftConfig::speech(16_000);
        let fb = mel_filterbank(80, &cfg, 16_000).unwrap();
        let mut last_peak = None;
        for row in fb.iter_rows() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            if let Some(p) = last_peak {
                assert!(peak >= p);
            }
            last_peak = Some(peak);
        }
        // strictly increasing band centres
        let top = hz_to_mel(8000.0);
        let centres: Vec<f64> = (1..=80).map(|i| mel_to_hz(top * i as f64 / 81.0)).collect();
        assert!(centres.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn too_many_bands_is_config_error() {
        let cfg = StftConfig {
            fft_size: 64,
            window_length: 64,
            hop_length: 32,
            window: crate::dsp::Window::Hann,
        };
        assert!(matches!(
            mel_filterbank(40, &cfg, 16_000),
            Err(DspError::Config(_))
        ));
        assert!(matches!(
            mel_filterbank(0, &cfg, 16_000),
            Err(DspError::Config(_))
        ));
    }

    #[test]
    fn mel_scale_inverts() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
