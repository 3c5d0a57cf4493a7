use std::f64::consts::PI;

use super::{AudioBuffer, DspError, Result};

/// Zero crossings of the interpolation kernel on each side.
const HALF_TAPS: usize = 32;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel. The kernel
/// cutoff follows the lower of the two Nyquist rates.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if audio.sample_rate == 0 || target_rate == 0 {
        return Err(DspError::Config("sample rates must be positive".into()));
    }
    if audio.sample_rate == target_rate {
        return Ok(audio.clone());
    }
    let ratio = target_rate as f64 / audio.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS as f64 / cutoff;
    let n_out = (audio.len() as f64 * ratio).round() as usize;
    let x = &audio.samples;
    let out = (0..n_out)
        .map(|n| {
            let centre = n as f64 / ratio;
            let lo = (centre - half_width).ceil().max(0.0) as usize;
            let hi = ((centre + half_width).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = centre - j as f64;
                let taper = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += xj * cutoff * sinc(cutoff * d) * taper;
            }
            acc
        })
        .collect();
    Ok(AudioBuffer::new(out, target_rate))
}
