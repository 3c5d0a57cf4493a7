//! Deterministic synthetic audio: a multi-speaker "tone" corpus of
//! formant-shaped harmonic segments with known category labels, and a
//! longer speech-like utterance for DSP checks.
//!
//! Categories are vowel-like formant patterns; speakers differ in pitch,
//! formant scaling and spectral tilt, so category identity and speaker
//! identity are separable factors.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{save_wav, write_atomic, Manifest, ManifestEntry, Result};
use crate::metrics::AbxTriple;
use crate::AudioBuffer;

/// Three formant frequencies (Hz) per category, adult male reference.
pub const CATEGORY_FORMANTS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
    [570.0, 840.0, 2410.0],
    [530.0, 1840.0, 2480.0],
    [440.0, 1020.0, 2240.0],
];

/// Voice parameters of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    /// Harmonic amplitude slope, dB per octave above f0.
    pub tilt_db_per_octave: f64,
}

impl Voice {
    /// Alternates a low, dark voice and a high, bright one.
    pub fn for_speaker(index: usize) -> Voice {
        let i = index as f64;
        if index.is_multiple_of(2) {
            Voice {
                f0: 105.0 + 7.0 * i,
                formant_scale: 1.0 + 0.02 * i,
                tilt_db_per_octave: -12.0,
            }
        } else {
            Voice {
                f0: 205.0 + 7.0 * i,
                formant_scale: 1.17 + 0.02 * i,
                tilt_db_per_octave: -4.0,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToneCorpusConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub segments_per_utterance: usize,
    pub categories: usize,
    /// Segment duration range in seconds.
    pub segment_seconds: (f64, f64),
    /// Standard deviation of additive white noise.
    pub noise: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for ToneCorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 2,
            utterances_per_speaker: 8,
            segments_per_utterance: 6,
            categories: 4,
            segment_seconds: (0.08, 0.16),
            noise: 0.002,
            sample_rate: 16_000,
            seed: 7,
        }
    }
}

/// A labelled stretch of samples, `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub category: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker_id: String,
    pub speaker: usize,
    pub audio: AudioBuffer,
    pub segments: Vec<Segment>,
}

impl SyntheticUtterance {
    /// Category of the segment covering sample `n`.
    pub fn category_at(&self, n: usize) -> Option<usize> {
        self.segments
            .iter()
            .find(|s| (s.start..s.end).contains(&n))
            .map(|s| s.category)
    }
}

/// Samples between amplitude updates in the additive synthesizer.
const CONTROL_BLOCK: usize = 32;
/// Crossfade between adjacent segments, seconds.
const CROSSFADE: f64 = 0.01;

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, &fc)| {
            let bw = 60.0 + 0.05 * fc;
            // later formants are weaker
            let level = 1.0 / (1.0 + i as f64);
            level / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum()
}

/// Additive harmonic synthesis. `f0` and `formants` give the control values
/// at a sample index; harmonic phases run continuously.
fn render(
    len: usize,
    sample_rate: u32,
    tilt_db_per_octave: f64,
    f0: impl Fn(usize) -> f64,
    formants: impl Fn(usize) -> [f64; 3],
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let ceiling = 0.45 * sr;
    let max_harmonics = (ceiling / 60.0) as usize;
    let mut phases = vec![0.0f64; max_harmonics];
    let mut amps = vec![0.0f64; max_harmonics];
    let mut out = vec![0.0; len];
    for (n, y) in out.iter_mut().enumerate() {
        let f = f0(n);
        if n % CONTROL_BLOCK == 0 {
            let fm = formants(n);
            for (k, a) in amps.iter_mut().enumerate() {
                let fk = f * (k + 1) as f64;
                *a = if fk < ceiling {
                    let tilt = 10f64.powf(tilt_db_per_octave * ((k + 1) as f64).log2() / 20.0);
                    tilt * formant_gain(fk, &fm)
                } else {
                    0.0
                };
            }
        }
        let mut acc = 0.0;
        for (k, (p, a)) in phases.iter_mut().zip(&amps).enumerate() {
            if *a == 0.0 {
                continue;
            }
            acc += a * p.sin();
            *p = (*p + 2.0 * PI * f * (k + 1) as f64 / sr) % (2.0 * PI);
        }
        *y = acc;
    }
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Renders one utterance from a segment plan.
pub fn synthesize_segments(
    plan: &[(usize, usize)],
    voice: Voice,
    noise: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> (AudioBuffer, Vec<Segment>) {
    let mut segments = Vec::with_capacity(plan.len());
    let mut start = 0;
    for &(category, len) in plan {
        segments.push(Segment {
            category,
            start,
            end: start + len,
        });
        start += len;
    }
    let total = start;
    let fade = (CROSSFADE * sample_rate as f64) as usize;
    let scaled = |c: usize| CATEGORY_FORMANTS[c].map(|f| f * voice.formant_scale);
    let formants = |n: usize| {
        let i = segments
            .iter()
            .position(|s| n < s.end)
            .unwrap_or(segments.len() - 1);
        let cur = scaled(segments[i].category);
        let into = n - segments[i].start;
        if i == 0 || into >= fade {
            return cur;
        }
        let prev = scaled(segments[i - 1].category);
        let w = into as f64 / fade as f64;
        [0, 1, 2].map(|j| prev[j] + w * (cur[j] - prev[j]))
    };
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);
    let sr = sample_rate as f64;
    let f0 =
        |n: usize| voice.f0 * (1.0 + 0.01 * (2.0 * PI * 5.0 * n as f64 / sr + vibrato_phase).sin());
    let mut samples = render(total, sample_rate, voice.tilt_db_per_octave, f0, formants);
    normalize_peak(&mut samples, 0.5);
    for s in samples.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *s += noise * z;
    }
    (AudioBuffer::new(samples, sample_rate), segments)
}

/// Utterances `s{speaker}_{n:04}` with random category sequences.
pub fn tone_corpus(cfg: &ToneCorpusConfig) -> Vec<SyntheticUtterance> {
    assert!(
        (2..=CATEGORY_FORMANTS.len()).contains(&cfg.categories),
        "categories must be within 2..={}",
        CATEGORY_FORMANTS.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sr = cfg.sample_rate as f64;
    let (lo, hi) = cfg.segment_seconds;
    let mut out = Vec::new();
    for s in 0..cfg.speakers {
        let voice = Voice::for_speaker(s);
        for u in 0..cfg.utterances_per_speaker {
            let mut plan = Vec::with_capacity(cfg.segments_per_utterance);
            let mut prev = usize::MAX;
            for _ in 0..cfg.segments_per_utterance {
                let mut c = rng.random_range(0..cfg.categories);
                if c == prev {
                    c = (c + 1) % cfg.categories;
                }
                prev = c;
                let secs = if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                };
                plan.push((c, (secs * sr) as usize));
            }
            let (audio, segments) =
                synthesize_segments(&plan, voice, cfg.noise, cfg.sample_rate, &mut rng);
            out.push(SyntheticUtterance {
                id: format!("s{s}_{u:04}"),
                speaker_id: format!("s{s}"),
                speaker: s,
                audio,
                segments,
            });
        }
    }
    out
}

/// Single-category items `item_s{speaker}_c{category}_{n}` for ABX tests.
pub fn category_items(
    cfg: &ToneCorpusConfig,
    per_cell: usize,
    seconds: f64,
) -> Vec<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let len = (seconds * cfg.sample_rate as f64) as usize;
    let mut out = Vec::new();
    for s in 0..cfg.speakers {
        for c in 0..cfg.categories {
            for n in 0..per_cell {
                let (audio, segments) = synthesize_segments(
                    &[(c, len)],
                    Voice::for_speaker(s),
                    cfg.noise,
                    cfg.sample_rate,
                    &mut rng,
                );
                out.push(SyntheticUtterance {
                    id: format!("item_s{s}_c{c}_{n}"),
                    speaker_id: format!("s{s}"),
                    speaker: s,
                    audio,
                    segments,
                });
            }
        }
    }
    out
}

/// Within-speaker triples over single-category items: for every ordered
/// category pair, every A/X pair of distinct same-category items and the
/// first item of the other category as B.
pub fn category_triples(items: &[SyntheticUtterance]) -> Vec<AbxTriple> {
    let cat = |u: &SyntheticUtterance| u.segments[0].category;
    let mut out = Vec::new();
    for a in items {
        for x in items {
            if a.id == x.id || a.speaker != x.speaker || cat(a) != cat(x) {
                continue;
            }
            for b in items {
                if b.speaker == a.speaker
                    && cat(b) != cat(a)
                    && !out.iter().any(|t: &AbxTriple| {
                        t.a == a.id && t.x == x.id && t.category_b == format!("c{}", cat(b))
                    })
                {
                    out.push(AbxTriple {
                        a: a.id.clone(),
                        b: b.id.clone(),
                        x: x.id.clone(),
                        category_a: format!("c{}", cat(a)),
                        category_b: format!("c{}", cat(b)),
                    });
                }
            }
        }
    }
    out
}

/// Writes `wav/<id>.wav`, `manifest.tsv` and `labels.tsv` under `dir`;
/// returns the manifest path. Label lines are
/// `id<TAB>category:start:end ...` in samples.
pub fn write_corpus(dir: &Path, utterances: &[SyntheticUtterance]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(utterances.len());
    let mut labels = String::new();
    for u in utterances {
        let path = dir.join("wav").join(format!("{}.wav", u.id));
        save_wav(&path, &u.audio)?;
        entries.push(ManifestEntry {
            utterance_id: u.id.clone(),
            audio_path: path,
            speaker_id: u.speaker_id.clone(),
            duration: Some(u.audio.duration_seconds()),
        });
        let segs: Vec<String> = u
            .segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.category, s.start, s.end))
            .collect();
        labels.push_str(&format!("{}\t{}\n", u.id, segs.join(" ")));
    }
    let manifest = Manifest {
        entries,
        sample_rate: utterances.first().map_or(16_000, |u| u.audio.sample_rate),
    };
    let path = dir.join("manifest.tsv");
    manifest.save(&path)?;
    write_atomic(&dir.join("labels.tsv"), labels.as_bytes())?;
    Ok(path)
}

/// Writes ABX triples in the `A B X category_a category_b` line format.
pub fn triples_text(triples: &[AbxTriple]) -> String {
    triples
        .iter()
        .map(|t| {
            format!(
                "{} {} {} {} {}\n",
                t.a, t.b, t.x, t.category_a, t.category_b
            )
        })
        .collect()
}

/// A 1.6 s speech-like signal: voiced vowel stretches with a falling,
/// jittered pitch contour and formant glides, separated by noise bursts
/// and short pauses.
pub fn speech_like_utterance(seed: u64, sample_rate: u32) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let len = (1.6 * sr) as usize;
    // (start s, end s, kind) where kind: Some(vowel) voiced, None fricative
    let plan: [(f64, f64, Option<usize>); 7] = [
        (0.05, 0.30, Some(0)),
        (0.30, 0.38, None),
        (0.38, 0.62, Some(1)),
        (0.70, 0.95, Some(3)),
        (0.95, 1.05, None),
        (1.05, 1.35, Some(2)),
        (1.35, 1.50, Some(5)),
    ];
    let voiced_at = |n: usize| {
        let t = n as f64 / sr;
        plan.iter()
            .position(|(a, b, k)| k.is_some() && t >= *a && t < *b)
    };
    let jitter: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f0 = |n: usize| {
        let t = n as f64 / sr;
        let j = jitter[(t * 40.0) as usize % jitter.len()];
        140.0 - 30.0 * t / 1.6 + 3.0 * j
    };
    let formants = |n: usize| {
        let i = voiced_at(n).unwrap_or(0);
        let cur = CATEGORY_FORMANTS[plan[i].2.unwrap_or(0)];
        // glide from the previous vowel over the first 40 ms
        let prev_vowel = plan[..i].iter().rev().find_map(|p| p.2);
        let into = n as f64 / sr - plan[i].0;
        match prev_vowel {
            Some(p) if into < 0.04 => {
                let w = into / 0.04;
                let prev = CATEGORY_FORMANTS[p];
                [0, 1, 2].map(|j| prev[j] + w * (cur[j] - prev[j]))
            }
            _ => cur,
        }
    };
    let voiced = render(len, sample_rate, -9.0, f0, formants);
    let mut out = vec![0.0; len];
    let mut prev_noise = 0.0;
    for (n, y) in out.iter_mut().enumerate() {
        let t = n as f64 / sr;
        let z: f64 = StandardNormal.sample(&mut rng);
        // first difference tilts the noise towards high frequencies
        let hiss = z - prev_noise;
        prev_noise = z;
        let env = |a: f64, b: f64| {
            let ramp = 0.015;
            ((t - a) / ramp).clamp(0.0, 1.0) * ((b - t) / ramp).clamp(0.0, 1.0)
        };
        *y = plan
            .iter()
            .map(|&(a, b, k)| match k {
                Some(_) => env(a, b) * voiced[n],
                None => env(a, b) * 0.08 * hiss,
            })
            .sum::<f64>()
            + 1e-3 * z;
    }
    normalize_peak(&mut out, 0.6);
    AudioBuffer::new(out, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft, StftConfig};

    fn small() -> ToneCorpusConfig {
        ToneCorpusConfig {
            utterances_per_speaker: 2,
            segments_per_utterance: 3,
            ..ToneCorpusConfig::default()
        }
    }

    #[test]
    fn corpus_is_deterministic_and_labelled() {
        let a = tone_corpus(&small());
        assert_eq!(a, tone_corpus(&small()));
        assert_eq!(a.len(), 4);
        for u in &a {
            assert_eq!(u.segments.last().unwrap().end, u.audio.len());
            assert!(u.audio.samples.iter().all(|s| s.abs() < 1.0));
            for w in u.segments.windows(2) {
                assert_ne!(w[0].category, w[1].category);
            }
        }
    }

    #[test]
    fn speakers_differ_in_pitch() {
        // the strongest low-frequency bin tracks f0 or a low harmonic
        let cfg = small();
        let items = category_items(&cfg, 1, 0.3);
        let peak_bin = |a: &AudioBuffer| {
            let m = magnitude(&stft(a, &StftConfig::speech(16_000)).unwrap());
            let f = m.frame(m.n_frames() / 2);
            (1..60).max_by(|&i, &j| f[i].total_cmp(&f[j])).unwrap()
        };
        let low = items.iter().find(|u| u.speaker == 0).unwrap();
        let high = items.iter().find(|u| u.speaker == 1).unwrap();
        assert!(peak_bin(&low.audio) != peak_bin(&high.audio));
    }

    #[test]
    fn triples_are_within_speaker_and_cross_category() {
        let items = category_items(&small(), 2, 0.1);
        let t = category_triples(&items);
        // 2 speakers × 4 categories × 2 ordered A/X pairs × 3 other categories
        assert_eq!(t.len(), 2 * 4 * 2 * 3);
        let find = |id: &str| items.iter().find(|u| u.id == id).unwrap();
        for tr in &t {
            let (a, b, x) = (find(&tr.a), find(&tr.b), find(&tr.x));
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(a.segments[0].category, x.segments[0].category);
            assert_ne!(a.segments[0].category, b.segments[0].category);
        }
    }

    #[test]
    fn written_corpus_validates() {
        let dir = tempfile::tempdir().unwrap();
        let utts = tone_corpus(&small());
        let path = write_corpus(dir.path(), &utts).unwrap();
        let m = super::super::validate_manifest(&path).unwrap();
        assert_eq!(m.len(), utts.len());
        assert_eq!(m.speakers(), vec!["s0", "s1"]);
    }

    #[test]
    fn speech_like_is_bounded_and_deterministic() {
        let a = speech_like_utterance(3, 16_000);
        assert_eq!(a.len(), 25_600);
        assert_eq!(a, speech_like_utterance(3, 16_000));
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.6).abs() < 1e-12);
    }
}
