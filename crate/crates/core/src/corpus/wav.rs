//! 16-bit PCM RIFF/WAVE reading and writing.

use std::path::Path;

use super::{write_atomic, CorpusError, Result};
use crate::dsp::{resample, TARGET_SAMPLE_RATE};
use crate::AudioBuffer;

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CorpusError::Parse {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

struct Format {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a WAV file held in memory. Multi-channel audio is averaged to
/// mono with a warning.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let mut r = Reader { bytes, pos: 0 };
    let riff = r.take(4, "RIFF tag")?;
    if riff != b"RIFF" {
        return Err(CorpusError::Parse {
            offset: 0,
            message: format!(
                "expected \"RIFF\", found {:?}",
                String::from_utf8_lossy(riff)
            ),
        });
    }
    r.u32("RIFF size")?;
    let wave_at = r.pos;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(CorpusError::Parse {
            offset: wave_at,
            message: "expected \"WAVE\"".into(),
        });
    }
    let mut format: Option<Format> = None;
    loop {
        let chunk_at = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                let body_at = r.pos;
                let body = r.take(size, "fmt chunk")?;
                let mut f = Reader {
                    bytes: body,
                    pos: 0,
                };
                let tag = f.u16("format tag")?;
                let channels = f.u16("channel count")?;
                let sample_rate = f.u32("sample rate")?;
                f.u32("byte rate")?;
                f.u16("block align")?;
                let bits = f.u16("bits per sample")?;
                let pcm = match tag {
                    FORMAT_PCM => true,
                    FORMAT_EXTENSIBLE => {
                        // cbSize, valid bits, channel mask, then the subformat GUID
                        f.u16("extension size")?;
                        f.u16("valid bits")?;
                        f.u32("channel mask")?;
                        let guid = f.take(16, "subformat").map_err(|e| shift(e, body_at))?;
                        u16::from_le_bytes([guid[0], guid[1]]) == FORMAT_PCM
                    }
                    _ => false,
                };
                if !pcm {
                    return Err(CorpusError::Unsupported(format!(
                        "WAV format tag {tag:#06x}"
                    )));
                }
                if bits != 16 {
                    return Err(CorpusError::Unsupported(format!("{bits}-bit PCM")));
                }
                if channels == 0 || sample_rate == 0 {
                    return Err(CorpusError::Parse {
                        offset: body_at,
                        message: format!("{channels} channels at {sample_rate} Hz"),
                    });
                }
                format = Some(Format {
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let Some(fmt) = format else {
                    return Err(CorpusError::Parse {
                        offset: chunk_at,
                        message: "data chunk before fmt chunk".into(),
                    });
                };
                let data = r.take(size, "data chunk")?;
                let frame_bytes = fmt.channels as usize * (fmt.bits as usize / 8);
                if data.len() % frame_bytes != 0 {
                    return Err(CorpusError::Parse {
                        offset: chunk_at + 8 + data.len() - data.len() % frame_bytes,
                        message: "data chunk ends mid-frame".into(),
                    });
                }
                if fmt.channels > 1 {
                    log::warn!("downmixing {}-channel audio to mono", fmt.channels);
                }
                let ch = fmt.channels as usize;
                let samples = data
                    .chunks_exact(frame_bytes)
                    .map(|frame| {
                        let sum: f64 = frame
                            .chunks_exact(2)
                            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                            .sum();
                        sum / ch as f64
                    })
                    .collect();
                return Ok(AudioBuffer::new(samples, fmt.sample_rate));
            }
            _ => {
                r.take(size, "chunk body")?;
            }
        }
        if size % 2 == 1 && r.pos < bytes.len() {
            r.pos += 1;
        }
    }
}

fn shift(e: CorpusError, by: usize) -> CorpusError {
    match e {
        CorpusError::Parse { offset, message } => CorpusError::Parse {
            offset: offset + by,
            message,
        },
        other => other,
    }
}

pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    parse_wav(&bytes).map_err(|e| match e {
        CorpusError::Parse { offset, message } => CorpusError::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads a WAV file and resamples it to the processing rate.
pub fn load_audio(path: &Path) -> Result<AudioBuffer> {
    let audio = load_wav(path)?;
    Ok(resample(&audio, TARGET_SAMPLE_RATE)?)
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes mono 16-bit PCM.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn save_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    write_atomic(path, &encode_wav(audio))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_sixteen_bit_quantization() {
        let samples: Vec<f64> = (0..1000)
            .map(|i| ((i as f64) * 0.013).sin() * 0.9)
            .collect();
        let audio = AudioBuffer::new(samples.clone(), 16_000);
        let back = parse_wav(&encode_wav(&audio)).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        // decoding is the exact inverse of encoding
        assert_eq!(parse_wav(&encode_wav(&back)).unwrap(), back);
    }

    #[test]
    fn one_second_file_has_16000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        save_wav(&p, &AudioBuffer::new(vec![0.1; 16_000], 16_000)).unwrap();
        assert_eq!(load_wav(&p).unwrap().len(), 16_000);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode_wav(&AudioBuffer::new(vec![0.5; 100], 16_000));
        for cut in [3, 10, 30, 43, 101] {
            match parse_wav(&bytes[..cut]) {
                Err(CorpusError::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn stereo_is_downmixed() {
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8_000));
        // rewrite as 2 channels, 2 frames: (0.5, -0.25), (1.0 - 2^-15, 0)
        bytes[22] = 2;
        let frames: [i16; 4] = [16384, -8192, 32767, 0];
        for (i, v) in frames.iter().enumerate() {
            bytes[44 + 2 * i..46 + 2 * i].copy_from_slice(&v.to_le_bytes());
        }
        let a = parse_wav(&bytes).unwrap();
        assert_eq!(a.samples, vec![0.125, 32767.0 / 65536.0]);
    }

    #[test]
    fn other_codecs_are_unsupported() {
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8_000));
        bytes[20] = 3; // IEEE float
        assert!(matches!(
            parse_wav(&bytes),
            Err(CorpusError::Unsupported(_))
        ));
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8_000));
        bytes[34] = 24;
        assert!(matches!(
            parse_wav(&bytes),
            Err(CorpusError::Unsupported(_))
        ));
    }

    #[test]
    fn not_riff() {
        assert!(matches!(
            parse_wav(b"RIFX\0\0\0\0WAVE"),
            Err(CorpusError::Parse { offset: 0, .. })
        ));
    }
}
