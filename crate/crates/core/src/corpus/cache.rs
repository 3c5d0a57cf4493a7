use std::path::{Path, PathBuf};

use super::{crc64, load_bundle, save_bundle, CorpusError, DType, ModelBundle, Result};
use crate::dsp::{extract_features, AudioBuffer, FeatureConfig, FeatureKind, FeatureSequence};
use crate::Matrix;

const CACHE_KIND: &str = "features";

/// CRC-64 of the sample rate and the bit patterns of every sample.
pub fn audio_checksum(audio: &AudioBuffer) -> u64 {
    let mut bytes = Vec::with_capacity(4 + 8 * audio.samples.len());
    bytes.extend_from_slice(&audio.sample_rate.to_le_bytes());
    for s in &audio.samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    crc64(&bytes)
}

/// Directory of feature bundles keyed by audio checksum and feature config.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(audio: &AudioBuffer, cfg: &FeatureConfig) -> String {
        let desc = format!("{:016x}|{}", audio_checksum(audio), cfg.describe());
        format!("{:016x}", crc64(desc.as_bytes()))
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.zsu"))
    }

    /// Cached features, or `None` when absent. A cache entry written for a
    /// different config (a key collision) is treated as absent.
    pub fn load(
        &self,
        audio: &AudioBuffer,
        cfg: &FeatureConfig,
    ) -> Result<Option<FeatureSequence>> {
        let path = self.path_for(&Self::key(audio, cfg));
        if !path.is_file() {
            return Ok(None);
        }
        let b = load_bundle(&path)?;
        b.expect_kind(CACHE_KIND)?;
        if b.hyper("config")? != cfg.describe() {
            log::warn!("feature cache collision at {}", path.display());
            return Ok(None);
        }
        let kind_name = b.hyper("kind")?;
        let kind = FeatureKind::from_name(kind_name)
            .ok_or_else(|| CorpusError::Bundle(format!("unknown feature kind {kind_name:?}")))?;
        let frame_rate: f64 = b.hyper_parse("frame_rate")?;
        let t = b.require("frames")?;
        if t.shape.len() != 2 {
            return Err(CorpusError::Bundle("cached frames must be a matrix".into()));
        }
        let frames = Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone());
        Ok(Some(FeatureSequence::new(frames, kind, frame_rate)))
    }

    pub fn store(
        &self,
        audio: &AudioBuffer,
        cfg: &FeatureConfig,
        features: &FeatureSequence,
    ) -> Result<()> {
        let mut b = ModelBundle::new(CACHE_KIND);
        b.set_hyper("config", cfg.describe());
        b.set_hyper("kind", features.kind.name());
        b.set_hyper("frame_rate", features.frame_rate);
        let f = &features.frames;
        b.insert("frames", &[f.rows(), f.cols()], f.as_slice(), DType::F64);
        save_bundle(&b, &self.path_for(&Self::key(audio, cfg)))
    }

    /// Loads from the cache or extracts and stores.
    pub fn get_or_extract(
        &self,
        audio: &AudioBuffer,
        cfg: &FeatureConfig,
    ) -> Result<FeatureSequence> {
        if let Some(f) = self.load(audio, cfg)? {
            return Ok(f);
        }
        let f = extract_features(audio, cfg)?;
        self.store(audio, cfg, &f)?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone() -> AudioBuffer {
        AudioBuffer::new(
            (0..8000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect(),
            16_000,
        )
    }

    #[test]
    fn cached_features_equal_fresh_extraction() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let cfg = FeatureConfig::new(FeatureKind::Mfcc39, 16_000);
        let audio = tone();
        assert!(cache.load(&audio, &cfg).unwrap().is_none());
        let first = cache.get_or_extract(&audio, &cfg).unwrap();
        let again = cache.load(&audio, &cfg).unwrap().unwrap();
        assert_eq!(first, again);
        assert_eq!(first, extract_features(&audio, &cfg).unwrap());
    }

    #[test]
    fn key_depends_on_audio_and_config() {
        let audio = tone();
        let cfg = FeatureConfig::new(FeatureKind::Mfcc39, 16_000);
        let mut other = audio.clone();
        other.samples[10] += 1e-12;
        assert_ne!(
            FeatureCache::key(&audio, &cfg),
            FeatureCache::key(&other, &cfg)
        );
        let mel = FeatureConfig::new(FeatureKind::Mel80, 16_000);
        assert_ne!(
            FeatureCache::key(&audio, &cfg),
            FeatureCache::key(&audio, &mel)
        );
        assert_eq!(
            FeatureCache::key(&audio, &cfg),
            FeatureCache::key(&audio.clone(), &cfg)
        );
    }
}
