//! Pipeline configuration: TOML sections, command-line overrides, and the
//! resolved merge that every run echoes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsu_core::cluster::{GmmConfig, KMeansConfig, ReduceMode};
use zsu_core::dsp::FeatureConfig;
use zsu_core::grad::AdamConfig;
use zsu_core::inverter::{GanKind, InverterConfig, InverterTrainConfig, TargetScale};
use zsu_core::metrics::FrameDistance;
use zsu_core::vq::{VqTrainConfig, VqVaeConfig};
use zsu_core::{FeatureKind, StftConfig};

use crate::{Overrides, UsageError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub kind: String,
    pub fft_size: usize,
    pub window_length: usize,
    pub hop_length: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let stft = StftConfig::speech(zsu_core::dsp::TARGET_SAMPLE_RATE);
        Self {
            kind: "mfcc39".into(),
            fft_size: stft.fft_size,
            window_length: stft.window_length,
            hop_length: stft.hop_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitSection {
    /// `kmeans`, `gmm` or `vqvae`.
    pub model: String,
    pub codebook: usize,
    pub time_reduction: usize,
    /// How K-Means and GMM inputs are time-reduced: `average` or `stride`.
    pub reduce: String,
    pub standardize: bool,
    pub gamma: f64,
    pub code_dim: usize,
    pub speaker_dim: usize,
    pub stem_channels: usize,
    pub widths: [usize; 3],
    pub kmeans_batch: usize,
    pub kmeans_iters: usize,
    pub kmeans_full_passes: usize,
    pub gmm_iters: usize,
}

impl Default for UnitSection {
    fn default() -> Self {
        let vq = VqVaeConfig::default();
        let km = KMeansConfig::new(vq.codebook_size, 0);
        Self {
            model: "vqvae".into(),
            codebook: vq.codebook_size,
            time_reduction: vq.time_reduction,
            reduce: ReduceMode::default().name().into(),
            standardize: true,
            gamma: vq.gamma,
            code_dim: vq.code_dim,
            speaker_dim: vq.speaker_dim,
            stem_channels: vq.stem_channels,
            widths: vq.widths,
            kmeans_batch: km.batch_size,
            kmeans_iters: km.minibatch_iters,
            kmeans_full_passes: km.full_passes,
            gmm_iters: GmmConfig::new(1, 0).iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverterSection {
    pub alpha: f64,
    pub beta: f64,
    pub gan: String,
    /// `log` or `linear` regression target.
    pub target: String,
    pub kernels: Vec<usize>,
    pub scale_channels: usize,
    pub multiscale_layers: usize,
    pub hidden: usize,
    pub disc_channels: [usize; 3],
    pub clip: f64,
    pub griffin_lim_iters: usize,
    /// Target voice; every utterance is used when unset.
    pub speaker: Option<String>,
}

impl Default for InverterSection {
    fn default() -> Self {
        let inv = InverterConfig::default();
        Self {
            alpha: inv.alpha,
            beta: inv.beta,
            gan: inv.gan.name().into(),
            target: target_name(inv.target).into(),
            kernels: inv.kernels,
            scale_channels: inv.scale_channels,
            multiscale_layers: inv.multiscale_layers,
            hidden: inv.hidden,
            disc_channels: inv.disc_channels,
            clip: inv.clip,
            griffin_lim_iters: 60,
            speaker: None,
        }
    }
}

fn target_name(t: TargetScale) -> &'static str {
    match t {
        TargetScale::Log => "log",
        TargetScale::Linear => "linear",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub init_batches: usize,
    pub inverter_steps: usize,
    pub inverter_batch_size: usize,
    pub inverter_chunk_frames: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let vq = VqTrainConfig::default();
        let inv = InverterTrainConfig::default();
        Self {
            seed: 0,
            steps: vq.steps,
            batch_size: vq.batch_size,
            chunk_frames: vq.chunk_frames,
            lr: vq.adam.lr,
            init_batches: vq.init_batches,
            inverter_steps: inv.steps,
            inverter_batch_size: inv.batch_size,
            inverter_chunk_frames: inv.chunk_frames,
            generator_lr: inv.generator_adam.lr,
            discriminator_lr: inv.discriminator_adam.lr,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `cosine` or `kl`; defaults to `kl` for GMM posteriorgrams.
    pub frame_distance: Option<String>,
    pub triples: Option<PathBuf>,
}

/// Input and output locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Feature cache directory.
    pub features: Option<PathBuf>,
    /// Unit model bundle.
    pub model: Option<PathBuf>,
    pub units: Option<PathBuf>,
    pub inverter: Option<PathBuf>,
    /// Directory of per-utterance representation bundles.
    pub repr: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureSection,
    pub units: UnitSection,
    pub inverter: InverterSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub paths: PathSection,
}

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// File values (or defaults) with command-line flags applied on top.
    pub fn resolve(overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match &overrides.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        set(&mut self.features.kind, &o.feature_kind);
        set(&mut self.units.model, &o.model);
        set(&mut self.units.codebook, &o.codebook);
        set(&mut self.units.time_reduction, &o.time_reduction);
        set(&mut self.units.gamma, &o.gamma);
        set(&mut self.inverter.gan, &o.gan);
        set(&mut self.inverter.beta, &o.beta);
        set_opt(&mut self.inverter.speaker, &o.speaker);
        set(&mut self.train.seed, &o.seed);
        set(&mut self.train.steps, &o.steps);
        set(&mut self.train.inverter_steps, &o.inverter_steps);
        set_opt(&mut self.eval.frame_distance, &o.frame_distance);
        set_opt(&mut self.eval.triples, &o.triples);
        set_opt(&mut self.paths.manifest, &o.manifest);
        set_opt(&mut self.paths.out, &o.out);
        set_opt(&mut self.paths.features, &o.features);
        set_opt(&mut self.paths.model, &o.model_path);
        set_opt(&mut self.paths.units, &o.units);
        set_opt(&mut self.paths.inverter, &o.inverter);
        set_opt(&mut self.paths.repr, &o.repr);
    }

    /// Rejects values the pipeline cannot interpret, before any work.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.feature_config()?;
        if !["kmeans", "gmm", "vqvae"].contains(&self.units.model.as_str()) {
            return Err(usage(format!(
                "unknown unit model {:?} (expected kmeans, gmm or vqvae)",
                self.units.model
            )));
        }
        if self.units.codebook == 0 || self.units.time_reduction == 0 {
            return Err(usage(
                "codebook size and time reduction must be positive".into(),
            ));
        }
        self.reduce_mode()?;
        self.frame_distance()?;
        GanKind::from_name(&self.inverter.gan).map_err(|e| usage(e.to_string()))?;
        self.target_scale()?;
        Ok(())
    }

    pub fn feature_config(&self) -> anyhow::Result<FeatureConfig> {
        let kind = FeatureKind::from_name(&self.features.kind).ok_or_else(|| {
            usage(format!(
                "unknown feature kind {:?} (expected mfcc39, mel80, linear or customN)",
                self.features.kind
            ))
        })?;
        let mut cfg = FeatureConfig::new(kind, zsu_core::dsp::TARGET_SAMPLE_RATE);
        cfg.stft.fft_size = self.features.fft_size;
        cfg.stft.window_length = self.features.window_length;
        cfg.stft.hop_length = self.features.hop_length;
        if cfg.stft.hop_length == 0 || cfg.stft.window_length > cfg.stft.fft_size {
            return Err(usage(format!(
                "invalid STFT geometry: fft {} window {} hop {}",
                cfg.stft.fft_size, cfg.stft.window_length, cfg.stft.hop_length
            )));
        }
        Ok(cfg)
    }

    pub fn reduce_mode(&self) -> anyhow::Result<ReduceMode> {
        ReduceMode::from_name(&self.units.reduce).ok_or_else(|| {
            usage(format!(
                "unknown reduce mode {:?} (expected average or stride)",
                self.units.reduce
            ))
        })
    }

    /// The configured distance, or the model's natural one.
    pub fn frame_distance(&self) -> anyhow::Result<FrameDistance> {
        match &self.eval.frame_distance {
            Some(name) => FrameDistance::from_name(name).ok_or_else(|| {
                usage(format!(
                    "unknown frame distance {name:?} (expected cosine or kl)"
                ))
            }),
            None if self.units.model == "gmm" => Ok(FrameDistance::SymmetricKl),
            None => Ok(FrameDistance::Cosine),
        }
    }

    fn target_scale(&self) -> anyhow::Result<TargetScale> {
        match self.inverter.target.as_str() {
            "log" => Ok(TargetScale::Log),
            "linear" => Ok(TargetScale::Linear),
            other => Err(usage(format!(
                "unknown inverter target {other:?} (expected log or linear)"
            ))),
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.units.codebook,
            batch_size: self.units.kmeans_batch,
            minibatch_iters: self.units.kmeans_iters,
            full_passes: self.units.kmeans_full_passes,
            seed: self.train.seed,
            standardize: self.units.standardize,
        }
    }

    pub fn gmm_config(&self) -> GmmConfig {
        let mut init = self.kmeans_config();
        init.standardize = false;
        GmmConfig {
            k: self.units.codebook,
            iters: self.units.gmm_iters,
            seed: self.train.seed,
            standardize: self.units.standardize,
            init,
        }
    }

    pub fn vq_config(&self, feature_dim: usize) -> VqVaeConfig {
        VqVaeConfig {
            feature_dim,
            codebook_size: self.units.codebook,
            time_reduction: self.units.time_reduction,
            code_dim: self.units.code_dim,
            speaker_dim: self.units.speaker_dim,
            gamma: self.units.gamma,
            stem_channels: self.units.stem_channels,
            widths: self.units.widths,
            ..VqVaeConfig::default()
        }
    }

    pub fn vq_train_config(&self) -> VqTrainConfig {
        VqTrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            chunk_frames: self.train.chunk_frames,
            adam: AdamConfig {
                lr: self.train.lr,
                ..AdamConfig::default()
            },
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            init_batches: self.train.init_batches,
        }
    }

    /// Inverter whose STFT matches the feature front end, so that feature
    /// frames and spectrogram frames line up.
    pub fn inverter_config(
        &self,
        code_dim: usize,
        time_reduction: usize,
    ) -> anyhow::Result<InverterConfig> {
        let stft = self.feature_config()?.stft;
        Ok(InverterConfig {
            code_dim,
            time_reduction,
            kernels: self.inverter.kernels.clone(),
            scale_channels: self.inverter.scale_channels,
            multiscale_layers: self.inverter.multiscale_layers,
            hidden: self.inverter.hidden,
            disc_channels: self.inverter.disc_channels,
            alpha: self.inverter.alpha,
            beta: self.inverter.beta,
            gan: GanKind::from_name(&self.inverter.gan).map_err(|e| usage(e.to_string()))?,
            target: self.target_scale()?,
            clip: self.inverter.clip,
            stft,
            sample_rate: zsu_core::dsp::TARGET_SAMPLE_RATE,
        })
    }

    pub fn inverter_train_config(&self) -> InverterTrainConfig {
        InverterTrainConfig {
            steps: self.train.inverter_steps,
            batch_size: self.train.inverter_batch_size,
            chunk_frames: self.train.inverter_chunk_frames,
            generator_adam: AdamConfig {
                lr: self.train.generator_lr,
                ..AdamConfig::default()
            },
            discriminator_adam: AdamConfig {
                lr: self.train.discriminator_lr,
                ..AdamConfig::default()
            },
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            full_batch: false,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// `config.<section>.<key>` pairs of the resolved configuration.
    pub fn echo(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config is always serializable");
        let mut out = Vec::new();
        flatten("config", &value, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg =
            PipelineConfig::from_toml("[units]\nmodel = \"kmeans\"\ncodebook = 64\n").unwrap();
        assert_eq!(cfg.units.model, "kmeans");
        assert_eq!(cfg.units.codebook, 64);
        assert_eq!(cfg.units.time_reduction, 4);
        assert_eq!(cfg.inverter.gan, "lsgan");
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = PipelineConfig::from_toml("[units]\ncodebok = 3\n").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("codebok"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let o = Overrides {
            codebook: Some(32),
            gan: Some("wgan".into()),
            ..Overrides::default()
        };
        let mut cfg = PipelineConfig::from_toml("[units]\ncodebook = 64\n").unwrap();
        cfg.apply(&o);
        assert_eq!(cfg.units.codebook, 32);
        assert_eq!(cfg.inverter.gan, "wgan");
    }

    #[test]
    fn echo_is_sorted_and_flat() {
        let echo = PipelineConfig::default().echo();
        let keys: Vec<&str> = echo.iter().map(|(k, _)| k.as_str()).collect();
        assert!(keys.contains(&"config.units.codebook"));
        assert!(keys.contains(&"config.inverter.kernels"));
        assert!(echo
            .iter()
            .all(|(k, v)| !k.contains('\n') && !v.contains('\n')));
    }

    #[test]
    fn natural_distance_follows_model() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.frame_distance().unwrap(), FrameDistance::Cosine);
        cfg.units.model = "gmm".into();
        assert_eq!(cfg.frame_distance().unwrap(), FrameDistance::SymmetricKl);
        cfg.eval.frame_distance = Some("euclid".into());
        assert!(cfg.validate().is_err());
    }
}
