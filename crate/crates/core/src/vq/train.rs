use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codebook::perplexity;
use super::model::{load_params, SpeakerTable, VqVae, VqVaeConfig, VQVAE_KIND};
use super::{vq_loss, CodebookInit, Result, VqError};
use crate::cluster::{kmeans_fit, KMeansConfig, Standardizer};
use crate::corpus::{save_bundle, DType, ModelBundle};
use crate::grad::{AdamConfig, AdamState, Graph, Mode, ParamId};
use crate::Matrix;

/// One training utterance: raw (unstandardized) `T × F` features.
#[derive(Debug, Clone, PartialEq)]
pub struct VqUtterance {
    pub id: String,
    pub speaker: String,
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Window length in frames; a multiple of the time reduction.
    pub chunk_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write a checkpoint every this many steps (when a directory is given).
    pub checkpoint_every: Option<usize>,
    /// Batches of encoder outputs used for K-Means codebook initialization.
    pub init_batches: usize,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            chunk_frames: 128,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: None,
            init_batches: 8,
        }
    }
}

impl VqTrainConfig {
    fn write_hyper(&self, b: &mut ModelBundle) {
        b.set_hyper("train.steps", self.steps);
        b.set_hyper("train.batch_size", self.batch_size);
        b.set_hyper("train.chunk_frames", self.chunk_frames);
        b.set_hyper("train.lr", self.adam.lr);
        b.set_hyper("train.beta1", self.adam.beta1);
        b.set_hyper("train.beta2", self.adam.beta2);
        b.set_hyper("train.eps", self.adam.eps);
        b.set_hyper("train.seed", self.seed);
        b.set_hyper("train.init_batches", self.init_batches);
        b.set_hyper(
            "train.checkpoint_every",
            self.checkpoint_every
                .map_or("none".to_string(), |c| c.to_string()),
        );
    }

    fn read_hyper(b: &ModelBundle) -> Result<Self> {
        let every = b.hyper("train.checkpoint_every")?;
        Ok(Self {
            steps: b.hyper_parse("train.steps")?,
            batch_size: b.hyper_parse("train.batch_size")?,
            chunk_frames: b.hyper_parse("train.chunk_frames")?,
            adam: AdamConfig {
                lr: b.hyper_parse("train.lr")?,
                beta1: b.hyper_parse("train.beta1")?,
                beta2: b.hyper_parse("train.beta2")?,
                eps: b.hyper_parse("train.eps")?,
            },
            seed: b.hyper_parse("train.seed")?,
            checkpoint_every: match every {
                "none" => None,
                n => Some(
                    n.parse()
                        .map_err(|_| VqError::Config(format!("bad checkpoint cadence {n:?}")))?,
                ),
            },
            init_batches: b.hyper_parse("train.init_batches")?,
        })
    }
}

/// Loss terms and codebook perplexity of one optimizer step, measured
/// before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Chunk {
    speaker: usize,
    /// Standardized, zero-padded to the chunk length.
    frames: Matrix,
    valid: usize,
}

fn make_chunks(
    data: &[VqUtterance],
    speakers: &SpeakerTable,
    standardizer: &Standardizer,
    chunk: usize,
) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for u in data {
        let speaker = speakers.index(&u.speaker)?;
        let x = standardizer.apply(&u.features);
        let mut start = 0;
        while start < x.rows() {
            let valid = chunk.min(x.rows() - start);
            let mut frames = Matrix::zeros(chunk, x.cols());
            for t in 0..valid {
                frames.row_mut(t).copy_from_slice(x.row(start + t));
            }
            out.push(Chunk {
                speaker,
                frames,
                valid,
            });
            start += chunk;
        }
    }
    Ok(out)
}

/// Single-loop VQ-VAE optimizer. Batch sampling depends only on the seed
/// and step number, so a restored trainer continues bit-identically.
#[derive(Debug, Clone)]
pub struct VqTrainer {
    pub model: VqVae,
    pub config: VqTrainConfig,
    adam: AdamState,
    chunks: Vec<Chunk>,
    step: usize,
}

fn validate(data: &[VqUtterance], model_cfg: &VqVaeConfig, cfg: &VqTrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(VqError::Input("no training utterances".into()));
    }
    if let Some(u) = data.iter().find(|u| u.speaker.is_empty()) {
        return Err(VqError::Input(format!(
            "utterance {:?} has no speaker id",
            u.id
        )));
    }
    if let Some(u) = data
        .iter()
        .find(|u| u.features.cols() != model_cfg.feature_dim || u.features.rows() == 0)
    {
        return Err(VqError::Input(format!(
            "utterance {:?} has {} × {} features, expected T × {}",
            u.id,
            u.features.rows(),
            u.features.cols(),
            model_cfg.feature_dim
        )));
    }
    if cfg.batch_size == 0
        || cfg.chunk_frames == 0
        || !cfg.chunk_frames.is_multiple_of(model_cfg.time_reduction)
    {
        return Err(VqError::Config(format!(
            "batch size must be positive and chunk length ({}) a multiple of the time reduction ({})",
            cfg.chunk_frames, model_cfg.time_reduction
        )));
    }
    Ok(())
}

impl VqTrainer {
    pub fn new(data: &[VqUtterance], model_cfg: VqVaeConfig, cfg: VqTrainConfig) -> Result<Self> {
        model_cfg.validate()?;
        validate(data, &model_cfg, &cfg)?;
        let mut names: Vec<String> = Vec::new();
        for u in data {
            if !names.contains(&u.speaker) {
                names.push(u.speaker.clone());
            }
        }
        let all = Matrix::vstack(data.iter().map(|u| &u.features));
        let standardizer = Standardizer::fit(&all);
        let model = VqVae::new(model_cfg, SpeakerTable::new(names), standardizer, cfg.seed)?;
        let chunks = make_chunks(data, &model.speakers, &model.standardizer, cfg.chunk_frames)?;
        let mut trainer = Self {
            model,
            adam: AdamState::new(cfg.adam),
            config: cfg,
            chunks,
            step: 0,
        };
        if trainer.model.config.codebook_init == CodebookInit::KMeans {
            trainer.init_codebook()?;
        }
        Ok(trainer)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn batch_rng(&self, step: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(((step as u64) << 8) | stream);
        rng
    }

    fn sample_batch(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..self.config.batch_size)
            .map(|_| rng.random_range(0..self.chunks.len()))
            .collect()
    }

    /// Fits K-Means to valid encoder outputs of a few random batches, using
    /// training-mode batch statistics on a scratch copy of the parameters.
    fn init_codebook(&mut self) -> Result<()> {
        let mut scratch = self.model.clone();
        let mut rng = self.batch_rng(0, 0xff);
        let r = self.model.config.time_reduction;
        let mut rows = Vec::new();
        for _ in 0..self.config.init_batches.max(1) {
            let batch = self.sample_batch(&mut rng);
            let frames: Vec<&Matrix> = batch.iter().map(|&i| &self.chunks[i].frames).collect();
            let mut g = Graph::new();
            let x = g.constant(VqVae::input_tensor(&frames));
            let (z, per_item) = scratch.encode_graph(&mut g, x, Mode::Train)?;
            let z = g.value(z).to_matrix();
            for (b, &ci) in batch.iter().enumerate() {
                for t in 0..per_item {
                    if t * r < self.chunks[ci].valid {
                        rows.push(z.row(b * per_item + t).to_vec());
                    }
                }
            }
        }
        let data = Matrix::from_rows(&rows);
        let mut km = KMeansConfig::new(self.model.config.codebook_size, self.config.seed);
        km.standardize = false;
        match kmeans_fit(&data, &km) {
            Ok(fit) => self.model.set_codebook(&fit.model.centroids),
            Err(e) => {
                log::warn!("codebook K-Means init failed ({e}); keeping random normal codebook");
                Ok(())
            }
        }
    }

    /// One optimizer step. Fails on a non-finite loss.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let mut rng = self.batch_rng(step, 0);
        let batch = self.sample_batch(&mut rng);
        let f = self.model.config.feature_dim;
        let t_len = self.config.chunk_frames;
        let r = self.model.config.time_reduction;
        let d = self.model.config.code_dim;
        let frames: Vec<&Matrix> = batch.iter().map(|&i| &self.chunks[i].frames).collect();
        let speakers: Vec<usize> = batch.iter().map(|&i| self.chunks[i].speaker).collect();
        let valid: Vec<usize> = batch.iter().map(|&i| self.chunks[i].valid).collect();

        let mut g = Graph::new();
        let input = VqVae::input_tensor(&frames);
        let x = g.constant(input.clone());
        let fwd = self.model.forward(&mut g, x, &speakers, Mode::Train)?;
        let target = g.constant(input.reshaped(&[batch.len(), f, t_len]));

        let frame_mask: Vec<f64> = valid
            .iter()
            .flat_map(|&v| {
                (0..f).flat_map(move |_| (0..t_len).map(move |t| f64::from(u8::from(t < v))))
            })
            .collect();
        let per = fwd.codes_per_item;
        let code_valid: Vec<bool> = valid
            .iter()
            .flat_map(|&v| (0..per).map(move |t| t * r < v))
            .collect();
        let code_mask: Vec<f64> = code_valid
            .iter()
            .flat_map(|&ok| std::iter::repeat_n(f64::from(u8::from(ok)), d))
            .collect();
        let full = valid.iter().all(|&v| v == t_len);
        let (fm, cm) = if full {
            (None, None)
        } else {
            (Some(frame_mask.as_slice()), Some(code_mask.as_slice()))
        };
        let loss = vq_loss(
            &mut g,
            target,
            fwd.x_hat,
            fwd.z,
            fwd.e,
            self.model.config.gamma,
            fm,
            cm,
        )?;

        let used: Vec<usize> = fwd
            .codes
            .iter()
            .zip(&code_valid)
            .filter(|(_, &ok)| ok)
            .map(|(&c, _)| c)
            .collect();
        let mut hist = vec![0u64; self.model.config.codebook_size];
        for &c in &used {
            hist[c] += 1;
        }
        let metrics = StepMetrics {
            step,
            total: g.value(loss.total).item(),
            reconstruction: g.value(loss.reconstruction).item(),
            codebook: g.value(loss.codebook).item(),
            commitment: g.value(loss.commitment).item(),
            perplexity: perplexity(&hist),
        };
        if !metrics.total.is_finite() {
            return Err(VqError::Numerical(format!(
                "non-finite loss at step {step}: reconstruction {}, codebook {}, commitment {}",
                metrics.reconstruction, metrics.codebook, metrics.commitment
            )));
        }
        let grads = g.backward(loss.total)?.for_params();
        if !self.adam.step(&mut self.model.store, &grads)? {
            log::warn!("step {step}: non-finite gradient, update skipped");
        }
        for (u, h) in self.model.usage.iter_mut().zip(&hist) {
            *u += h;
        }
        self.step += 1;
        Ok(metrics)
    }

    /// Model, optimizer state and training config.
    pub fn checkpoint(&self) -> ModelBundle {
        let mut b = self.model.to_bundle();
        self.config.write_hyper(&mut b);
        b.set_hyper("train.step", self.step);
        b.set_hyper("train.adam_steps", self.adam.steps());
        for (id, m, v) in self.adam.moments() {
            let name = self.model.store.name(id);
            b.insert_tensor(format!("adam.m.{name}"), m, DType::F64);
            b.insert_tensor(format!("adam.v.{name}"), v, DType::F64);
        }
        b
    }

    /// Continues training from [`VqTrainer::checkpoint`] output.
    pub fn resume(checkpoint: &ModelBundle, data: &[VqUtterance]) -> Result<Self> {
        checkpoint.expect_kind(VQVAE_KIND)?;
        let model = VqVae::from_bundle(checkpoint)?;
        let config = VqTrainConfig::read_hyper(checkpoint)?;
        validate(data, &model.config, &config)?;
        let chunks = make_chunks(
            data,
            &model.speakers,
            &model.standardizer,
            config.chunk_frames,
        )?;
        let mut moments = Vec::new();
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id);
            if let (Some(m), Some(v)) = (
                checkpoint.get(&format!("adam.m.{name}")),
                checkpoint.get(&format!("adam.v.{name}")),
            ) {
                moments.push((id, m.to_tensor(), v.to_tensor()));
            }
        }
        let adam = AdamState::restore(
            config.adam,
            checkpoint.hyper_parse("train.adam_steps")?,
            moments,
        );
        let step = checkpoint.hyper_parse("train.step")?;
        let mut model = model;
        load_params(&mut model.store, checkpoint)?;
        Ok(Self {
            model,
            config,
            adam,
            chunks,
            step,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VqTraining {
    pub model: VqVae,
    pub history: Vec<StepMetrics>,
}

/// Trains for `config.steps` steps, checkpointing into `checkpoint_dir`
/// at the configured cadence.
pub fn train_vqvae(
    data: &[VqUtterance],
    model_cfg: VqVaeConfig,
    config: VqTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<VqTraining> {
    let steps = config.steps;
    let mut trainer = VqTrainer::new(data, model_cfg, config)?;
    let mut history = Vec::with_capacity(steps);
    while trainer.steps_done() < steps {
        let m = trainer.step()?;
        log::debug!(
            "vq step {} total {:.5} recon {:.5} codebook {:.5} commit {:.5} perplexity {:.2}",
            m.step,
            m.total,
            m.reconstruction,
            m.codebook,
            m.commitment,
            m.perplexity
        );
        history.push(m);
        if let (Some(dir), Some(every)) = (checkpoint_dir, trainer.config.checkpoint_every) {
            if every > 0 && trainer.steps_done() % every == 0 {
                let path = dir.join(format!("vqvae_step{:06}.zsu", trainer.steps_done()));
                save_bundle(&trainer.checkpoint(), &path)?;
            }
        }
    }
    Ok(VqTraining {
        model: trainer.model,
        history,
    })
}
