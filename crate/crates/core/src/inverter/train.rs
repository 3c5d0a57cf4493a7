use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{batch_tensor, Discriminator, Inverter, InverterConfig, TargetScale};
use super::{gan_losses, upsample_codes, GanKind, InverterError, Result};
use crate::cluster::Standardizer;
use crate::corpus::{save_bundle, DType, ModelBundle};
use crate::grad::{AdamConfig, AdamState, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::Matrix;

/// Code vectors of one target-voice utterance and its magnitude spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterUtterance {
    pub id: String,
    /// `T_z × D_e`, one row per code.
    pub codes: Matrix,
    /// `T_s × bins` linear magnitudes.
    pub magnitude: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverterTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Crop length in spectrogram frames; shortened to the shortest utterance.
    pub chunk_frames: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    /// Use every utterance, cropped at its start, in every step instead of
    /// `batch_size` random crops.
    pub full_batch: bool,
}

impl Default for InverterTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            chunk_frames: 64,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: None,
            full_batch: false,
        }
    }
}

impl InverterTrainConfig {
    fn write_hyper(&self, b: &mut ModelBundle) {
        b.set_hyper("train.steps", self.steps);
        b.set_hyper("train.batch_size", self.batch_size);
        b.set_hyper("train.chunk_frames", self.chunk_frames);
        b.set_hyper("train.seed", self.seed);
        b.set_hyper("train.full_batch", self.full_batch);
        for (prefix, a) in [
            ("train.g", &self.generator_adam),
            ("train.d", &self.discriminator_adam),
        ] {
            b.set_hyper(format!("{prefix}.lr"), a.lr);
            b.set_hyper(format!("{prefix}.beta1"), a.beta1);
            b.set_hyper(format!("{prefix}.beta2"), a.beta2);
            b.set_hyper(format!("{prefix}.eps"), a.eps);
        }
        b.set_hyper(
            "train.checkpoint_every",
            self.checkpoint_every
                .map_or("none".to_string(), |c| c.to_string()),
        );
    }
}

/// Losses of one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterStepMetrics {
    pub step: usize,
    pub mse: f64,
    pub generator_adversarial: f64,
    pub generator_total: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone)]
struct Pair {
    /// Upsampled codes cropped to the target length, `T × D_e`.
    input: Matrix,
    /// Target in the training domain, `T × bins`.
    target: Matrix,
}

/// Alternating generator/critic optimizer over random fixed-length crops.
/// Crops depend only on the seed and the step number.
#[derive(Debug, Clone)]
pub struct InverterTrainer {
    pub inverter: Inverter,
    pub discriminator: Discriminator,
    pub config: InverterTrainConfig,
    gen_adam: AdamState,
    disc_adam: AdamState,
    gen_ids: BTreeSet<ParamId>,
    disc_ids: BTreeSet<ParamId>,
    pairs: Vec<Pair>,
    chunk: usize,
    step: usize,
}

fn align(u: &InverterUtterance, cfg: &InverterConfig) -> Result<Matrix> {
    if u.codes.cols() != cfg.code_dim || u.codes.rows() == 0 {
        return Err(InverterError::Input(format!(
            "utterance {:?}: {} × {} codes, expected T × {}",
            u.id,
            u.codes.rows(),
            u.codes.cols(),
            cfg.code_dim
        )));
    }
    if u.magnitude.cols() != cfg.out_dim() || u.magnitude.rows() == 0 {
        return Err(InverterError::Input(format!(
            "utterance {:?}: {} × {} spectrogram, expected T × {}",
            u.id,
            u.magnitude.rows(),
            u.magnitude.cols(),
            cfg.out_dim()
        )));
    }
    if let Some(bad) = u
        .magnitude
        .as_slice()
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0)
    {
        return Err(InverterError::Input(format!(
            "utterance {:?}: magnitude {bad} is negative or not finite",
            u.id
        )));
    }
    let up = upsample_codes(&u.codes, cfg.time_reduction)?;
    let frames = u.magnitude.rows();
    if up.rows().abs_diff(frames) > cfg.time_reduction {
        return Err(InverterError::Input(format!(
            "utterance {:?}: {} codes at reduction {} cover {} frames, spectrogram has {}",
            u.id,
            u.codes.rows(),
            cfg.time_reduction,
            up.rows(),
            frames
        )));
    }
    Ok(up)
}

/// Critic loss on real targets against detached generator output.
fn discriminator_objective(
    g: &mut Graph,
    store: &mut ParamStore,
    disc: &Discriminator,
    kind: GanKind,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let detached = g.stop_gradient(fake);
    let d_real = disc.forward(g, store, real)?;
    let d_fake = disc.forward(g, store, detached)?;
    Ok(gan_losses(g, d_real, d_fake, kind)?.1)
}

/// `[α·MSE + β·G_adv, MSE, G_adv]`.
pub(crate) fn generator_objective(
    g: &mut Graph,
    store: &mut ParamStore,
    cfg: &InverterConfig,
    disc: &Discriminator,
    real: Var,
    fake: Var,
) -> Result<[Var; 3]> {
    let mse = g.mse(fake, real, None)?;
    let d_real = disc.forward(g, store, real)?;
    let d_fake = disc.forward(g, store, fake)?;
    let (adv, _) = gan_losses(g, d_real, d_fake, cfg.gan)?;
    let a = g.affine(mse, cfg.alpha, 0.0);
    let b = g.affine(adv, cfg.beta, 0.0);
    Ok([g.add(a, b)?, mse, adv])
}

impl InverterTrainer {
    pub fn new(
        data: &[InverterUtterance],
        model_cfg: InverterConfig,
        config: InverterTrainConfig,
    ) -> Result<Self> {
        model_cfg.validate()?;
        if data.is_empty() {
            return Err(InverterError::Input("no training utterances".into()));
        }
        if config.batch_size == 0 || config.chunk_frames == 0 {
            return Err(InverterError::Config(
                "batch size and chunk length must be positive".into(),
            ));
        }
        let inputs = data
            .iter()
            .map(|u| align(u, &model_cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut inverter = Inverter::new(model_cfg, config.seed)?;
        if inverter.config.target == TargetScale::Log {
            let logs = inverter.to_target(&Matrix::vstack(data.iter().map(|u| &u.magnitude)));
            inverter.target_norm = Some(Standardizer::fit(&logs));
        }
        let pairs: Vec<Pair> = inputs
            .into_iter()
            .zip(data)
            .map(|(up, u)| {
                let n = up.rows().min(u.magnitude.rows());
                Pair {
                    input: up.slice_rows(0, n),
                    target: inverter.to_target(&u.magnitude.slice_rows(0, n)),
                }
            })
            .collect();
        let chunk = pairs
            .iter()
            .map(|p| p.input.rows())
            .min()
            .unwrap_or(0)
            .min(config.chunk_frames);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX);
        let discriminator = Discriminator::new(&inverter.config, &mut inverter.store, &mut rng)?;
        if inverter.config.gan == GanKind::Wgan {
            discriminator.clip_weights(&mut inverter.store, inverter.config.clip);
        }
        Ok(Self {
            gen_ids: inverter.param_ids().into_iter().collect(),
            disc_ids: discriminator.param_ids().into_iter().collect(),
            inverter,
            discriminator,
            gen_adam: AdamState::new(config.generator_adam),
            disc_adam: AdamState::new(config.discriminator_adam),
            config,
            pairs,
            chunk,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Crop length actually used.
    pub fn chunk_frames(&self) -> usize {
        self.chunk
    }

    fn sample(&self, step: usize) -> Vec<(usize, usize)> {
        if self.config.full_batch {
            return (0..self.pairs.len()).map(|p| (p, 0)).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        (0..self.config.batch_size)
            .map(|_| {
                let p = rng.random_range(0..self.pairs.len());
                let slack = self.pairs[p].input.rows() - self.chunk;
                (p, rng.random_range(0..=slack))
            })
            .collect()
    }

    fn batch(&self, picks: &[(usize, usize)]) -> (Tensor, Tensor) {
        let crop = |m: &Matrix, s: usize| m.slice_rows(s, s + self.chunk);
        let inputs: Vec<Matrix> = picks
            .iter()
            .map(|&(p, s)| crop(&self.pairs[p].input, s))
            .collect();
        let targets: Vec<Matrix> = picks
            .iter()
            .map(|&(p, s)| crop(&self.pairs[p].target, s))
            .collect();
        (
            batch_tensor(&inputs.iter().collect::<Vec<_>>()),
            batch_tensor(&targets.iter().collect::<Vec<_>>()),
        )
    }

    fn filtered(g: &Graph, loss: Var, ids: &BTreeSet<ParamId>) -> Result<Vec<(ParamId, Tensor)>> {
        Ok(g.backward(loss)?
            .for_params()
            .into_iter()
            .filter(|(id, _)| ids.contains(id))
            .collect())
    }

    fn numerical(&self, detail: String) -> InverterError {
        InverterError::Numerical {
            step: self.step,
            detail,
        }
    }

    /// Builds both objectives for a crop batch on one graph.
    fn objectives(&mut self, g: &mut Graph, picks: &[(usize, usize)]) -> Result<[Var; 4]> {
        let (x, y) = self.batch(picks);
        let input = g.constant(x);
        let real = g.constant(y);
        let mut store = std::mem::take(&mut self.inverter.store);
        let built = (|| {
            let fake = self
                .inverter
                .forward_graph(g, &mut store, input, Mode::Train)?;
            let cfg = &self.inverter.config;
            let [total, mse, adv] =
                generator_objective(g, &mut store, cfg, &self.discriminator, real, fake)?;
            let disc =
                discriminator_objective(g, &mut store, &self.discriminator, cfg.gan, real, fake)?;
            Ok([total, mse, adv, disc])
        })();
        self.inverter.store = store;
        built
    }

    /// One generator update followed by one critic update on the same crop
    /// batch. On any non-finite loss, gradient or parameter the previous
    /// parameters are kept and the step fails.
    pub fn step(&mut self) -> Result<InverterStepMetrics> {
        let picks = self.sample(self.step);
        // The forward pass already moves batch-norm running statistics.
        let backup = (
            self.inverter.store.clone(),
            self.gen_adam.clone(),
            self.disc_adam.clone(),
        );
        let mut g = Graph::new();
        let [gen_total, mse, adv, disc] = self.objectives(&mut g, &picks)?;
        let metrics = InverterStepMetrics {
            step: self.step,
            mse: g.value(mse).item(),
            generator_adversarial: g.value(adv).item(),
            generator_total: g.value(gen_total).item(),
            discriminator: g.value(disc).item(),
        };
        if ![
            metrics.mse,
            metrics.generator_adversarial,
            metrics.generator_total,
            metrics.discriminator,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            (self.inverter.store, self.gen_adam, self.disc_adam) = backup;
            return Err(self.numerical(format!("non-finite loss {metrics:?}")));
        }
        let gen_grads = Self::filtered(&g, gen_total, &self.gen_ids)?;
        let disc_grads = Self::filtered(&g, disc, &self.disc_ids)?;
        if !gen_grads
            .iter()
            .chain(&disc_grads)
            .all(|(_, t)| t.is_finite())
        {
            (self.inverter.store, self.gen_adam, self.disc_adam) = backup;
            return Err(self.numerical("non-finite gradient".into()));
        }
        self.gen_adam.step(&mut self.inverter.store, &gen_grads)?;
        self.disc_adam.step(&mut self.inverter.store, &disc_grads)?;
        if self.inverter.config.gan == GanKind::Wgan {
            self.discriminator
                .clip_weights(&mut self.inverter.store, self.inverter.config.clip);
        }
        if !self.inverter.store.is_finite() {
            (self.inverter.store, self.gen_adam, self.disc_adam) = backup;
            return Err(self.numerical("update produced non-finite parameters".into()));
        }
        self.step += 1;
        Ok(metrics)
    }

    /// Generator and critic weights with both optimizer states.
    pub fn checkpoint(&self) -> ModelBundle {
        let mut b = self.inverter.to_bundle();
        self.config.write_hyper(&mut b);
        b.set_hyper("train.step", self.step);
        for id in &self.disc_ids {
            b.insert_tensor(
                format!("param.{}", self.inverter.store.name(*id)),
                self.inverter.store.tensor(*id),
                DType::F64,
            );
        }
        for (tag, adam) in [("g", &self.gen_adam), ("d", &self.disc_adam)] {
            b.set_hyper(format!("train.{tag}.adam_steps"), adam.steps());
            for (id, m, v) in adam.moments() {
                let name = self.inverter.store.name(id);
                b.insert_tensor(format!("adam.m.{name}"), m, DType::F64);
                b.insert_tensor(format!("adam.v.{name}"), v, DType::F64);
            }
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct InverterTraining {
    pub inverter: Inverter,
    pub history: Vec<InverterStepMetrics>,
}

/// Trains for `config.steps` steps. With a checkpoint directory, writes
/// `inverter_step{N}.zsu` at the configured cadence and, if a step fails
/// numerically, `inverter_last_good.zsu` holding the state before it.
pub fn train_inverter(
    data: &[InverterUtterance],
    model_cfg: InverterConfig,
    config: InverterTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<InverterTraining> {
    let steps = config.steps;
    let mut trainer = InverterTrainer::new(data, model_cfg, config)?;
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        match trainer.step() {
            Ok(m) => history.push(m),
            Err(e @ InverterError::Numerical { .. }) => {
                if let Some(dir) = checkpoint_dir {
                    save_bundle(&trainer.checkpoint(), &dir.join("inverter_last_good.zsu"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if let (Some(dir), Some(every)) = (checkpoint_dir, trainer.config.checkpoint_every) {
            let done = trainer.steps_done();
            if every > 0 && done % every == 0 {
                save_bundle(
                    &trainer.checkpoint(),
                    &dir.join(format!("inverter_step{done:06}.zsu")),
                )?;
            }
        }
    }
    Ok(InverterTraining {
        inverter: trainer.inverter,
        history,
    })
}
