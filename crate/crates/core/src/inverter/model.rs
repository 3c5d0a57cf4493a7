use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GanKind, InverterError, Result};
use crate::cluster::Standardizer;
use crate::corpus::{DType, ModelBundle};
use crate::dsp::{StftConfig, Window};
use crate::grad::{Graph, LayerSpec, Mode, Padding, ParamId, ParamStore, Sequential, Tensor, Var};
use crate::Matrix;

pub const INVERTER_KIND: &str = "inverter";

/// Floor added to magnitudes before taking logs.
pub(crate) const LOG_FLOOR: f64 = 1e-5;

/// Domain in which the network output is compared with the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetScale {
    /// `ln(M + 1e-5)`, standardized per frequency bin over the training set;
    /// the output is unconstrained and exponentiated for synthesis.
    #[default]
    Log,
    /// Raw magnitudes with a softplus output layer.
    Linear,
}

impl TargetScale {
    pub fn name(&self) -> &'static str {
        match self {
            TargetScale::Log => "log",
            TargetScale::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "log" => Ok(TargetScale::Log),
            "linear" => Ok(TargetScale::Linear),
            other => Err(InverterError::Config(format!(
                "unknown target scale {other:?} (expected log or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverterConfig {
    /// Dimension of the code vectors fed to the network.
    pub code_dim: usize,
    /// Spectrogram frames per code.
    pub time_reduction: usize,
    pub kernels: Vec<usize>,
    /// Output channels of each kernel branch.
    pub scale_channels: usize,
    pub multiscale_layers: usize,
    pub hidden: usize,
    pub disc_channels: [usize; 3],
    pub alpha: f64,
    pub beta: f64,
    pub gan: GanKind,
    pub target: TargetScale,
    /// Critic weight clip, applied only for WGAN.
    pub clip: f64,
    pub stft: StftConfig,
    pub sample_rate: u32,
}

impl Default for InverterConfig {
    fn default() -> Self {
        Self {
            code_dim: 64,
            time_reduction: 4,
            kernels: vec![1, 3, 5, 7],
            scale_channels: 64,
            multiscale_layers: 4,
            hidden: 512,
            disc_channels: [128, 128, 64],
            alpha: 1.0,
            beta: 1.0,
            gan: GanKind::Lsgan,
            target: TargetScale::Log,
            clip: 0.01,
            stft: StftConfig::speech(16_000),
            sample_rate: 16_000,
        }
    }
}

impl InverterConfig {
    pub fn out_dim(&self) -> usize {
        self.stft.n_bins()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("code_dim", self.code_dim),
            ("time_reduction", self.time_reduction),
            ("scale_channels", self.scale_channels),
            ("multiscale_layers", self.multiscale_layers),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(InverterError::Config(format!("{name} must be positive")));
        }
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return Err(InverterError::Config(format!(
                "kernel set {:?} must be nonempty with positive sizes",
                self.kernels
            )));
        }
        if self.disc_channels.contains(&0) {
            return Err(InverterError::Config(
                "discriminator widths must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(InverterError::Config(format!(
                "loss weights must be nonnegative (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if !(self.clip > 0.0) {
            return Err(InverterError::Config(format!(
                "weight clip must be positive, got {}",
                self.clip
            )));
        }
        if self.sample_rate == 0 {
            return Err(InverterError::Config("sample rate must be positive".into()));
        }
        self.stft.validate()?;
        Ok(())
    }

    fn concat_channels(&self) -> usize {
        self.kernels.len() * self.scale_channels
    }

    fn head_specs(&self) -> Vec<LayerSpec> {
        let mut specs = vec![
            LayerSpec::conv(self.concat_channels(), self.hidden, 3),
            LayerSpec::BatchNorm {
                channels: self.hidden,
            },
            LayerSpec::leaky(),
            LayerSpec::conv(self.hidden, self.out_dim(), 1),
        ];
        if self.target == TargetScale::Linear {
            specs.push(LayerSpec::Softplus);
        }
        specs
    }

    fn disc_specs(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.disc_channels;
        let strided = |in_ch, out_ch| LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel: 4,
            stride: 2,
            padding: Padding::Same,
        };
        vec![
            strided(self.out_dim(), c1),
            LayerSpec::leaky(),
            strided(c1, c2),
            LayerSpec::leaky(),
            strided(c2, c3),
            LayerSpec::leaky(),
            LayerSpec::conv(c3, 1, 3),
            LayerSpec::MeanLast,
        ]
    }

    pub(crate) fn write_hyper(&self, b: &mut ModelBundle) {
        let join = |v: &[usize]| {
            v.iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        b.set_hyper("inverter.code_dim", self.code_dim);
        b.set_hyper("inverter.time_reduction", self.time_reduction);
        b.set_hyper("inverter.kernels", join(&self.kernels));
        b.set_hyper("inverter.scale_channels", self.scale_channels);
        b.set_hyper("inverter.multiscale_layers", self.multiscale_layers);
        b.set_hyper("inverter.hidden", self.hidden);
        b.set_hyper("inverter.disc_channels", join(&self.disc_channels));
        b.set_hyper("inverter.alpha", self.alpha);
        b.set_hyper("inverter.beta", self.beta);
        b.set_hyper("inverter.gan", self.gan.name());
        b.set_hyper("inverter.target", self.target.name());
        b.set_hyper("inverter.clip", self.clip);
        b.set_hyper("stft.fft_size", self.stft.fft_size);
        b.set_hyper("stft.window_length", self.stft.window_length);
        b.set_hyper("stft.hop_length", self.stft.hop_length);
        b.set_hyper("stft.window", self.stft.window.name());
        b.set_hyper("audio.sample_rate", self.sample_rate);
    }

    pub(crate) fn read_hyper(b: &ModelBundle) -> Result<Self> {
        let list = |key: &str| -> Result<Vec<usize>> {
            b.hyper(key)?
                .split(',')
                .map(|k| k.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| InverterError::Config(format!("{key} must be a list of integers")))
        };
        let disc: [usize; 3] = list("inverter.disc_channels")?.try_into().map_err(|_| {
            InverterError::Config("inverter.disc_channels must have three entries".into())
        })?;
        let window = b.hyper("stft.window")?;
        let cfg = Self {
            code_dim: b.hyper_parse("inverter.code_dim")?,
            time_reduction: b.hyper_parse("inverter.time_reduction")?,
            kernels: list("inverter.kernels")?,
            scale_channels: b.hyper_parse("inverter.scale_channels")?,
            multiscale_layers: b.hyper_parse("inverter.multiscale_layers")?,
            hidden: b.hyper_parse("inverter.hidden")?,
            disc_channels: disc,
            alpha: b.hyper_parse("inverter.alpha")?,
            beta: b.hyper_parse("inverter.beta")?,
            gan: GanKind::from_name(b.hyper("inverter.gan")?)?,
            target: TargetScale::from_name(b.hyper("inverter.target")?)?,
            clip: b.hyper_parse("inverter.clip")?,
            stft: StftConfig {
                fft_size: b.hyper_parse("stft.fft_size")?,
                window_length: b.hyper_parse("stft.window_length")?,
                hop_length: b.hyper_parse("stft.hop_length")?,
                window: Window::from_name(window)
                    .ok_or_else(|| InverterError::Config(format!("unknown window {window:?}")))?,
            },
            sample_rate: b.hyper_parse("audio.sample_rate")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One multi-scale layer: parallel same-length convolutions whose outputs
/// are concatenated on channels, then batch norm and leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
struct MultiScale {
    branches: Vec<Sequential>,
    post: Sequential,
}

/// Critic mapping a `(B, bins, T)` spectrogram batch to `(B, 1)` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: Sequential,
}

impl Discriminator {
    /// Registers `disc.*` parameters in `store`.
    pub fn new(
        config: &InverterConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            net: Sequential::new("disc", config.disc_specs(), store, rng)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.net.param_ids()
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        Ok(self.net.forward(g, store, x, Mode::Train)?)
    }

    /// Clamps every critic weight and bias to `[-clip, clip]`.
    pub fn clip_weights(&self, store: &mut ParamStore, clip: f64) {
        for id in self.param_ids() {
            for w in store.tensor_mut(id).data_mut() {
                *w = w.clamp(-clip, clip);
            }
        }
    }
}

/// Code-to-spectrogram network. Its parameter store may also hold the
/// critic's parameters during training; only the generator's are exported.
#[derive(Debug, Clone)]
pub struct Inverter {
    pub config: InverterConfig,
    pub(crate) store: ParamStore,
    layers: Vec<MultiScale>,
    head: Sequential,
    /// Per-bin statistics of log magnitudes (log target only).
    pub target_norm: Option<Standardizer>,
}

impl Inverter {
    pub fn new(config: InverterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.multiscale_layers);
        for l in 0..config.multiscale_layers {
            let in_ch = if l == 0 {
                config.code_dim
            } else {
                config.concat_channels()
            };
            let branches = config
                .kernels
                .iter()
                .map(|&k| {
                    Sequential::new(
                        &format!("gen.ms{l}.k{k}"),
                        vec![LayerSpec::conv(in_ch, config.scale_channels, k)],
                        &mut store,
                        &mut rng,
                    )
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let post = Sequential::new(
                &format!("gen.ms{l}.post"),
                vec![
                    LayerSpec::BatchNorm {
                        channels: config.concat_channels(),
                    },
                    LayerSpec::leaky(),
                ],
                &mut store,
                &mut rng,
            )?;
            layers.push(MultiScale { branches, post });
        }
        let head = Sequential::new("gen.head", config.head_specs(), &mut store, &mut rng)?;
        Ok(Self {
            config,
            store,
            layers,
            head,
            target_norm: None,
        })
    }

    /// Generator parameters in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.branches
                    .iter()
                    .flat_map(Sequential::param_ids)
                    .chain(l.post.param_ids())
            })
            .chain(self.head.param_ids())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_ids()
            .iter()
            .map(|&id| self.store.tensor(id).numel())
            .sum()
    }

    /// `(B, D_e, T) -> (B, bins, T)` in the training domain.
    pub(crate) fn forward_graph(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.code_dim {
            return Err(InverterError::Input(format!(
                "expected (batch, {}, frames) input, got {shape:?}",
                self.config.code_dim
            )));
        }
        let mut h = x;
        for layer in &self.layers {
            let outs = layer
                .branches
                .iter()
                .map(|b| b.forward(g, store, h, mode))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let cat = g.concat(&outs, 1)?;
            h = layer.post.forward(g, store, cat, mode)?;
        }
        Ok(self.head.forward(g, store, h, mode)?)
    }

    /// Network output for one upsampled `T_s × D_e` sequence, `T_s × bins`,
    /// in the training domain, with inference-mode batch norm.
    pub fn predict_raw(&self, upsampled: &Matrix) -> Result<Matrix> {
        if upsampled.cols() != self.config.code_dim || upsampled.rows() == 0 {
            return Err(InverterError::Input(format!(
                "expected T × {} code vectors, got {} × {}",
                self.config.code_dim,
                upsampled.rows(),
                upsampled.cols()
            )));
        }
        let mut store = self.store.clone();
        let mut g = Graph::new();
        let x = g.constant(batch_tensor(&[upsampled]));
        let y = self.forward_graph(&mut g, &mut store, x, Mode::Eval)?;
        Ok(unbatch(g.value(y), 0))
    }

    /// Maps training-domain frames to nonnegative linear magnitudes.
    pub fn to_magnitude(&self, raw: &Matrix) -> Matrix {
        match (self.config.target, &self.target_norm) {
            (TargetScale::Linear, _) => {
                let mut m = raw.clone();
                m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                m
            }
            (TargetScale::Log, norm) => {
                let mut m = match norm {
                    Some(n) => n.invert(raw),
                    None => raw.clone(),
                };
                m.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = (v.exp() - LOG_FLOOR).max(0.0));
                m
            }
        }
    }

    /// Maps linear magnitudes to the training domain. Needs the target
    /// statistics for the log scale when they have been fitted.
    pub fn to_target(&self, magnitude: &Matrix) -> Matrix {
        match self.config.target {
            TargetScale::Linear => magnitude.clone(),
            TargetScale::Log => {
                let mut m = magnitude.clone();
                m.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = (v.max(0.0) + LOG_FLOOR).ln());
                match &self.target_norm {
                    Some(n) => n.apply(&m),
                    None => m,
                }
            }
        }
    }

    /// Predicted linear magnitude spectrogram, `T_s × bins`.
    pub fn predict_magnitude(&self, upsampled: &Matrix) -> Result<Matrix> {
        let raw = self.predict_raw(upsampled)?;
        Ok(self.to_magnitude(&raw))
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(INVERTER_KIND);
        self.config.write_hyper(&mut b);
        if let Some(n) = &self.target_norm {
            b.insert("target.mean", &[n.dim()], &n.mean, DType::F64);
            b.insert("target.std", &[n.dim()], &n.std, DType::F64);
        }
        for id in self.param_ids() {
            b.insert_tensor(
                format!("param.{}", self.store.name(id)),
                self.store.tensor(id),
                DType::F64,
            );
        }
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(INVERTER_KIND)?;
        let config = InverterConfig::read_hyper(b)?;
        let mut model = Self::new(config, 0)?;
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let t = b
                .require(&format!("param.{}", model.store.name(id)))?
                .to_tensor();
            model.store.set(id, t)?;
        }
        if b.get("target.mean").is_some() {
            let n = Standardizer {
                mean: b.require("target.mean")?.data.clone(),
                std: b.require("target.std")?.data.clone(),
            };
            if n.dim() != model.config.out_dim() || n.std.len() != n.dim() {
                return Err(InverterError::Config(format!(
                    "target statistics have dimension {}, model outputs {}",
                    n.dim(),
                    model.config.out_dim()
                )));
            }
            model.target_norm = Some(n);
        }
        Ok(model)
    }
}

/// Stacks `T × C` matrices of equal length into a `(B, C, T)` tensor.
pub(crate) fn batch_tensor(items: &[&Matrix]) -> Tensor {
    let (t, c) = (items[0].rows(), items[0].cols());
    let mut data = Vec::with_capacity(items.len() * t * c);
    for m in items {
        debug_assert_eq!((m.rows(), m.cols()), (t, c));
        data.extend_from_slice(m.transpose().as_slice());
    }
    Tensor::new(vec![items.len(), c, t], data)
}

/// Item `b` of a `(B, C, T)` tensor as a `T × C` matrix.
pub(crate) fn unbatch(t: &Tensor, b: usize) -> Matrix {
    let (c, len) = (t.shape()[1], t.shape()[2]);
    Matrix::from_vec(c, len, t.data()[b * c * len..(b + 1) * c * len].to_vec()).transpose()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Small enough for finite differences: 3-dim codes, 9 bins.
    pub(crate) fn tiny_config() -> InverterConfig {
        InverterConfig {
            code_dim: 3,
            time_reduction: 2,
            kernels: vec![1, 3],
            scale_channels: 2,
            multiscale_layers: 2,
            hidden: 4,
            disc_channels: [3, 3, 2],
            stft: StftConfig {
                fft_size: 16,
                window_length: 16,
                hop_length: 4,
                window: Window::Hann,
            },
            sample_rate: 1000,
            ..InverterConfig::default()
        }
    }

    fn codes(t: usize, d: usize, seed: usize) -> Matrix {
        Matrix::from_vec(
            t,
            d,
            (0..t * d)
                .map(|i| (((i + seed) * 37 % 23) as f64 - 11.0) / 7.0)
                .collect(),
        )
    }

    #[test]
    fn default_architecture() {
        let cfg = InverterConfig::default();
        assert_eq!(cfg.out_dim(), 1025);
        let inv = Inverter::new(cfg, 0).unwrap();
        let specs: Vec<_> = inv.head.specs().cloned().collect();
        assert_eq!(specs[0], LayerSpec::conv(256, 512, 3));
        assert_eq!(specs[3], LayerSpec::conv(512, 1025, 1));
        assert_eq!(inv.layers.len(), 4);
        for l in &inv.layers {
            let ks: Vec<_> = l
                .branches
                .iter()
                .map(|b| match b.specs().next().unwrap() {
                    LayerSpec::Conv1d {
                        kernel,
                        stride,
                        padding,
                        out_ch,
                        ..
                    } => {
                        assert_eq!((*stride, *padding, *out_ch), (1, Padding::Same, 64));
                        *kernel
                    }
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
            assert_eq!(ks, [1, 3, 5, 7]);
        }
    }

    #[test]
    fn output_shape_and_length() {
        let inv = Inverter::new(tiny_config(), 1).unwrap();
        for t in [1, 2, 7, 16] {
            let y = inv.predict_raw(&codes(t, 3, 0)).unwrap();
            assert_eq!((y.rows(), y.cols()), (t, 9));
        }
        assert!(matches!(
            inv.predict_raw(&codes(4, 2, 0)),
            Err(InverterError::Input(_))
        ));
    }

    #[test]
    fn linear_output_nonnegative() {
        let cfg = InverterConfig {
            target: TargetScale::Linear,
            ..tiny_config()
        };
        let inv = Inverter::new(cfg, 2).unwrap();
        let m = inv.predict_magnitude(&codes(12, 3, 5)).unwrap();
        assert!(m.as_slice().iter().all(|&v| v >= 0.0));
        let log = Inverter::new(tiny_config(), 2).unwrap();
        let m = log.predict_magnitude(&codes(12, 3, 5)).unwrap();
        assert!(m.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_input_gives_constant_frames() {
        let mut inv = Inverter::new(tiny_config(), 4).unwrap();
        for id in inv.param_ids() {
            if inv.store.name(id).ends_with(".bias") {
                let shape = inv.store.tensor(id).shape().to_vec();
                inv.store.set(id, Tensor::zeros(&shape)).unwrap();
            }
        }
        let y = inv.predict_raw(&Matrix::zeros(10, 3)).unwrap();
        for t in 1..y.rows() {
            assert_eq!(y.row(t), y.row(0));
        }
    }

    #[test]
    fn time_equivariant_on_interior_frames() {
        let inv = Inverter::new(tiny_config(), 5).unwrap();
        let x = codes(24, 3, 1);
        let mut shifted = Matrix::zeros(24, 3);
        for t in 1..24 {
            shifted.row_mut(t).copy_from_slice(x.row(t - 1));
        }
        let a = inv.predict_raw(&x).unwrap();
        let b = inv.predict_raw(&shifted).unwrap();
        // Receptive field half-width: one per multi-scale layer plus the head.
        let margin = 3;
        for t in margin..24 - margin {
            for (p, q) in a.row(t - 1).iter().zip(b.row(t)) {
                assert!((p - q).abs() < 1e-12, "frame {t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn target_domain_round_trip() {
        let mut inv = Inverter::new(tiny_config(), 0).unwrap();
        let mag = Matrix::from_vec(4, 9, (0..36).map(|i| i as f64 * 0.1).collect());
        let logs = inv.to_target(&mag);
        inv.target_norm = Some(Standardizer::fit(&logs));
        let back = inv.to_magnitude(&inv.to_target(&mag));
        for (a, b) in back.as_slice().iter().zip(mag.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn discriminator_emits_one_score_per_item() {
        let cfg = tiny_config();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::new(&cfg, &mut store, &mut rng).unwrap();
        for t in [1, 5, 16] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[3, 9, t], 0.5));
            let s = d.forward(&mut g, &mut store, x).unwrap();
            assert_eq!(g.shape(s), &[3, 1]);
        }
        d.clip_weights(&mut store, 0.01);
        assert!(store.iter().all(|(_, _, t)| t.max_abs() <= 0.01));
    }

    #[test]
    fn bundle_round_trip() {
        let mut inv = Inverter::new(tiny_config(), 9).unwrap();
        inv.target_norm = Some(Standardizer {
            mean: vec![0.5; 9],
            std: vec![2.0; 9],
        });
        let back = Inverter::from_bundle(&inv.to_bundle()).unwrap();
        assert_eq!(back.config, inv.config);
        assert_eq!(back.target_norm, inv.target_norm);
        let x = codes(6, 3, 2);
        assert_eq!(back.predict_raw(&x).unwrap(), inv.predict_raw(&x).unwrap());
    }

    #[test]
    fn config_validation() {
        for bad in [
            InverterConfig {
                kernels: vec![],
                ..tiny_config()
            },
            InverterConfig {
                beta: -1.0,
                ..tiny_config()
            },
            InverterConfig {
                time_reduction: 0,
                ..tiny_config()
            },
        ] {
            assert!(matches!(bad.validate(), Err(InverterError::Config(_))));
        }
    }
}
