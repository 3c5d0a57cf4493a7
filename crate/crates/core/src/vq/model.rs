use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::codebook::quantize;
use super::{Result, VqError};
use crate::cluster::Standardizer;
use crate::corpus::{DType, ModelBundle};
use crate::grad::{Graph, LayerSpec, Mode, Padding, ParamId, ParamStore, Sequential, Tensor, Var};
use crate::{CodeSequence, Matrix};

pub const VQVAE_KIND: &str = "vqvae";

/// How the codebook is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodebookInit {
    /// K-Means on the encoder's initial outputs.
    #[default]
    KMeans,
    /// Standard normal entries.
    RandomNormal,
}

impl CodebookInit {
    pub fn name(&self) -> &'static str {
        match self {
            CodebookInit::KMeans => "kmeans",
            CodebookInit::RandomNormal => "random",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "kmeans" => Some(CodebookInit::KMeans),
            "random" | "normal" => Some(CodebookInit::RandomNormal),
            _ => None,
        }
    }
}

/// Architecture of the conditional VQ-VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct VqVaeConfig {
    pub feature_dim: usize,
    pub codebook_size: usize,
    /// Input frames per code; one of 1, 2, 4, 8.
    pub time_reduction: usize,
    /// D_e.
    pub code_dim: usize,
    /// D_v.
    pub speaker_dim: usize,
    /// Commitment weight γ.
    pub gamma: f64,
    /// Channels of the 2D stem over (coefficient, time).
    pub stem_channels: usize,
    /// Widths of the three 1D encoder layers; the decoder mirrors them.
    pub widths: [usize; 3],
    pub codebook_init: CodebookInit,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            feature_dim: crate::dsp::MFCC_DIM,
            codebook_size: 256,
            time_reduction: 4,
            code_dim: 64,
            speaker_dim: 32,
            gamma: 0.25,
            stem_channels: 8,
            widths: [64, 128, 256],
            codebook_init: CodebookInit::KMeans,
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4, 8].contains(&self.time_reduction) {
            return Err(VqError::Config(format!(
                "time reduction must be 1, 2, 4 or 8, got {}",
                self.time_reduction
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(VqError::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        let dims = [
            self.feature_dim,
            self.codebook_size,
            self.code_dim,
            self.speaker_dim,
            self.stem_channels,
        ];
        if dims.contains(&0) || self.widths.contains(&0) {
            return Err(VqError::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Stride of each 1D encoder layer; the product is the time reduction.
    pub fn strides(&self) -> [usize; 3] {
        let halvings = self.time_reduction.trailing_zeros() as usize;
        std::array::from_fn(|i| if i + halvings >= 3 { 2 } else { 1 })
    }

    pub fn decoder_input_channels(&self) -> usize {
        self.code_dim + self.speaker_dim
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = vec![
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: self.stem_channels,
                kernel: (3, 3),
                stride: (1, 1),
            },
            LayerSpec::BatchNorm {
                channels: self.stem_channels,
            },
            LayerSpec::leaky(),
            LayerSpec::MergeChannels,
        ];
        let mut in_ch = self.stem_channels * self.feature_dim;
        for (&out_ch, stride) in self.widths.iter().zip(self.strides()) {
            specs.push(if stride == 2 {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel: 4,
                    stride: 2,
                    padding: Padding::Same,
                }
            } else {
                LayerSpec::conv(in_ch, out_ch, 3)
            });
            specs.push(LayerSpec::BatchNorm { channels: out_ch });
            specs.push(LayerSpec::leaky());
            in_ch = out_ch;
        }
        specs.push(LayerSpec::conv(in_ch, self.code_dim, 1));
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let [w0, w1, w2] = self.widths;
        let mut specs = vec![
            LayerSpec::conv(self.decoder_input_channels(), w2, 3),
            LayerSpec::BatchNorm { channels: w2 },
            LayerSpec::leaky(),
        ];
        let strides = self.strides();
        // mirror of encoder layer i maps widths[i] back to widths[i - 1]
        let mirror = [
            (w2, w1, strides[2]),
            (w1, w0, strides[1]),
            (w0, w0, strides[0]),
        ];
        for (in_ch, out_ch, stride) in mirror {
            specs.push(if stride == 2 {
                LayerSpec::ConvTranspose1d {
                    in_ch,
                    out_ch,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                }
            } else {
                LayerSpec::conv(in_ch, out_ch, 3)
            });
            specs.push(LayerSpec::BatchNorm { channels: out_ch });
            specs.push(LayerSpec::leaky());
        }
        specs.push(LayerSpec::conv(w0, self.feature_dim, 1));
        specs
    }

    pub(crate) fn write_hyper(&self, b: &mut ModelBundle) {
        b.set_hyper("model.feature_dim", self.feature_dim);
        b.set_hyper("model.codebook_size", self.codebook_size);
        b.set_hyper("model.time_reduction", self.time_reduction);
        b.set_hyper("model.code_dim", self.code_dim);
        b.set_hyper("model.speaker_dim", self.speaker_dim);
        b.set_hyper("model.gamma", self.gamma);
        b.set_hyper("model.stem_channels", self.stem_channels);
        b.set_hyper("model.widths", self.widths.map(|w| w.to_string()).join(","));
        b.set_hyper("model.codebook_init", self.codebook_init.name());
    }

    pub(crate) fn read_hyper(b: &ModelBundle) -> Result<Self> {
        let widths: Vec<usize> = b
            .hyper("model.widths")?
            .split(',')
            .map(|w| w.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| VqError::Config("model.widths must be three integers".into()))?;
        let widths: [usize; 3] = widths
            .try_into()
            .map_err(|_| VqError::Config("model.widths must be three integers".into()))?;
        let init = b.hyper("model.codebook_init")?;
        let cfg = Self {
            feature_dim: b.hyper_parse("model.feature_dim")?,
            codebook_size: b.hyper_parse("model.codebook_size")?,
            time_reduction: b.hyper_parse("model.time_reduction")?,
            code_dim: b.hyper_parse("model.code_dim")?,
            speaker_dim: b.hyper_parse("model.speaker_dim")?,
            gamma: b.hyper_parse("model.gamma")?,
            stem_channels: b.hyper_parse("model.stem_channels")?,
            widths,
            codebook_init: CodebookInit::from_name(init)
                .ok_or_else(|| VqError::Config(format!("unknown codebook init {init:?}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-speaker embedding rows, addressed by speaker id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerTable {
    names: Vec<String>,
}

impl SpeakerTable {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, speaker: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == speaker)
            .ok_or_else(|| VqError::Input(format!("unknown speaker id {speaker:?}")))
    }
}

/// Output of one training-mode or inference forward pass.
pub(crate) struct Forward {
    /// `(B·T_z, D_e)` encoder outputs.
    pub z: Var,
    /// Selected codebook rows, same shape as `z`.
    pub e: Var,
    /// `(B, F, T)` reconstruction.
    pub x_hat: Var,
    pub codes: Vec<usize>,
    pub codes_per_item: usize,
}

/// A conditional VQ-VAE: parameters, speaker table and the input
/// standardization it was trained with.
#[derive(Debug, Clone)]
pub struct VqVae {
    pub config: VqVaeConfig,
    pub store: ParamStore,
    encoder: Sequential,
    decoder: Sequential,
    codebook_id: ParamId,
    speaker_table_id: ParamId,
    pub speakers: SpeakerTable,
    pub standardizer: Standardizer,
    /// Codes selected during training.
    pub usage: Vec<u64>,
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect(),
    )
}

impl VqVae {
    pub fn new(
        config: VqVaeConfig,
        speakers: SpeakerTable,
        standardizer: Standardizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if speakers.is_empty() {
            return Err(VqError::Input("at least one speaker is required".into()));
        }
        if standardizer.dim() != config.feature_dim {
            return Err(VqError::Input(format!(
                "standardizer has {} dimensions, features {}",
                standardizer.dim(),
                config.feature_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Sequential::new("encoder", config.encoder_specs(), &mut store, &mut rng)?;
        let decoder = Sequential::new("decoder", config.decoder_specs(), &mut store, &mut rng)?;
        let codebook_id = store.add(
            "codebook",
            normal(&mut rng, config.codebook_size, config.code_dim),
            true,
        )?;
        let speaker_table_id = store.add(
            "speaker_embedding",
            normal(&mut rng, speakers.len(), config.speaker_dim),
            true,
        )?;
        let usage = vec![0; config.codebook_size];
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            codebook_id,
            speaker_table_id,
            speakers,
            standardizer,
            usage,
        })
    }

    pub fn codebook(&self) -> Matrix {
        self.store.tensor(self.codebook_id).to_matrix()
    }

    pub fn set_codebook(&mut self, vectors: &Matrix) -> Result<()> {
        self.store
            .set(self.codebook_id, Tensor::from_matrix(vectors))?;
        Ok(())
    }

    pub fn speaker_embeddings(&self) -> Matrix {
        self.store.tensor(self.speaker_table_id).to_matrix()
    }

    pub(crate) fn codebook_id(&self) -> ParamId {
        self.codebook_id
    }

    /// `(B, 1, F, T)` input tensor from standardized `T × F` chunks.
    pub(crate) fn input_tensor(chunks: &[&Matrix]) -> Tensor {
        let (t, f) = (chunks[0].rows(), chunks[0].cols());
        let mut data = Vec::with_capacity(chunks.len() * f * t);
        for c in chunks {
            for j in 0..f {
                data.extend((0..t).map(|i| c.row(i)[j]));
            }
        }
        Tensor::new(vec![chunks.len(), 1, f, t], data)
    }

    /// Encoder outputs as `(B·T_z, D_e)` rows plus `T_z`.
    pub(crate) fn encode_graph(
        &mut self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, usize)> {
        let z = self.encoder.forward(g, &mut self.store, x, mode)?;
        let s = g.shape(z).to_vec();
        let rows = g.permute3(z, [0, 2, 1])?;
        Ok((g.reshape(rows, &[s[0] * s[2], s[1]])?, s[2]))
    }

    /// Decoder on `(B·T_z, D_e)` quantized rows for one speaker per item.
    pub(crate) fn decode_graph(
        &mut self,
        g: &mut Graph,
        q_rows: Var,
        speakers: &[usize],
        codes_per_item: usize,
        mode: Mode,
    ) -> Result<Var> {
        let b = speakers.len();
        let d = self.config.code_dim;
        let q = g.reshape(q_rows, &[b, codes_per_item, d])?;
        let q = g.permute3(q, [0, 2, 1])?;
        let table = g.param(&self.store, self.speaker_table_id);
        let v = g.gather(table, speakers)?;
        let v = g.repeat_last(v, codes_per_item);
        let joined = g.concat(&[q, v], 1)?;
        Ok(self.decoder.forward(g, &mut self.store, joined, mode)?)
    }

    /// Full pass with straight-through quantization.
    pub(crate) fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        speakers: &[usize],
        mode: Mode,
    ) -> Result<Forward> {
        let (z, codes_per_item) = self.encode_graph(g, x, mode)?;
        let book = self.codebook();
        let codes = quantize(&g.value(z).to_matrix(), &book, self.config.time_reduction)?
            .0
            .indices;
        let table = g.param(&self.store, self.codebook_id);
        let e = g.gather(table, &codes)?;
        let q = super::straight_through(g, z, e)?;
        let x_hat = self.decode_graph(g, q, speakers, codes_per_item, mode)?;
        Ok(Forward {
            z,
            e,
            x_hat,
            codes,
            codes_per_item,
        })
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.feature_dim {
            return Err(VqError::Input(format!(
                "features have {} dimensions, model expects {}",
                features.cols(),
                self.config.feature_dim
            )));
        }
        if features.rows() == 0 {
            return Err(VqError::Input("empty feature sequence".into()));
        }
        Ok(())
    }

    /// Continuous latents `ceil(T / r) × D_e`, batch norm in inference mode.
    pub fn encode(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        let mut m = self.clone();
        let x = m.standardizer.apply(features);
        let mut g = Graph::new();
        let xv = g.constant(Self::input_tensor(&[&x]));
        let (z, _) = m.encode_graph(&mut g, xv, Mode::Eval)?;
        Ok(g.value(z).to_matrix())
    }

    pub fn quantize(&self, latents: &Matrix) -> Result<(CodeSequence, Matrix)> {
        quantize(latents, &self.codebook(), self.config.time_reduction)
    }

    /// Codes and their codebook vectors.
    pub fn encode_codes(&self, features: &Matrix) -> Result<(CodeSequence, Matrix)> {
        self.quantize(&self.encode(features)?)
    }

    /// Reconstructs `r · T_z × F` features (original scale) from code
    /// vectors for the given speaker.
    pub fn decode(&self, vectors: &Matrix, speaker: &str) -> Result<Matrix> {
        if vectors.cols() != self.config.code_dim || vectors.rows() == 0 {
            return Err(VqError::Input(format!(
                "decoder input must be T_z × {}, got {} × {}",
                self.config.code_dim,
                vectors.rows(),
                vectors.cols()
            )));
        }
        let s = self.speakers.index(speaker)?;
        let mut m = self.clone();
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_matrix(vectors));
        let out = m.decode_graph(&mut g, q, &[s], vectors.rows(), Mode::Eval)?;
        let t = g.value(out);
        let (f, len) = (t.shape()[1], t.shape()[2]);
        let d = t.data();
        let frames = Matrix::from_vec(
            len,
            f,
            (0..len * f).map(|i| d[(i % f) * len + i / f]).collect(),
        );
        Ok(self.standardizer.invert(&frames))
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(VQVAE_KIND);
        self.config.write_hyper(&mut b);
        b.set_hyper("speakers.count", self.speakers.len());
        for (i, s) in self.speakers.names().iter().enumerate() {
            b.set_hyper(format!("speakers.{i}"), s);
        }
        let dim = self.standardizer.dim();
        b.insert(
            "standardizer.mean",
            &[dim],
            &self.standardizer.mean,
            DType::F64,
        );
        b.insert(
            "standardizer.std",
            &[dim],
            &self.standardizer.std,
            DType::F64,
        );
        let usage: Vec<f64> = self.usage.iter().map(|&u| u as f64).collect();
        b.insert("codebook.usage", &[usage.len()], &usage, DType::F64);
        for (_, name, t) in self.store.iter() {
            b.insert_tensor(format!("param.{name}"), t, DType::F64);
        }
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(VQVAE_KIND)?;
        let config = VqVaeConfig::read_hyper(b)?;
        let n: usize = b.hyper_parse("speakers.count")?;
        let names = (0..n)
            .map(|i| b.hyper(&format!("speakers.{i}")).map(str::to_string))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let standardizer = Standardizer {
            mean: b.require("standardizer.mean")?.data.clone(),
            std: b.require("standardizer.std")?.data.clone(),
        };
        let mut model = Self::new(config, SpeakerTable::new(names), standardizer, 0)?;
        load_params(&mut model.store, b)?;
        model.usage = b
            .require("codebook.usage")?
            .data
            .iter()
            .map(|&u| u as u64)
            .collect();
        if model.usage.len() != model.config.codebook_size {
            return Err(VqError::Input(
                "codebook usage length differs from codebook size".into(),
            ));
        }
        Ok(model)
    }
}

/// Overwrites every parameter of `store` from `param.<name>` tensors.
pub(crate) fn load_params(store: &mut ParamStore, b: &ModelBundle) -> Result<()> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = format!("param.{}", store.name(id));
        let t = b.require(&name)?.to_tensor();
        store.set(id, t)?;
    }
    Ok(())
}
