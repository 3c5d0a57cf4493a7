use rand::Rng;

use super::graph::{Graph, Padding, Var};
use super::params::{ParamId, ParamStore};
use super::{GradError, Result, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Whether batch norm uses batch statistics (and updates running ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One unary layer of a [`Sequential`] stack. Multi-input operations
/// (embedding lookup, concatenation, losses) are graph methods instead.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Input `(B, Cin, L)`.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    /// Output length `(L − 1)·stride − 2·padding + kernel`.
    ConvTranspose1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Input `(B, Cin, H, W)`, "same" padding.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    /// Input `(N, in)`.
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Normalizes axis 1.
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Softplus,
    ScalarAffine {
        scale: f64,
        shift: f64,
    },
    StopGradient,
    /// Mean over the last axis.
    MeanLast,
    /// `(B, C, H, W) -> (B, C·H, W)`.
    MergeChannels,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::ConvTranspose1d { .. } => "conv_transpose1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Softplus => "softplus",
            LayerSpec::ScalarAffine { .. } => "scalar_affine",
            LayerSpec::StopGradient => "stop_gradient",
            LayerSpec::MeanLast => "mean",
            LayerSpec::MergeChannels => "merge_channels",
        }
    }

    pub fn leaky() -> Self {
        LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }
    }

    /// Stride-1 "same" convolution.
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: Padding::Same,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    params: Vec<ParamId>,
}

/// A stack of layers whose parameters live in a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
}

impl Sequential {
    /// Creates parameters named `{prefix}.{index}.{field}` with uniform
    /// `±1/√fan_in` initialization.
    pub fn new(
        prefix: &str,
        specs: Vec<LayerSpec>,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let name = |field: &str| format!("{prefix}.{i}.{field}");
            let mut weighted =
                |w_shape: &[usize], fan_in: usize, bias_len: usize| -> Result<Vec<ParamId>> {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    let w = store.add(name("weight"), uniform(rng, w_shape, bound), true)?;
                    let b = store.add(name("bias"), uniform(rng, &[bias_len], bound), true)?;
                    Ok(vec![w, b])
                };
            let params = match spec {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    ..
                } => {
                    if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                        return Err(GradError::Config(format!(
                            "layer {i}: degenerate conv1d {spec:?}"
                        )));
                    }
                    weighted(&[out_ch, in_ch, kernel], in_ch * kernel, out_ch)?
                }
                LayerSpec::ConvTranspose1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    ..
                } => {
                    if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                        return Err(GradError::Config(format!(
                            "layer {i}: degenerate transposed conv {spec:?}"
                        )));
                    }
                    weighted(&[in_ch, out_ch, kernel], out_ch * kernel, out_ch)?
                }
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    if in_ch == 0
                        || out_ch == 0
                        || kernel.0 * kernel.1 == 0
                        || stride.0 * stride.1 == 0
                    {
                        return Err(GradError::Config(format!(
                            "layer {i}: degenerate conv2d {spec:?}"
                        )));
                    }
                    weighted(
                        &[out_ch, in_ch, kernel.0, kernel.1],
                        in_ch * kernel.0 * kernel.1,
                        out_ch,
                    )?
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => weighted(&[out_features, in_features], in_features, out_features)?,
                LayerSpec::BatchNorm { channels } => vec![
                    store.add(name("gamma"), Tensor::full(&[channels], 1.0), true)?,
                    store.add(name("beta"), Tensor::zeros(&[channels]), true)?,
                    store.add(name("running_mean"), Tensor::zeros(&[channels]), false)?,
                    store.add(name("running_var"), Tensor::full(&[channels], 1.0), false)?,
                ],
                _ => Vec::new(),
            };
            layers.push(Layer { spec, params });
        }
        Ok(Self { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// Every parameter owned by the stack, in layer order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter().copied())
            .collect()
    }

    /// Runs the stack. In [`Mode::Train`] batch-norm running statistics in
    /// `store` are updated with momentum [`BN_MOMENTUM`].
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = apply(g, store, layer, h, mode).map_err(|e| GradError::Layer {
                layer: format!("#{i} {}", layer.spec.kind()),
                source: Box::new(e),
            })?;
        }
        Ok(h)
    }
}

fn apply(g: &mut Graph, store: &mut ParamStore, layer: &Layer, x: Var, mode: Mode) -> Result<Var> {
    let p = &layer.params;
    match layer.spec {
        LayerSpec::Conv1d {
            stride, padding, ..
        } => {
            let (w, b) = (g.param(store, p[0]), g.param(store, p[1]));
            g.conv1d(x, w, Some(b), stride, padding)
        }
        LayerSpec::ConvTranspose1d {
            stride, padding, ..
        } => {
            let (w, b) = (g.param(store, p[0]), g.param(store, p[1]));
            g.conv_transpose1d(x, w, Some(b), stride, padding)
        }
        LayerSpec::Conv2d { stride, .. } => {
            let (w, b) = (g.param(store, p[0]), g.param(store, p[1]));
            g.conv2d(x, w, Some(b), stride)
        }
        LayerSpec::Linear { .. } => {
            let (w, b) = (g.param(store, p[0]), g.param(store, p[1]));
            g.linear(x, w, Some(b))
        }
        LayerSpec::BatchNorm { .. } => {
            let (gamma, beta) = (g.param(store, p[0]), g.param(store, p[1]));
            match mode {
                Mode::Train => {
                    let (y, stats) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
                    let unbias = if stats.count > 1 {
                        stats.count as f64 / (stats.count - 1) as f64
                    } else {
                        1.0
                    };
                    let rm = store.tensor_mut(p[2]).data_mut();
                    for (r, m) in rm.iter_mut().zip(&stats.mean) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                    }
                    let rv = store.tensor_mut(p[3]).data_mut();
                    for (r, v) in rv.iter_mut().zip(&stats.var) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                    }
                    Ok(y)
                }
                Mode::Eval => {
                    let mean = store.tensor(p[2]).data().to_vec();
                    let var = store.tensor(p[3]).data().to_vec();
                    g.batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPS)
                }
            }
        }
        LayerSpec::LeakyRelu { slope } => Ok(g.leaky_relu(x, slope)),
        LayerSpec::Softplus => Ok(g.softplus(x)),
        LayerSpec::ScalarAffine { scale, shift } => Ok(g.affine(x, scale, shift)),
        LayerSpec::StopGradient => Ok(g.stop_gradient(x)),
        LayerSpec::MeanLast => g.mean_last(x),
        LayerSpec::MergeChannels => {
            let s = g.shape(x).to_vec();
            if s.len() != 4 {
                return Err(GradError::Shape {
                    op: "merge_channels",
                    detail: format!("rank-4 input expected, got {s:?}"),
                });
            }
            g.reshape(x, &[s[0], s[1] * s[2], s[3]])
        }
    }
}
