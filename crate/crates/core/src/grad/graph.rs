//! Dynamic computation graph. Each training step builds a fresh [`Graph`],
//! records values as ops are applied, and [`Graph::backward`] walks the
//! nodes in reverse creation order.

use super::conv::{self, Conv1dGeom, Conv2dGeom};
use super::params::{ParamId, ParamStore};
use super::{GradError, Result, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Padding of a strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(L / stride)`; zeros split evenly, the odd one at the end.
    Same,
    Valid,
    Explicit(usize),
}

impl Padding {
    /// `(pad_left, out_len)` for a given input length.
    pub fn resolve(&self, in_len: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match *self {
            Padding::Same => {
                let out = in_len.div_ceil(stride);
                let total = ((out.max(1) - 1) * stride + kernel).saturating_sub(in_len);
                Some((total / 2, out))
            }
            Padding::Valid => (in_len >= kernel).then(|| (0, (in_len - kernel) / stride + 1)),
            Padding::Explicit(p) => {
                (in_len + 2 * p >= kernel).then(|| (p, (in_len + 2 * p - kernel) / stride + 1))
            }
        }
    }
}

/// Per-channel batch statistics computed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    StopGradient,
    Sum(Var),
    Mean(Var),
    MeanLast(Var),
    Mse {
        a: Var,
        b: Var,
        mask: Option<Vec<f64>>,
        count: f64,
    },
    RowSqDist(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv1dGeom,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        // geometry of the adjoint forward convolution
        geom: Conv1dGeom,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Permute3(Var, [usize; 3]),
    RepeatLast(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
}

/// Gradients of one backward pass, indexed by graph node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of every bound parameter that received one.
    pub fn for_params(&self) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g.clone())))
            .collect()
    }

    pub fn for_param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.get(v))
    }
}

fn shape_err(op: &'static str, detail: String) -> GradError {
    GradError::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.tensor(id).clone(), Op::Leaf, store.is_trainable(id));
        self.bound.push((id, v));
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), self.rg(&[a, b])))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(v, Op::Affine(x, scale), self.rg(&[x]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|e| if e > 0.0 { e } else { slope * e });
        self.push(v, Op::LeakyRelu(x, slope), self.rg(&[x]))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus);
        self.push(v, Op::Softplus(x), self.rg(&[x]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x), self.rg(&[x]))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.push(v, Op::Square(x), self.rg(&[x]))
    }

    /// Identity in value, zero derivative.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::StopGradient, false)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), self.rg(&[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        self.push(v, Op::Mean(x), self.rg(&[x]))
    }

    /// Mean over the last axis: `(.., L) -> (..)`.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some((&len, rest)) = t.shape().split_last() else {
            return Err(shape_err("mean_last", "scalar input".into()));
        };
        if len == 0 {
            return Err(shape_err("mean_last", "empty last axis".into()));
        }
        let data = t
            .data()
            .chunks_exact(len)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect();
        let v = Tensor::new(rest.to_vec(), data);
        Ok(self.push(v, Op::MeanLast(x), self.rg(&[x])))
    }

    /// Mean squared error, optionally restricted to elements where `mask` is 1.
    pub fn mse(&mut self, a: Var, b: Var, mask: Option<&[f64]>) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                return Err(shape_err(
                    "mse",
                    format!("mask has {} elements, inputs {}", m.len(), ta.numel()),
                ));
            }
        }
        let count = mask.map_or(ta.numel() as f64, |m| m.iter().sum());
        if count <= 0.0 {
            return Err(shape_err("mse", "no elements selected".into()));
        }
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .enumerate()
            .map(|(i, (x, y))| mask.map_or(1.0, |m| m[i]) * (x - y) * (x - y))
            .sum();
        let op = Op::Mse {
            a,
            b,
            mask: mask.map(|m| m.to_vec()),
            count,
        };
        Ok(self.push(Tensor::scalar(total / count), op, self.rg(&[a, b])))
    }

    /// Row-wise squared L2 distance: `(N, D), (N, D) -> (N)`.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_sq_dist", a, b)?;
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(shape_err(
                "row_sq_dist",
                format!("rank-2 inputs, got {:?}", ta.shape()),
            ));
        }
        let d = ta.shape()[1];
        let data = ta
            .data()
            .chunks_exact(d.max(1))
            .zip(self.value(b).data().chunks_exact(d.max(1)))
            .map(|(x, y)| crate::squared_distance(x, y))
            .collect();
        let v = Tensor::new(vec![ta.shape()[0]], data);
        Ok(self.push(v, Op::RowSqDist(a, b), self.rg(&[a, b])))
    }

    /// `x (N, in) · wᵀ (out, in) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", format!("input {xs:?}, weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("linear", format!("bias {:?}", self.shape(b))));
            }
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * fout];
        for r in 0..n {
            for o in 0..fout {
                let mut acc = bd.map_or(0.0, |b| b[o]);
                for i in 0..fin {
                    acc += xd[r * fin + i] * wd[o * fin + i];
                }
                out[r * fout + o] = acc;
            }
        }
        let deps: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(vec![n, fout], out), Op::Linear { x, w, b }, rg))
    }

    /// `x (B, Cin, L)`, `w (Cout, Cin, K)`, `b (Cout)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?}, weight {ws:?}, stride {stride}"),
            ));
        }
        self.check_bias("conv1d", b, ws[0])?;
        let (pad_left, out_len) = padding.resolve(xs[2], ws[2], stride).ok_or_else(|| {
            shape_err(
                "conv1d",
                format!("input length {} < kernel {}", xs[2], ws[2]),
            )
        })?;
        let geom = Conv1dGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            kernel: ws[2],
            stride,
            pad_left,
            in_len: xs[2],
            out_len,
        };
        let out = conv::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let deps: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::new(vec![geom.batch, geom.out_ch, out_len], out),
            Op::Conv1d { x, w, b, geom },
            rg,
        ))
    }

    /// Transposed convolution: `x (B, Cin, L)`, `w (Cin, Cout, K)`; output
    /// length `(L − 1)·stride − 2·padding + K`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || stride == 0 || xs[2] == 0 {
            return Err(shape_err(
                "conv_transpose1d",
                format!("input {xs:?}, weight {ws:?}, stride {stride}"),
            ));
        }
        self.check_bias("conv_transpose1d", b, ws[1])?;
        let full = (xs[2] - 1) * stride + ws[2];
        if full <= 2 * padding {
            return Err(shape_err(
                "conv_transpose1d",
                format!("padding {padding} too large"),
            ));
        }
        let out_len = full - 2 * padding;
        // adjoint conv: input = our output (Cout channels), output = our input
        let geom = Conv1dGeom {
            batch: xs[0],
            in_ch: ws[1],
            out_ch: ws[0],
            kernel: ws[2],
            stride,
            pad_left: padding,
            in_len: out_len,
            out_len: xs[2],
        };
        let mut out = conv::conv1d_grad_input(self.value(x).data(), self.value(w).data(), &geom);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (row, chunk) in out.chunks_exact_mut(out_len).enumerate() {
                let c = row % geom.in_ch;
                chunk.iter_mut().for_each(|v| *v += bd[c]);
            }
        }
        let deps: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::new(vec![xs[0], ws[1], out_len], out),
            Op::ConvTranspose1d { x, w, b, geom },
            rg,
        ))
    }

    /// `x (B, Cin, H, W)`, `w (Cout, Cin, Kh, Kw)`, "same" padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        self.check_bias("conv2d", b, ws[0])?;
        let (ph, oh) = Padding::Same
            .resolve(xs[2], ws[2], stride.0)
            .expect("same padding");
        let (pw, ow) = Padding::Same
            .resolve(xs[3], ws[3], stride.1)
            .expect("same padding");
        let geom = Conv2dGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            kernel: (ws[2], ws[3]),
            stride,
            pad: (ph, pw),
            in_hw: (xs[2], xs[3]),
            out_hw: (oh, ow),
        };
        let out = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let deps: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::new(vec![xs[0], ws[0], oh, ow], out),
            Op::Conv2d { x, w, b, geom },
            rg,
        ))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        match b {
            Some(b) if self.shape(b) != [channels] => Err(shape_err(
                op,
                format!("bias {:?}, expected [{channels}]", self.shape(b)),
            )),
            _ => Ok(()),
        }
    }

    fn bn_geometry(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(shape_err("batch_norm", format!("input {xs:?}")));
        }
        let (b, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batch_norm",
                format!(
                    "{c} channels, affine {:?}/{:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok((b, c, inner))
    }

    /// Normalizes each channel (axis 1) with batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (b, c, inner) = self.bn_geometry(x, gamma, beta)?;
        let count = b * inner;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                s += xd[(bi * c + ch) * inner..][..inner].iter().sum::<f64>();
            }
            mean[ch] = s / count as f64;
            let mut s2 = 0.0;
            for bi in 0..b {
                s2 += xd[(bi * c + ch) * inner..][..inner]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
            var[ch] = s2 / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, &inv_std, true);
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Normalizes with fixed (running) statistics; an affine map of `x`.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, _) = self.bn_geometry(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm", "running statistics length".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, mean, &inv_std, false))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        train: bool,
    ) -> Var {
        let xt = self.value(x);
        let shape = xt.shape().to_vec();
        let (c, inner) = (shape[1], shape[2..].iter().product::<usize>());
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xt.numel());
        let mut out = Vec::with_capacity(xt.numel());
        for (i, &v) in xt.data().iter().enumerate() {
            let ch = (i / inner) % c;
            let h = (v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(g[ch] * h + bt[ch]);
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            Tensor::new(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                train,
            },
            rg,
        )
    }

    /// Rows of `table (K, D)` selected by `indices`: `(N, D)`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(shape_err("gather", format!("table {ts:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ts[0]) {
            return Err(shape_err(
                "gather",
                format!("index {bad} out of {} rows", ts[0]),
            ));
        }
        let d = ts[1];
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *inputs
                    .first()
                    .ok_or_else(|| shape_err("concat", "no inputs".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} for shape {first:?}"),
            ));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} vs {first:?} on axis {axis}"),
                ));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(out_shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", t.shape()),
            ));
        }
        let v = t.clone().reshaped(shape);
        Ok(self.push(v, Op::Reshape(x), self.rg(&[x])))
    }

    /// Axis permutation of a rank-3 tensor; output axis `i` is input axis `perm[i]`.
    pub fn permute3(&mut self, x: Var, perm: [usize; 3]) -> Result<Var> {
        let t = self.value(x);
        let mut sorted = perm;
        sorted.sort_unstable();
        if t.rank() != 3 || sorted != [0, 1, 2] {
            return Err(shape_err(
                "permute3",
                format!("{:?} by {perm:?}", t.shape()),
            ));
        }
        let v = permute3_tensor(t, perm);
        Ok(self.push(v, Op::Permute3(x, perm), self.rg(&[x])))
    }

    /// Appends a trailing axis of length `times` by repetition: `(..) -> (.., times)`.
    pub fn repeat_last(&mut self, x: Var, times: usize) -> Var {
        let t = self.value(x);
        let mut shape = t.shape().to_vec();
        shape.push(times);
        let data = t
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        self.push(
            Tensor::new(shape, data),
            Op::RepeatLast(x, times),
            self.rg(&[x]),
        )
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(output.0)
            .ok_or_else(|| GradError::State(format!("node {} was never computed", output.0)))?;
        if node.value.numel() != 1 {
            return Err(GradError::State(format!(
                "backward() needs a scalar output, got shape {:?}; use backward_with",
                node.value.shape()
            )));
        }
        let upstream = Tensor::new(node.value.shape().to_vec(), vec![1.0]);
        self.backward_with(output, upstream)
    }

    /// Reverse pass seeded with an explicit upstream gradient.
    pub fn backward_with(&self, output: Var, upstream: Tensor) -> Result<Gradients> {
        let node = self
            .nodes
            .get(output.0)
            .ok_or_else(|| GradError::State(format!("node {} was never computed", output.0)))?;
        if node.value.shape() != upstream.shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "upstream {:?} for output {:?}",
                    upstream.shape(),
                    node.value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(upstream);
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.bound.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data);
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(va.data()).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, like(va, ga));
                self.accumulate(grads, *b, like(vb, gb));
            }
            Op::Affine(x, scale) => self.accumulate(grads, *x, g.map(|v| v * scale)),
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x);
                let d = gd
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                    .collect();
                self.accumulate(grads, *x, like(vx, d));
            }
            Op::Softplus(x) => {
                let vx = self.value(*x);
                let d = gd
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &x)| g * sigmoid(x))
                    .collect();
                self.accumulate(grads, *x, like(vx, d));
            }
            Op::Exp(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y)
                    .collect();
                self.accumulate(grads, *x, like(self.value(*x), d));
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let d = gd.iter().zip(vx.data()).map(|(g, x)| 2.0 * g * x).collect();
                self.accumulate(grads, *x, like(vx, d));
            }
            Op::Sum(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(vx.shape(), g.item()));
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    Tensor::full(vx.shape(), g.item() / vx.numel() as f64),
                );
            }
            Op::MeanLast(x) => {
                let vx = self.value(*x);
                let len = *vx.shape().last().expect("rank >= 1");
                let d = gd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / len as f64, len))
                    .collect();
                self.accumulate(grads, *x, like(vx, d));
            }
            Op::Mse { a, b, mask, count } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g.item() / count;
                let da: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .enumerate()
                    .map(|(i, (x, y))| scale * mask.as_ref().map_or(1.0, |m| m[i]) * (x - y))
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                self.accumulate(grads, *a, like(va, da));
                self.accumulate(grads, *b, like(vb, db));
            }
            Op::RowSqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let d = va.shape()[1];
                let da: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .enumerate()
                    .map(|(i, (x, y))| 2.0 * gd[i / d] * (x - y))
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                self.accumulate(grads, *a, like(va, da));
                self.accumulate(grads, *b, like(vb, db));
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, fin, fout) = (vx.shape()[0], vx.shape()[1], vw.shape()[0]);
                let (xd, wd) = (vx.data(), vw.data());
                let mut dx = vec![0.0; n * fin];
                let mut dw = vec![0.0; fout * fin];
                for r in 0..n {
                    for o in 0..fout {
                        let go = gd[r * fout + o];
                        for i in 0..fin {
                            dx[r * fin + i] += go * wd[o * fin + i];
                            dw[o * fin + i] += go * xd[r * fin + i];
                        }
                    }
                }
                self.accumulate(grads, *x, like(vx, dx));
                self.accumulate(grads, *w, like(vw, dw));
                if let Some(b) = b {
                    let mut db = vec![0.0; fout];
                    for r in 0..n {
                        for o in 0..fout {
                            db[o] += gd[r * fout + o];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![fout], db));
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                if self.requires_grad(*x) {
                    let dx = conv::conv1d_grad_input(gd, vw.data(), geom);
                    self.accumulate(grads, *x, like(vx, dx));
                }
                if self.requires_grad(*w) {
                    let dw = conv::conv1d_grad_weight(gd, vx.data(), geom);
                    self.accumulate(grads, *w, like(vw, dw));
                }
                if let Some(b) = b {
                    let db = conv::channel_sums(gd, geom.batch, geom.out_ch, geom.out_len);
                    self.accumulate(grads, *b, Tensor::new(vec![geom.out_ch], db));
                }
            }
            Op::ConvTranspose1d { x, w, b, geom } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                if self.requires_grad(*x) {
                    let dx = conv::conv1d_forward(gd, vw.data(), None, geom);
                    self.accumulate(grads, *x, like(vx, dx));
                }
                if self.requires_grad(*w) {
                    let dw = conv::conv1d_grad_weight(vx.data(), gd, geom);
                    self.accumulate(grads, *w, like(vw, dw));
                }
                if let Some(b) = b {
                    let db = conv::channel_sums(gd, geom.batch, geom.in_ch, geom.in_len);
                    self.accumulate(grads, *b, Tensor::new(vec![geom.in_ch], db));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                if self.requires_grad(*x) {
                    let dx = conv::conv2d_grad_input(gd, vw.data(), geom);
                    self.accumulate(grads, *x, like(vx, dx));
                }
                if self.requires_grad(*w) {
                    let dw = conv::conv2d_grad_weight(gd, vx.data(), geom);
                    self.accumulate(grads, *w, like(vw, dw));
                }
                if let Some(b) = b {
                    let plane = geom.out_hw.0 * geom.out_hw.1;
                    let db = conv::channel_sums(gd, geom.batch, geom.out_ch, plane);
                    self.accumulate(grads, *b, Tensor::new(vec![geom.out_ch], db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let vx = self.value(*x);
                let shape = vx.shape();
                let (b, c, inner) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (&gv, &h)) in gd.iter().zip(xhat).enumerate() {
                    let ch = (i / inner) % c;
                    dgamma[ch] += gv * h;
                    dbeta[ch] += gv;
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; vx.numel()];
                    if *train {
                        // dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let n = (b * inner) as f64;
                        for (i, d) in dx.iter_mut().enumerate() {
                            let ch = (i / inner) % c;
                            let dxhat = gd[i] * gam[ch];
                            *d = inv_std[ch] / n
                                * (n * dxhat
                                    - gam[ch] * dbeta[ch]
                                    - xhat[i] * gam[ch] * dgamma[ch]);
                        }
                    } else {
                        for (i, d) in dx.iter_mut().enumerate() {
                            let ch = (i / inner) % c;
                            *d = gd[i] * gam[ch] * inv_std[ch];
                        }
                    }
                    self.accumulate(grads, *x, like(vx, dx));
                }
                self.accumulate(grads, *gamma, Tensor::new(vec![c], dgamma));
                self.accumulate(grads, *beta, Tensor::new(vec![c], dbeta));
            }
            Op::Gather { table, indices } => {
                let vt = self.value(*table);
                let d = vt.shape()[1];
                let mut dt = vec![0.0; vt.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += gd[r * d + j];
                    }
                }
                self.accumulate(grads, *table, like(vt, dt));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).numel()))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, v) in inputs.iter().enumerate() {
                        let block = self.value(*v).shape()[*axis] * inner;
                        parts[k].extend_from_slice(&gd[pos..pos + block]);
                        pos += block;
                    }
                }
                for (v, data) in inputs.iter().zip(parts) {
                    self.accumulate(grads, *v, like(self.value(*v), data));
                }
            }
            Op::Reshape(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, like(vx, gd.to_vec()));
            }
            Op::Permute3(x, perm) => {
                let mut inverse = [0; 3];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(grads, *x, permute3_tensor(g, inverse));
            }
            Op::RepeatLast(x, times) => {
                let vx = self.value(*x);
                let d = gd.chunks_exact(*times).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, like(vx, d));
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn permute3_tensor(t: &Tensor, perm: [usize; 3]) -> Tensor {
    let s = t.shape();
    let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let in_strides = [s[1] * s[2], s[2], 1];
    let strides = [
        in_strides[perm[0]],
        in_strides[perm[1]],
        in_strides[perm[2]],
    ];
    let d = t.data();
    let mut out = Vec::with_capacity(t.numel());
    for i in 0..out_shape[0] {
        for j in 0..out_shape[1] {
            for k in 0..out_shape[2] {
                out.push(d[i * strides[0] + j * strides[1] + k * strides[2]]);
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out)
}
