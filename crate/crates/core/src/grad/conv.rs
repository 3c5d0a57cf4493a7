//! Direct convolution kernels. Every output element is produced by exactly
//! one task with a fixed summation order, so results do not depend on the
//! thread count.

use rayon::prelude::*;

/// Shapes of a 1D convolution `(B, Cin, Lin) -> (B, Cout, Lout)` with
/// weight `(Cout, Cin, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv1dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    /// Output positions `t` for which tap `k` reads inside the input, as a
    /// half-open range, plus the input index read at the range start.
    #[inline]
    fn tap_range(&self, k: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let lo = if self.pad_left > k {
            (self.pad_left - k).div_ceil(s)
        } else {
            0
        };
        let limit = self.in_len + self.pad_left; // need t*s + k < limit
        let hi = if limit > k {
            ((limit - k - 1) / s + 1).min(self.out_len)
        } else {
            0
        };
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * s + k - self.pad_left)
    }
}

pub(crate) fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: &Conv1dGeom,
) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_ch * g.out_len];
    if g.out_len == 0 {
        return out;
    }
    out.par_chunks_mut(g.out_len)
        .enumerate()
        .for_each(|(row, y)| {
            let (b, o) = (row / g.out_ch, row % g.out_ch);
            if let Some(bias) = bias {
                y.fill(bias[o]);
            }
            for i in 0..g.in_ch {
                let xrow = &x[(b * g.in_ch + i) * g.in_len..][..g.in_len];
                let wrow = &w[(o * g.in_ch + i) * g.kernel..][..g.kernel];
                for (k, &wk) in wrow.iter().enumerate() {
                    if wk == 0.0 {
                        continue;
                    }
                    let (lo, hi, start) = g.tap_range(k);
                    let src = xrow[start..].iter().step_by(g.stride);
                    for (yt, &xv) in y[lo..hi].iter_mut().zip(src) {
                        *yt += wk * xv;
                    }
                }
            }
        });
    out
}

/// Gradient with respect to the input; also the forward pass of a
/// transposed convolution.
pub(crate) fn conv1d_grad_input(dy: &[f64], w: &[f64], g: &Conv1dGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.in_ch * g.in_len];
    if g.in_len == 0 {
        return dx;
    }
    dx.par_chunks_mut(g.in_len)
        .enumerate()
        .for_each(|(row, dxr)| {
            let (b, i) = (row / g.in_ch, row % g.in_ch);
            for o in 0..g.out_ch {
                let dyr = &dy[(b * g.out_ch + o) * g.out_len..][..g.out_len];
                let wrow = &w[(o * g.in_ch + i) * g.kernel..][..g.kernel];
                for (k, &wk) in wrow.iter().enumerate() {
                    let (lo, hi, start) = g.tap_range(k);
                    let dst = dxr[start..].iter_mut().step_by(g.stride);
                    for (dv, &d) in dst.zip(&dyr[lo..hi]) {
                        *dv += wk * d;
                    }
                }
            }
        });
    dx
}

pub(crate) fn conv1d_grad_weight(dy: &[f64], x: &[f64], g: &Conv1dGeom) -> Vec<f64> {
    let mut dw = vec![0.0; g.out_ch * g.in_ch * g.kernel];
    dw.par_chunks_mut(g.kernel)
        .enumerate()
        .for_each(|(row, dwr)| {
            let (o, i) = (row / g.in_ch, row % g.in_ch);
            for b in 0..g.batch {
                let dyr = &dy[(b * g.out_ch + o) * g.out_len..][..g.out_len];
                let xrow = &x[(b * g.in_ch + i) * g.in_len..][..g.in_len];
                for (k, acc) in dwr.iter_mut().enumerate() {
                    let (lo, hi, start) = g.tap_range(k);
                    let src = xrow[start..].iter().step_by(g.stride);
                    *acc += dyr[lo..hi].iter().zip(src).map(|(d, x)| d * x).sum::<f64>();
                }
            }
        });
    dw
}

/// Sum of `dy` over batch and time for each output channel.
pub(crate) fn channel_sums(dy: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; ch];
    for b in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            *acc += dy[(b * ch + c) * len..][..len].iter().sum::<f64>();
        }
    }
    out
}

/// 2D convolution `(B, Cin, H, W) -> (B, Cout, Ho, Wo)` with weight
/// `(Cout, Cin, Kh, Kw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl Conv2dGeom {
    #[inline]
    fn src(&self, oh: usize, ow: usize, kh: usize, kw: usize) -> Option<usize> {
        let h = (oh * self.stride.0 + kh) as isize - self.pad.0 as isize;
        let w = (ow * self.stride.1 + kw) as isize - self.pad.1 as isize;
        (h >= 0 && w >= 0 && (h as usize) < self.in_hw.0 && (w as usize) < self.in_hw.1)
            .then(|| h as usize * self.in_hw.1 + w as usize)
    }

    fn in_plane(&self) -> usize {
        self.in_hw.0 * self.in_hw.1
    }

    fn out_plane(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: &Conv2dGeom,
) -> Vec<f64> {
    let (ip, op, taps) = (g.in_plane(), g.out_plane(), g.taps());
    let mut out = vec![0.0; g.batch * g.out_ch * op];
    if op == 0 {
        return out;
    }
    out.par_chunks_mut(op).enumerate().for_each(|(row, y)| {
        let (b, o) = (row / g.out_ch, row % g.out_ch);
        if let Some(bias) = bias {
            y.fill(bias[o]);
        }
        for i in 0..g.in_ch {
            let xp = &x[(b * g.in_ch + i) * ip..][..ip];
            let wk = &w[(o * g.in_ch + i) * taps..][..taps];
            for kh in 0..g.kernel.0 {
                for kw in 0..g.kernel.1 {
                    let wv = wk[kh * g.kernel.1 + kw];
                    for oh in 0..g.out_hw.0 {
                        for ow in 0..g.out_hw.1 {
                            if let Some(s) = g.src(oh, ow, kh, kw) {
                                y[oh * g.out_hw.1 + ow] += wv * xp[s];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv2d_grad_input(dy: &[f64], w: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (ip, op, taps) = (g.in_plane(), g.out_plane(), g.taps());
    let mut dx = vec![0.0; g.batch * g.in_ch * ip];
    if ip == 0 {
        return dx;
    }
    dx.par_chunks_mut(ip).enumerate().for_each(|(row, dxp)| {
        let (b, i) = (row / g.in_ch, row % g.in_ch);
        for o in 0..g.out_ch {
            let dyp = &dy[(b * g.out_ch + o) * op..][..op];
            let wk = &w[(o * g.in_ch + i) * taps..][..taps];
            for kh in 0..g.kernel.0 {
                for kw in 0..g.kernel.1 {
                    let wv = wk[kh * g.kernel.1 + kw];
                    for oh in 0..g.out_hw.0 {
                        for ow in 0..g.out_hw.1 {
                            if let Some(s) = g.src(oh, ow, kh, kw) {
                                dxp[s] += wv * dyp[oh * g.out_hw.1 + ow];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn conv2d_grad_weight(dy: &[f64], x: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (ip, op, taps) = (g.in_plane(), g.out_plane(), g.taps());
    let mut dw = vec![0.0; g.out_ch * g.in_ch * taps];
    dw.par_chunks_mut(taps).enumerate().for_each(|(row, dwk)| {
        let (o, i) = (row / g.in_ch, row % g.in_ch);
        for b in 0..g.batch {
            let dyp = &dy[(b * g.out_ch + o) * op..][..op];
            let xp = &x[(b * g.in_ch + i) * ip..][..ip];
            for kh in 0..g.kernel.0 {
                for kw in 0..g.kernel.1 {
                    let mut acc = 0.0;
                    for oh in 0..g.out_hw.0 {
                        for ow in 0..g.out_hw.1 {
                            if let Some(s) = g.src(oh, ow, kh, kw) {
                                acc += dyp[oh * g.out_hw.1 + ow] * xp[s];
                            }
                        }
                    }
                    dwk[kh * g.kernel.1 + kw] += acc;
                }
            }
        }
    });
    dw
}
