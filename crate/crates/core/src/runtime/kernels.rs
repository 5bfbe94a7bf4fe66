//! Forward and backward kernels for every node kind.
//!
//! All kernels are pure functions of their inputs. Work that is split across
//! samples is reduced in sample order, so results do not depend on the size
//! of the thread pool.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::runtime::params::{BnParams, ConvAttrs, ConvParams, PoolAttrs};
use crate::tensor::Tensor4;

/// Running-statistics update factor used in train mode.
pub const BN_MOMENTUM: f64 = 0.1;
/// Default variance floor for batch-norm layers.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

// ── GEMM ──────────────────────────────────────────────────────────

/// `c = a·b + beta·c` for row-major `a: m×k` and `b: k×n`. Either operand can
/// be read transposed, in which case its storage is `k×m` / `n×k`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ── Convolution ───────────────────────────────────────────────────

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    hout: usize,
    wout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.hout * g.wout;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wout..(oy + 1) * g.wout];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.hout * g.wout;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wout {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wout + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(
    input: &Tensor4,
    attrs: &ConvAttrs,
    params: &ConvParams,
    node: &str,
) -> Result<ConvGeom> {
    if input.channels() != attrs.in_ch {
        return Err(Error::shape(
            node,
            format!(
                "conv expects {} input channels, got {}",
                attrs.in_ch,
                input.channels()
            ),
        ));
    }
    if params.weight.len() != attrs.weight_len() {
        return Err(Error::shape(
            node,
            format!(
                "conv weight has {} elements, expected {}",
                params.weight.len(),
                attrs.weight_len()
            ),
        ));
    }
    if let Some(b) = &params.bias {
        if b.len() != attrs.out_ch {
            return Err(Error::shape(
                node,
                format!("conv bias has {} entries", b.len()),
            ));
        }
    }
    let (hout, wout) = attrs
        .output_hw(input.height(), input.width())
        .ok_or_else(|| {
            Error::shape(
                node,
                format!(
                    "{}x{} kernel does not fit padded {}x{} input",
                    attrs.kh,
                    attrs.kw,
                    input.height(),
                    input.width()
                ),
            )
        })?;
    Ok(ConvGeom {
        c: attrs.in_ch,
        h: input.height(),
        w: input.width(),
        hout,
        wout,
        kh: attrs.kh,
        kw: attrs.kw,
        stride: attrs.stride,
        pad: attrs.pad,
    })
}

/// 2-D convolution with zero padding.
pub fn conv2d_forward(
    input: &Tensor4,
    attrs: &ConvAttrs,
    params: &ConvParams,
    node: &str,
) -> Result<Tensor4> {
    let g = conv_geom(input, attrs, params, node)?;
    let p = g.hout * g.wout;
    let k = attrs.fan_in();
    let mut out = Tensor4::zeros([input.batch(), attrs.out_ch, g.hout, g.wout]);
    let out_len = out.sample_len();
    if out_len == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(n, y)| {
            let x = input.sample(n);
            let mut scratch;
            let col: &[f64] = if g.is_pointwise() {
                x
            } else {
                scratch = vec![0.0; k * p];
                im2col(x, &g, &mut scratch);
                &scratch
            };
            if let Some(b) = &params.bias {
                for (o, bias) in b.iter().enumerate() {
                    y[o * p..(o + 1) * p].fill(*bias);
                }
            }
            gemm(
                attrs.out_ch,
                k,
                p,
                &params.weight,
                false,
                col,
                false,
                1.0,
                y,
            );
        });
    Ok(out)
}

/// Gradients of a convolution with respect to its input and parameters.
pub struct ConvBackward {
    pub input: Tensor4,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    input: &Tensor4,
    attrs: &ConvAttrs,
    params: &ConvParams,
    grad_out: &Tensor4,
    node: &str,
) -> Result<ConvBackward> {
    let g = conv_geom(input, attrs, params, node)?;
    let p = g.hout * g.wout;
    let k = attrs.fan_in();
    if grad_out.dims() != [input.batch(), attrs.out_ch, g.hout, g.wout] {
        return Err(Error::shape(
            node,
            "conv output gradient has the wrong shape",
        ));
    }
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..input.batch())
        .into_par_iter()
        .map(|n| {
            let x = input.sample(n);
            let dy = grad_out.sample(n);
            let pointwise = g.is_pointwise();
            let col_owned;
            let col: &[f64] = if pointwise {
                x
            } else {
                let mut c = vec![0.0; k * p];
                im2col(x, &g, &mut c);
                col_owned = c;
                &col_owned
            };
            let mut dw = vec![0.0; attrs.weight_len()];
            gemm(attrs.out_ch, p, k, dy, false, col, true, 0.0, &mut dw);
            let mut dcol = vec![0.0; k * p];
            gemm(
                k,
                attrs.out_ch,
                p,
                &params.weight,
                true,
                dy,
                false,
                0.0,
                &mut dcol,
            );
            let dx = if pointwise {
                dcol
            } else {
                let mut dx = vec![0.0; g.c * g.h * g.w];
                col2im(&dcol, &g, &mut dx);
                dx
            };
            (dx, dw)
        })
        .collect();

    let mut weight = vec![0.0; attrs.weight_len()];
    let mut dx_data = Vec::with_capacity(input.data().len());
    for (dx, dw) in per_sample {
        dx_data.extend_from_slice(&dx);
        for (a, b) in weight.iter_mut().zip(&dw) {
            *a += b;
        }
    }
    let bias = params.bias.as_ref().map(|_| {
        let mut db = vec![0.0; attrs.out_ch];
        for n in 0..grad_out.batch() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += grad_out.channel(n, o).iter().sum::<f64>();
            }
        }
        db
    });
    Ok(ConvBackward {
        input: Tensor4::from_vec(input.dims(), dx_data)?,
        weight,
        bias,
    })
}

// ── Batch normalization ───────────────────────────────────────────

/// Values recorded by a batch-norm forward pass for its backward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: Mode,
    /// Normalized pre-affine values.
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    /// Batch mean and unbiased batch variance (train mode only).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub fn batchnorm_forward(
    input: &Tensor4,
    params: &BnParams,
    eps: f64,
    mode: Mode,
    node: &str,
) -> Result<(Tensor4, BnCache)> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "batch-norm `{node}` needs eps > 0, got {eps}"
        )));
    }
    let c = input.channels();
    if params.channels() != c || !params.is_consistent() {
        return Err(Error::shape(
            node,
            format!(
                "batch-norm has {} channels, input has {c}",
                params.channels()
            ),
        ));
    }
    let n = input.batch();
    let count = (n * input.plane()) as f64;
    let mut batch_mean = Vec::new();
    let mut batch_var = Vec::new();
    let mut inv_std = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                if count == 0.0 {
                    return Err(Error::shape(node, "train-mode batch-norm on empty batch"));
                }
                let mut s = 0.0;
                for b in 0..n {
                    s += input.channel(b, ch).iter().sum::<f64>();
                }
                let mean = s / count;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += input
                        .channel(b, ch)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / count;
                batch_mean.push(mean);
                batch_var.push(if count > 1.0 { ss / (count - 1.0) } else { var });
                (mean, var)
            }
            Mode::Inference => (params.running_mean[ch], params.running_var[ch]),
        };
        means.push(mean);
        inv_std.push(1.0 / (var + eps).sqrt());
    }
    let mut xhat = input.clone();
    let mut out = Tensor4::zeros(input.dims());
    for b in 0..n {
        for ch in 0..c {
            let (m, s, gm, bt) = (means[ch], inv_std[ch], params.gamma[ch], params.beta[ch]);
            let xh = xhat.channel_mut(b, ch);
            for v in xh.iter_mut() {
                *v = (*v - m) * s;
            }
            let xh = xhat.channel(b, ch);
            for (o, v) in out.channel_mut(b, ch).iter_mut().zip(xh) {
                *o = gm * v + bt;
            }
        }
    }
    Ok((
        out,
        BnCache {
            mode,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

/// Exponential moving average of the running statistics.
pub fn update_running_stats(params: &mut BnParams, cache: &BnCache) {
    if cache.mode != Mode::Train {
        return;
    }
    for ch in 0..params.channels() {
        params.running_mean[ch] =
            (1.0 - BN_MOMENTUM) * params.running_mean[ch] + BN_MOMENTUM * cache.batch_mean[ch];
        params.running_var[ch] =
            (1.0 - BN_MOMENTUM) * params.running_var[ch] + BN_MOMENTUM * cache.batch_var[ch];
    }
}

pub struct BnBackward {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batchnorm_backward(params: &BnParams, cache: &BnCache, grad_out: &Tensor4) -> BnBackward {
    let [n, c, _, _] = grad_out.dims();
    let count = (n * grad_out.plane()) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let dy = grad_out.channel(b, ch);
            let xh = cache.xhat.channel(b, ch);
            dbeta[ch] += dy.iter().sum::<f64>();
            dgamma[ch] += dy.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>();
        }
    }
    let mut dx = Tensor4::zeros(grad_out.dims());
    for b in 0..n {
        for ch in 0..c {
            let g = params.gamma[ch] * cache.inv_std[ch];
            let dy = grad_out.channel(b, ch);
            let xh = cache.xhat.channel(b, ch);
            let out = dx.channel_mut(b, ch);
            match cache.mode {
                Mode::Inference => {
                    for (o, d) in out.iter_mut().zip(dy) {
                        *o = g * d;
                    }
                }
                Mode::Train => {
                    let mean_dy = dbeta[ch] / count;
                    let mean_dy_xhat = dgamma[ch] / count;
                    for ((o, d), x) in out.iter_mut().zip(dy).zip(xh) {
                        *o = g * (d - mean_dy - x * mean_dy_xhat);
                    }
                }
            }
        }
    }
    BnBackward {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

// ── Activations ───────────────────────────────────────────────────

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_forward(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v *= sigmoid(*v);
    }
    out
}

pub fn silu_backward(input: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut dx = grad_out.clone();
    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
        let s = sigmoid(*x);
        *d *= s * (1.0 + x * (1.0 - s));
    }
    dx
}

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut dx = grad_out.clone();
    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

// ── Pooling / resampling ──────────────────────────────────────────

/// Max pooling; returns the output and the flat input index of each
/// selected element (first maximum wins; padded cells never win).
pub fn maxpool_forward(
    input: &Tensor4,
    attrs: &PoolAttrs,
    node: &str,
) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = input.dims();
    let (hout, wout) = attrs
        .output_hw(h, w)
        .ok_or_else(|| Error::shape(node, format!("pool window does not fit {h}x{w} input")))?;
    let mut out = Tensor4::zeros([n, c, hout, wout]);
    let mut argmax = vec![0usize; out.data().len()];
    let mut oi = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = input.index(b, ch, 0, 0);
            let plane = input.channel(b, ch);
            for oy in 0..hout {
                for ox in 0..wout {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..attrs.kernel {
                        let iy = (oy * attrs.stride + ky) as isize - attrs.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..attrs.kernel {
                            let ix = (ox * attrs.stride + kx) as isize - attrs.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if plane[i] > best || best_i == usize::MAX {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = base + best_i;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward(input_dims: [usize; 4], argmax: &[usize], grad_out: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(input_dims);
    let d = dx.data_mut();
    for (g, &i) in grad_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    dx
}

pub fn upsample2_forward(input: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input.dims();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.channel(b, ch);
            let dst = out.channel_mut(b, ch);
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor4) -> Tensor4 {
    let [n, c, h2, w2] = grad_out.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.channel(b, ch);
            let dst = dx.channel_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
    }
    dx
}

// ── Junctions ─────────────────────────────────────────────────────

/// Stack along the channel axis in argument order.
pub fn concat_forward(inputs: &[&Tensor4], node: &str) -> Result<Tensor4> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape(node, "concat needs at least one input"))?;
    let [n, _, h, w] = first.dims();
    let mut total = 0;
    for t in inputs {
        let d = t.dims();
        if d[0] != n || d[2] != h || d[3] != w {
            return Err(Error::shape(
                node,
                format!("concat input {:?} does not match {:?}", d, first.dims()),
            ));
        }
        total += d[1];
    }
    let mut out = Tensor4::zeros([n, total, h, w]);
    for b in 0..n {
        let mut off = 0;
        for t in inputs {
            let len = t.sample_len();
            let dst_start = out.index(b, off, 0, 0);
            out.data_mut()[dst_start..dst_start + len].copy_from_slice(t.sample(b));
            off += t.channels();
        }
    }
    Ok(out)
}

/// Split a concat gradient back into per-input gradients.
pub fn concat_backward(channel_counts: &[usize], grad_out: &Tensor4) -> Vec<Tensor4> {
    let [n, _, h, w] = grad_out.dims();
    let mut grads: Vec<Tensor4> = channel_counts
        .iter()
        .map(|&c| Tensor4::zeros([n, c, h, w]))
        .collect();
    for b in 0..n {
        let mut off = 0;
        for (g, &c) in grads.iter_mut().zip(channel_counts) {
            let src_start = grad_out.index(b, off, 0, 0);
            let len = c * h * w;
            g.sample_mut(b)
                .copy_from_slice(&grad_out.data()[src_start..src_start + len]);
            off += c;
        }
    }
    grads
}

pub fn add_forward(inputs: &[&Tensor4], node: &str) -> Result<Tensor4> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape(node, "add needs at least one input"))?;
    let mut out = (*first).clone();
    for t in &inputs[1..] {
        if t.dims() != first.dims() {
            return Err(Error::shape(
                node,
                format!("add operands {:?} and {:?} differ", first.dims(), t.dims()),
            ));
        }
        out.add_assign(t)?;
    }
    Ok(out)
}
