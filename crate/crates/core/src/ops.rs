//! Forward and backward kernels for the supported layer kinds.
//!
//! All kernels are pure: identical inputs give bit-identical outputs.
//! Reductions accumulate in `f64` and round once to `f32` on store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that the output is `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

/// Output size and leading pad along one spatial axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if kernel > input {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        const OP: &str = "conv2d";
        if input.rank() != 4 {
            return Err(Error::dim(OP, format!("input must be NHWC, got shape {:?}", input.shape())));
        }
        if kernel.rank() != 4 {
            return Err(Error::dim(
                OP,
                format!("kernel must be [kh, kw, cin, cout], got shape {:?}", kernel.shape()),
            ));
        }
        let (n, h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
        let (kh, kw, kcin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
        if cin != kcin {
            return Err(Error::dim(
                OP,
                format!("input channel axis (3) is {cin} but kernel input-channel axis (2) is {kcin}"),
            ));
        }
        if bias.shape() != [cout] {
            return Err(Error::dim(
                OP,
                format!("bias shape {:?} does not match kernel output-channel axis (3) = {cout}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (oh, pad_top) = conv_out_dim(h, kh, stride, padding)
            .ok_or_else(|| Error::dim(OP, format!("kernel height {kh} exceeds input height (axis 1) {h}")))?;
        let (ow, pad_left) = conv_out_dim(w, kw, stride, padding)
            .ok_or_else(|| Error::dim(OP, format!("kernel width {kw} exceeds input width (axis 2) {w}")))?;
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Input row for output row `o` and kernel row `k`, if inside the image.
    #[inline]
    fn in_y(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad_top).filter(|&y| y < self.h)
    }

    #[inline]
    fn in_x(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad_left).filter(|&x| x < self.w)
    }
}

/// 2-D cross-correlation over NHWC input with a `[kh, kw, cin, cout]` kernel.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, bias, stride, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(g.n * g.oh * g.ow * g.cout);
    let mut acc = vec![0f64; g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for (a, &b) in acc.iter_mut().zip(bias.data()) {
                    *a = f64::from(b);
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.in_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.in_x(ox, kx) else { continue };
                        let in_off = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k_off = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = f64::from(x[in_off + ci]);
                            if xv == 0.0 {
                                continue;
                            }
                            let row = &k[k_off + ci * g.cout..k_off + (ci + 1) * g.cout];
                            for (a, &kv) in acc.iter_mut().zip(row) {
                                *a += xv * f64::from(kv);
                            }
                        }
                    }
                }
                out.extend(acc.iter().map(|&a| a as f32));
            }
        }
    }
    Tensor::from_shape_vec(vec![g.n, g.oh, g.ow, g.cout], out)
}

/// Gradients of a convolution: `(input, kernel, bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new(input, kernel, bias, stride, padding)?;
    if grad_out.shape() != [g.n, g.oh, g.ow, g.cout] {
        return Err(Error::dim(
            "conv2d_backward",
            format!("upstream gradient shape {:?}, expected {:?}", grad_out.shape(), [g.n, g.oh, g.ow, g.cout]),
        ));
    }
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gx = vec![0f64; x.len()];
    let mut gk = vec![0f64; k.len()];
    let mut gb = vec![0f64; g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let go_off = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let gout = &go[go_off..go_off + g.cout];
                for (b, &v) in gb.iter_mut().zip(gout) {
                    *b += f64::from(v);
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.in_y(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.in_x(ox, kx) else { continue };
                        let in_off = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let k_off = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = f64::from(x[in_off + ci]);
                            let base = k_off + ci * g.cout;
                            let mut gxv = 0f64;
                            for co in 0..g.cout {
                                let gv = f64::from(gout[co]);
                                gk[base + co] += xv * gv;
                                gxv += f64::from(k[base + co]) * gv;
                            }
                            gx[in_off + ci] += gxv;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_shape_vec(input.shape().to_vec(), narrow(gx))?,
        Tensor::from_shape_vec(kernel.shape().to_vec(), narrow(gk))?,
        Tensor::from_shape_vec(vec![g.cout], narrow(gb))?,
    ))
}

fn narrow(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

fn pool_geometry(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    const OP: &str = "maxpool2d";
    if input.rank() != 4 {
        return Err(Error::dim(OP, format!("input must be NHWC, got shape {:?}", input.shape())));
    }
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("maxpool window and stride must be positive".into()));
    }
    let (n, h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if window > h || window > w {
        return Err(Error::dim(
            OP,
            format!("window {window} larger than spatial axes (1, 2) = ({h}, {w})"),
        ));
    }
    Ok((n, h, w, c, (h - window) / stride + 1, (w - window) / stride + 1))
}

/// Index (into the input) of the maximum of each pooling window. Ties go to
/// the first element in row-major window order.
fn pool_argmax(input: &Tensor, window: usize, stride: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n, h, w, c, oh, ow) = pool_geometry(input, window, stride)?;
    let x = input.data();
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    Ok((idx, vec![n, oh, ow, c]))
}

/// Max pooling without padding.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (idx, shape) = pool_argmax(input, window, stride)?;
    let x = input.data();
    Tensor::from_shape_vec(shape, idx.into_iter().map(|i| x[i]).collect())
}

pub fn maxpool2d_backward(input: &Tensor, window: usize, stride: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (idx, shape) = pool_argmax(input, window, stride)?;
    if grad_out.shape() != shape.as_slice() {
        return Err(Error::dim(
            "maxpool2d_backward",
            format!("upstream gradient shape {:?}, expected {shape:?}", grad_out.shape()),
        ));
    }
    let mut gx = vec![0f64; input.len()];
    for (&i, &g) in idx.iter().zip(grad_out.data()) {
        gx[i] += f64::from(g);
    }
    Tensor::from_shape_vec(input.shape().to_vec(), narrow(gx))
}

fn dense_check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    const OP: &str = "dense";
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(Error::dim(
            OP,
            format!("expected rank-2 input and weights, got {:?} and {:?}", input.shape(), weights.shape()),
        ));
    }
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (wf, u) = (weights.shape()[0], weights.shape()[1]);
    if f != wf {
        return Err(Error::dim(
            OP,
            format!("input feature axis (1) is {f} but weight input axis (0) is {wf}"),
        ));
    }
    if bias.shape() != [u] {
        return Err(Error::dim(
            OP,
            format!("bias shape {:?} does not match weight output axis (1) = {u}", bias.shape()),
        ));
    }
    Ok((n, f, u))
}

/// Affine map `input · weights + bias` with `weights` laid out `[in, out]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, u) = dense_check(input, weights, bias)?;
    let x = input.data();
    let wt = weights.data();
    let mut out = Vec::with_capacity(n * u);
    let mut acc = vec![0f64; u];
    for row in x.chunks_exact(f) {
        for (a, &b) in acc.iter_mut().zip(bias.data()) {
            *a = f64::from(b);
        }
        for (i, &xv) in row.iter().enumerate() {
            let xv = f64::from(xv);
            for (a, &wv) in acc.iter_mut().zip(&wt[i * u..(i + 1) * u]) {
                *a += xv * f64::from(wv);
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    Tensor::from_shape_vec(vec![n, u], out)
}

/// Gradients of a dense layer: `(input, weights, bias)`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f, u) = dense_check(input, weights, bias)?;
    if grad_out.shape() != [n, u] {
        return Err(Error::dim(
            "dense_backward",
            format!("upstream gradient shape {:?}, expected {:?}", grad_out.shape(), [n, u]),
        ));
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let mut gx = vec![0f64; n * f];
    let mut gw = vec![0f64; f * u];
    let mut gb = vec![0f64; u];
    for b in 0..n {
        let grow = &go[b * u..(b + 1) * u];
        for (acc, &g) in gb.iter_mut().zip(grow) {
            *acc += f64::from(g);
        }
        for i in 0..f {
            let xv = f64::from(x[b * f + i]);
            let mut s = 0f64;
            for j in 0..u {
                let g = f64::from(grow[j]);
                gw[i * u + j] += xv * g;
                s += f64::from(wt[i * u + j]) * g;
            }
            gx[b * f + i] = s;
        }
    }
    Ok((
        Tensor::from_shape_vec(vec![n, f], narrow(gx))?,
        Tensor::from_shape_vec(vec![f, u], narrow(gw))?,
        Tensor::from_shape_vec(vec![u], narrow(gb))?,
    ))
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the upstream gradient where the forward input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("input {:?} vs upstream gradient {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_shape_vec(input.shape().to_vec(), data)
}

fn softmax_row(row: &[f32], out: &mut Vec<f32>) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = row.iter().map(|&v| (f64::from(v) - f64::from(max)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    out.extend(exps.iter().map(|&e| (e / sum) as f32));
}

/// Row-wise softmax over `[N, C]`.
pub fn softmax(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 2 {
        return Err(Error::dim("softmax", format!("expected [N, C], got {:?}", t.shape())));
    }
    let c = t.shape()[1];
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks_exact(c) {
        softmax_row(row, &mut out);
    }
    Tensor::from_shape_vec(t.shape().to_vec(), out)
}

/// Softmax backward given the forward output `y`: `y * (g - <g, y>)` per row.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.rank() != 2 || output.shape() != grad_out.shape() {
        return Err(Error::dim(
            "softmax_backward",
            format!("output {:?} vs upstream gradient {:?}", output.shape(), grad_out.shape()),
        ));
    }
    let c = output.shape()[1];
    let mut gx = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        let dot: f64 = y.iter().zip(g).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        gx.extend(y.iter().zip(g).map(|(&a, &b)| (f64::from(a) * (f64::from(b) - dot)) as f32));
    }
    Tensor::from_shape_vec(output.shape().to_vec(), gx)
}

/// Mean softmax cross-entropy over a batch of logits, with its gradient.
/// Uses log-sum-exp so large logits cannot overflow.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut loss = 0f64;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let label = label as usize;
        if label >= c {
            return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
        }
        let max = row.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (f64::from(v) - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - f64::from(row[label]);
        for (j, &v) in row.iter().enumerate() {
            let p = (f64::from(v) - lse).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad.push(((p - t) / n as f64) as f32);
        }
    }
    Ok((loss / n as f64, Tensor::from_shape_vec(vec![n, c], grad)?))
}

fn bn_check(t: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor) -> Result<usize> {
    let c = *t.shape().last().expect("rank >= 1");
    for (name, p) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if p.shape() != [c] {
            return Err(Error::dim(
                "batchnorm",
                format!("{name} shape {:?} does not match channel axis (last) = {c}", p.shape()),
            ));
        }
    }
    Ok(c)
}

/// Per-channel affine normalization over the last axis, using stored statistics.
pub fn batchnorm_forward(t: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor, eps: f32) -> Result<Tensor> {
    let c = bn_check(t, gamma, beta, mean, var)?;
    let scale: Vec<f64> = gamma
        .data()
        .iter()
        .zip(var.data())
        .map(|(&g, &v)| f64::from(g) / (f64::from(v) + f64::from(eps)).sqrt())
        .collect();
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks_exact(c) {
        for (ch, &x) in row.iter().enumerate() {
            let y = (f64::from(x) - f64::from(mean.data()[ch])) * scale[ch] + f64::from(beta.data()[ch]);
            out.push(y as f32);
        }
    }
    let out = Tensor::from_shape_vec(t.shape().to_vec(), out)?;
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "batchnorm output (check var + eps > 0)".into(),
        });
    }
    Ok(out)
}

/// Gradients of inference-mode batchnorm: `(input, gamma, beta)`. The stored
/// mean and variance are constants.
pub fn batchnorm_backward(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f32,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = bn_check(t, gamma, beta, mean, var)?;
    if grad_out.shape() != t.shape() {
        return Err(Error::dim(
            "batchnorm_backward",
            format!("input {:?} vs upstream gradient {:?}", t.shape(), grad_out.shape()),
        ));
    }
    let inv_std: Vec<f64> = var.data().iter().map(|&v| 1.0 / (f64::from(v) + f64::from(eps)).sqrt()).collect();
    let mut gx = Vec::with_capacity(t.len());
    let mut gg = vec![0f64; c];
    let mut gb = vec![0f64; c];
    for (row, grow) in t.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        for ch in 0..c {
            let g = f64::from(grow[ch]);
            let xhat = (f64::from(row[ch]) - f64::from(mean.data()[ch])) * inv_std[ch];
            gg[ch] += g * xhat;
            gb[ch] += g;
            gx.push((g * f64::from(gamma.data()[ch]) * inv_std[ch]) as f32);
        }
    }
    Ok((
        Tensor::from_shape_vec(t.shape().to_vec(), gx)?,
        Tensor::from_shape_vec(vec![c], narrow(gg))?,
        Tensor::from_shape_vec(vec![c], narrow(gb))?,
    ))
}

/// Collapses every axis after the first.
pub fn flatten(t: &Tensor) -> Tensor {
    t.reshape(vec![t.batch(), t.row_len()]).expect("same element count")
}
