//! Naive f64 reference implementations of the layer forward passes,
//! written as plain nested loops and sharing no code with the library.

#![allow(dead_code)]

use ocnna_core::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn from_tensor(t: &Tensor) -> Self {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn with(&self, i: usize, v: f64) -> Self {
        let mut a = self.clone();
        a.data[i] = v;
        a
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.data.iter().zip(weights).map(|(a, b)| a * b).sum()
    }
}

/// Output size and leading pad for `same` or `valid` padding.
pub fn geometry(input: usize, kernel: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + kernel).saturating_sub(input);
        (out, total / 2)
    } else {
        ((input - kernel) / stride + 1, 0)
    }
}

/// Cross-correlation, NHWC input and `[kh, kw, cin, cout]` kernel.
pub fn conv(x: &Arr, k: &Arr, b: &Arr, stride: usize, same: bool) -> Arr {
    let [n, h, w, cin] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let [kh, kw, _, cout] = [k.shape[0], k.shape[1], k.shape[2], k.shape[3]];
    let (oh, pt) = geometry(h, kh, stride, same);
    let (ow, pl) = geometry(w, kw, stride, same);
    let mut out = vec![0.0; n * oh * ow * cout];
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = b.data[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data[((bi * h + iy as usize) * w + ix as usize) * cin + ci];
                                let kv = k.data[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((bi * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Arr {
        shape: vec![n, oh, ow, cout],
        data: out,
    }
}

pub fn maxpool(x: &Arr, window: usize, stride: usize) -> Arr {
    let [n, h, w, c] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..window {
                        for dx in 0..window {
                            let (iy, ix) = (oy * stride + dy, ox * stride + dx);
                            m = m.max(x.data[((bi * h + iy) * w + ix) * c + ch]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Arr {
        shape: vec![n, oh, ow, c],
        data: out,
    }
}

/// `x [n, f] @ w [f, u] + b`.
pub fn dense(x: &Arr, w: &Arr, b: &Arr) -> Arr {
    let (n, f, u) = (x.shape[0], x.shape[1], w.shape[1]);
    let mut out = vec![0.0; n * u];
    for i in 0..n {
        for j in 0..u {
            let mut acc = b.data[j];
            for p in 0..f {
                acc += x.data[i * f + p] * w.data[p * u + j];
            }
            out[i * u + j] = acc;
        }
    }
    Arr {
        shape: vec![n, u],
        data: out,
    }
}

pub fn relu(x: &Arr) -> Arr {
    Arr {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Row-wise softmax of a rank-2 array.
pub fn softmax(x: &Arr) -> Arr {
    let c = x.shape[1];
    let mut out = Vec::with_capacity(x.data.len());
    for row in x.data.chunks(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    Arr {
        shape: x.shape.clone(),
        data: out,
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Arr, labels: &[u32]) -> f64 {
    let p = softmax(logits);
    let c = logits.shape[1];
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -p.data[i * c + l as usize].ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// Inference batchnorm over the last axis.
pub fn batchnorm(x: &Arr, gamma: &Arr, beta: &Arr, mean: &Arr, var: &Arr, eps: f64) -> Arr {
    let c = *x.shape.last().unwrap();
    Arr {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i % c;
                gamma.data[ch] * (v - mean.data[ch]) / (var.data[ch] + eps).sqrt() + beta.data[ch]
            })
            .collect(),
    }
}
