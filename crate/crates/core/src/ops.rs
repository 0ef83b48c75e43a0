//! Forward and backward kernels for the layer kinds the baseline uses.
//!
//! All kernels are "valid" (no padding) and accumulate in row-major index
//! order, so results are bit-reproducible and match a naive nested loop
//! that sums in the same order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output length of a valid sliding window: `floor((len - k) / stride) + 1`.
pub fn window_out_len(len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    if kernel == 0 || kernel > len {
        return Err(Error::WindowTooLarge { kernel, len });
    }
    Ok((len - kernel) / stride + 1)
}

fn expect_rank(t: &Tensor, rank: usize, op: &'static str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::ShapeMismatch { op, left: t.shape().to_vec(), right: vec![rank] });
    }
    Ok(())
}

/// Valid 1D cross-correlation of `input [in_ch, len]` with `weight [out_ch, in_ch, k]`.
pub fn conv1d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    expect_rank(input, 2, "conv1d input")?;
    expect_rank(weight, 3, "conv1d weight")?;
    let (in_ch, len) = (input.shape()[0], input.shape()[1]);
    let (out_ch, w_in, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if w_in != in_ch {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [out_ch] {
        return Err(Error::ShapeMismatch { op: "conv1d bias", left: bias.shape().to_vec(), right: vec![out_ch] });
    }
    let out_len = window_out_len(len, k, stride)?;
    let geom = ConvGeom { in_ch, len, out_ch, k, stride, out_len };
    let w_t = transpose(weight.data(), out_ch, in_ch * k);
    Tensor::new(vec![out_ch, out_len], conv_forward_prepared(input.data(), &w_t, bias.data(), geom))
}

/// Geometry of one conv application.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    in_ch: usize,
    len: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    out_len: usize,
}

impl ConvGeom {
    pub(crate) fn new(input: &Tensor, weight_shape: &[usize], stride: usize) -> Result<Self> {
        let (in_ch, len) = (input.shape()[0], input.shape()[1]);
        let (out_ch, w_in, k) = (weight_shape[0], weight_shape[1], weight_shape[2]);
        if w_in != in_ch || input.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: input.shape().to_vec(),
                right: weight_shape.to_vec(),
            });
        }
        let out_len = window_out_len(len, k, stride)?;
        Ok(Self { in_ch, len, out_ch, k, stride, out_len })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.out_len]
    }
}

/// Forward conv against tap-major weights `w_t[c * k + j][o]`.
pub(crate) fn conv_forward_prepared(x: &[f64], w_t: &[f64], bias: &[f64], geom: ConvGeom) -> Vec<f64> {
    let ConvGeom { in_ch, len, out_ch, k, stride, out_len } = geom;
    // Position-major accumulator out_t[t][o]. Each element starts at its bias
    // and then sums taps in row-major (c, j) order, exactly like a naive loop.
    let mut out_t = Vec::with_capacity(out_ch * out_len);
    for _ in 0..out_len {
        out_t.extend_from_slice(bias);
    }
    for c in 0..in_ch {
        let xc = &x[c * len..(c + 1) * len];
        for j in 0..k {
            let wcol = &w_t[(c * k + j) * out_ch..(c * k + j + 1) * out_ch];
            for t in 0..out_len {
                let xv = xc[t * stride + j];
                let acc = &mut out_t[t * out_ch..(t + 1) * out_ch];
                for (a, &wv) in acc.iter_mut().zip(wcol) {
                    *a += wv * xv;
                }
            }
        }
    }
    transpose(&out_t, out_len, out_ch)
}

/// Backward conv against tap-major weights. Weight and bias gradients are
/// added into `gw_t` (tap-major) and `gb`; the input gradient is returned when
/// requested.
pub(crate) fn conv_backward_prepared(
    x: &[f64],
    w_t: &[f64],
    g: &[f64],
    geom: ConvGeom,
    need_input: bool,
    gw_t: &mut [f64],
    gb: &mut [f64],
) -> Option<Vec<f64>> {
    let ConvGeom { in_ch, len, out_ch, k, stride, out_len } = geom;
    let g_t = transpose(g, out_ch, out_len);
    for (b, row) in gb.iter_mut().zip(g.chunks_exact(out_len)) {
        *b += row.iter().sum::<f64>();
    }
    let mut gx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    for c in 0..in_ch {
        let xc = &x[c * len..(c + 1) * len];
        for j in 0..k {
            let tap = (c * k + j) * out_ch..(c * k + j + 1) * out_ch;
            let gcol = &mut gw_t[tap.clone()];
            for t in 0..out_len {
                let xv = xc[t * stride + j];
                for (a, &gv) in gcol.iter_mut().zip(&g_t[t * out_ch..(t + 1) * out_ch]) {
                    *a += gv * xv;
                }
            }
            if need_input {
                let wcol = &w_t[tap];
                for t in 0..out_len {
                    gx[c * len + t * stride + j] += dot4(&g_t[t * out_ch..(t + 1) * out_ch], wcol);
                }
            }
        }
    }
    need_input.then_some(gx)
}

/// Transposes a row-major `[rows, cols]` buffer into `[cols, rows]`.
pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dst = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub struct Conv1dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of a conv1d given the upstream gradient `grad_out [out_ch, out_len]`.
///
/// The input gradient is only computed when `need_input` is set.
pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    need_input: bool,
) -> Result<Conv1dGrads> {
    let (in_ch, len) = (input.shape()[0], input.shape()[1]);
    let (out_ch, _, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let out_len = window_out_len(len, k, stride)?;
    if grad_out.shape() != [out_ch, out_len] {
        return Err(Error::ShapeMismatch {
            op: "conv1d backward",
            left: grad_out.shape().to_vec(),
            right: vec![out_ch, out_len],
        });
    }
    let geom = ConvGeom { in_ch, len, out_ch, k, stride, out_len };
    let w_t = transpose(weight.data(), out_ch, in_ch * k);
    let mut gw_t = vec![0.0; w_t.len()];
    let mut gb = vec![0.0; out_ch];
    let gx = conv_backward_prepared(input.data(), &w_t, grad_out.data(), geom, need_input, &mut gw_t, &mut gb);
    let gw = transpose(&gw_t, in_ch * k, out_ch);
    Ok(Conv1dGrads {
        input: gx.map(|gx| Tensor::new(input.shape().to_vec(), gx)).transpose()?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::from_vec(gb),
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU, gated on the forward output being positive.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output.data().iter().zip(grad_out.data()).map(|(&y, &g)| if y > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

pub fn maxpool1d_forward(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    maxpool1d_forward_indexed(x, kernel, stride).map(|(t, _)| t)
}

/// Max pooling that also returns the flat input index chosen for each output
/// (first index on ties).
pub fn maxpool1d_forward_indexed(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(x, 2, "maxpool1d input")?;
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    let out_len = window_out_len(len, kernel, stride)?;
    let d = x.data();
    let mut out = Vec::with_capacity(ch * out_len);
    let mut idx = Vec::with_capacity(ch * out_len);
    for c in 0..ch {
        for t in 0..out_len {
            let start = c * len + t * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if d[i] > d[best] {
                    best = i;
                }
            }
            out.push(d[best]);
            idx.push(best);
        }
    }
    Ok((Tensor::new(vec![ch, out_len], out)?, idx))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[i] += g;
    }
    gx
}

/// `weight [m, n] · x [n] + bias [m]`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(weight, 2, "dense weight")?;
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != n || x.shape().len() != 1 {
        return Err(Error::ShapeMismatch { op: "dense", left: x.shape().to_vec(), right: weight.shape().to_vec() });
    }
    if bias.shape() != [m] {
        return Err(Error::ShapeMismatch { op: "dense bias", left: bias.shape().to_vec(), right: vec![m] });
    }
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| {
            let mut acc = b;
            for (w, v) in row.iter().zip(x.data()) {
                acc += w * v;
            }
            acc
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

pub struct DenseGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor, need_input: bool) -> DenseGrads {
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    let g = grad_out.data();
    let mut gw = Vec::with_capacity(m * n);
    for &gi in g {
        gw.extend(x.data().iter().map(|&v| gi * v));
    }
    let input = need_input.then(|| {
        let mut gx = vec![0.0; n];
        for (row, &gi) in weight.data().chunks_exact(n).zip(g) {
            for (acc, &w) in gx.iter_mut().zip(row) {
                *acc += gi * w;
            }
        }
        Tensor::from_vec(gx)
    });
    DenseGrads { input, weight: Tensor::new(vec![m, n], gw).expect("weight shape"), bias: grad_out.clone() }
}

/// Max-shifted softmax and the cross-entropy loss `-ln p[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let c = logits.len();
    if c < 2 || logits.shape().len() != 1 {
        return Err(Error::InvalidTensor(format!("logits must be a vector of >= 2 classes, got {:?}", logits.shape())));
    }
    if label >= c {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.data().iter().map(|&z| z - max).collect();
    let exps: Vec<f64> = shifted.iter().map(|z| z.exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    let loss = log_sum - shifted[label];
    let probs = exps.iter().map(|e| e / sum).collect();
    Ok((loss, Tensor::from_vec(probs)))
}
