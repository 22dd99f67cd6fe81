//! Layer vocabulary and the CPU kernels behind it.
//!
//! All image tensors are NHWC. Convolutions go through a per-sample im2col
//! matrix and a single GEMM so the kernels stay deterministic and allocation
//! stays bounded by one sample at a time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{Mode, SeededRng};
use crate::error::{Result, SddsError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        size: usize,
    },
    GlobalAvgPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    Softmax,
    Dropout {
        rate: f64,
    },
    Upsample2d {
        factor: usize,
    },
    /// Concatenates the primary input with a skip input along channels.
    ConcatSkip,
}

/// Per-node state recorded during forward and consumed by backward.
#[derive(Clone, Debug, Default)]
pub enum Aux {
    #[default]
    None,
    Argmax(Vec<usize>),
    Mask(Vec<f64>),
}

pub(crate) struct LayerGrads {
    pub inputs: Vec<Tensor>,
    pub params: Vec<Vec<f64>>,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SddsError::InvalidSpec(format!("{msg}: {self:?}")));
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv2d dimensions must be positive");
                }
            }
            LayerSpec::MaxPool2d { size: 0 } => return bad("pool size must be positive"),
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                return bad("dense dimensions must be positive")
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad("dropout rate must lie in [0, 1)")
            }
            LayerSpec::Upsample2d { factor: 0 } => {
                return bad("upsample factor must be positive")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        match self {
            LayerSpec::ConcatSkip => 2,
            _ => 1,
        }
    }

    /// Shapes of the weight and bias tensors, if the layer has parameters.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => vec![
                vec![kernel, kernel, in_channels, out_channels],
                vec![out_channels],
            ],
            LayerSpec::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    /// Fan-in of the weight tensor, used by He initialization.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { in_channels, kernel, .. } => Some(kernel * kernel * in_channels),
            LayerSpec::Dense { inputs, .. } => Some(inputs),
            _ => None,
        }
    }

    /// Output shape including the batch dimension.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        if inputs.len() != self.arity() {
            return Err(SddsError::Shape(format!(
                "{self:?} expects {} inputs, got {}",
                self.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        let image = |x: &[usize]| -> Result<(usize, usize, usize, usize)> {
            match *x {
                [b, h, w, c] => Ok((b, h, w, c)),
                _ => Err(SddsError::Shape(format!("{self:?} expects NHWC input, got {x:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let (b, h, w, c) = image(x)?;
                if c != in_channels {
                    return Err(SddsError::Shape(format!(
                        "conv2d expects {in_channels} channels, got {c}"
                    )));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(SddsError::Shape(format!(
                        "conv2d kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                Ok(vec![
                    b,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    out_channels,
                ])
            }
            LayerSpec::MaxPool2d { size } => {
                let (b, h, w, c) = image(x)?;
                if h < size || w < size {
                    return Err(SddsError::Shape(format!("pool {size} larger than {h}x{w}")));
                }
                Ok(vec![b, h / size, w / size, c])
            }
            LayerSpec::GlobalAvgPool => {
                let (b, _, _, c) = image(x)?;
                Ok(vec![b, c])
            }
            LayerSpec::Dense { inputs: n_in, outputs } => {
                let features: usize = x[1..].iter().product();
                if x.len() < 2 || features != n_in {
                    return Err(SddsError::Shape(format!(
                        "dense expects {n_in} features, got {x:?}"
                    )));
                }
                Ok(vec![x[0], outputs])
            }
            LayerSpec::Upsample2d { factor } => {
                let (b, h, w, c) = image(x)?;
                Ok(vec![b, h * factor, w * factor, c])
            }
            LayerSpec::ConcatSkip => {
                let (b, h, w, c) = image(x)?;
                let (b2, h2, w2, c2) = image(inputs[1])?;
                if (b, h, w) != (b2, h2, w2) {
                    return Err(SddsError::Shape(format!(
                        "skip concat of {x:?} with {:?}",
                        inputs[1]
                    )));
                }
                Ok(vec![b, h, w, c + c2])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax | LayerSpec::Dropout { .. } => {
                Ok(x.to_vec())
            }
        }
    }

    pub(crate) fn forward(
        &self,
        inputs: &[&Tensor],
        params: &[&Tensor],
        mode: Mode,
        rng: Option<&mut SeededRng>,
    ) -> Result<(Tensor, Aux)> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
        let out_shape = self.output_shape(&shapes)?;
        let x = inputs[0];
        let (out, aux) = match *self {
            LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                let geo = ConvGeometry::new(x.shape(), &out_shape, kernel, stride, padding);
                (conv_forward(&geo, x.data(), params[0].data(), params[1].data(), out_shape), Aux::None)
            }
            LayerSpec::MaxPool2d { size } => maxpool_forward(x, size, out_shape),
            LayerSpec::GlobalAvgPool => (gap_forward(x, out_shape), Aux::None),
            LayerSpec::Dense { inputs: n_in, outputs } => {
                let batch = x.shape()[0];
                let mut out = vec![0.0; batch * outputs];
                for row in out.chunks_mut(outputs) {
                    row.copy_from_slice(params[1].data());
                }
                gemm(batch, n_in, outputs, x.data(), Layout::N(n_in), params[0].data(), Layout::N(outputs), &mut out, 1.0);
                (Tensor::new(out_shape, out)?, Aux::None)
            }
            LayerSpec::Relu => (map(x, |v| v.max(0.0)), Aux::None),
            LayerSpec::Sigmoid => (map(x, sigmoid), Aux::None),
            LayerSpec::Softmax => (softmax_last_axis(x), Aux::None),
            LayerSpec::Dropout { rate } => dropout_forward(x, rate, mode, rng)?,
            LayerSpec::Upsample2d { factor } => (upsample_forward(x, factor, out_shape), Aux::None),
            LayerSpec::ConcatSkip => (concat_forward(x, inputs[1], out_shape), Aux::None),
        };
        Ok((out, aux))
    }

    pub(crate) fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        aux: &Aux,
        params: &[&Tensor],
    ) -> Result<LayerGrads> {
        if grad_out.shape() != output.shape() {
            return Err(SddsError::Shape(format!(
                "gradient {:?} for output {:?}",
                grad_out.shape(),
                output.shape()
            )));
        }
        let x = inputs[0];
        let g = grad_out.data();
        let single = |t: Tensor| LayerGrads { inputs: vec![t], params: Vec::new() };
        let grads = match (self, aux) {
            (&LayerSpec::Conv2d { kernel, stride, padding, .. }, _) => {
                let geo = ConvGeometry::new(x.shape(), output.shape(), kernel, stride, padding);
                let (dx, dw, db) = conv_backward(&geo, x.data(), params[0].data(), g);
                LayerGrads { inputs: vec![Tensor::new(x.shape().to_vec(), dx)?], params: vec![dw, db] }
            }
            (LayerSpec::MaxPool2d { .. }, Aux::Argmax(argmax)) => {
                let mut dx = vec![0.0; x.numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                single(Tensor::new(x.shape().to_vec(), dx)?)
            }
            (LayerSpec::GlobalAvgPool, _) => single(gap_backward(x.shape(), g)),
            (&LayerSpec::Dense { inputs: n_in, outputs }, _) => {
                let batch = x.shape()[0];
                let mut dx = vec![0.0; batch * n_in];
                // dx = g · Wᵀ
                gemm(batch, outputs, n_in, g, Layout::N(outputs), params[0].data(), Layout::T(outputs), &mut dx, 0.0);
                let mut dw = vec![0.0; n_in * outputs];
                // dW = xᵀ · g
                gemm(n_in, batch, outputs, x.data(), Layout::T(n_in), g, Layout::N(outputs), &mut dw, 0.0);
                let mut db = vec![0.0; outputs];
                for row in g.chunks(outputs) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                LayerGrads { inputs: vec![Tensor::new(x.shape().to_vec(), dx)?], params: vec![dw, db] }
            }
            (LayerSpec::Relu, _) => {
                let dx = x.data().iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                single(Tensor::new(x.shape().to_vec(), dx)?)
            }
            (LayerSpec::Sigmoid, _) => {
                let dx = output.data().iter().zip(g).map(|(&y, &gv)| gv * y * (1.0 - y)).collect();
                single(Tensor::new(x.shape().to_vec(), dx)?)
            }
            (LayerSpec::Softmax, _) => {
                let k = *x.shape().last().unwrap();
                let mut dx = vec![0.0; x.numel()];
                for ((d, y), gv) in dx.chunks_mut(k).zip(output.data().chunks(k)).zip(g.chunks(k)) {
                    let dot: f64 = y.iter().zip(gv).map(|(a, b)| a * b).sum();
                    for i in 0..k {
                        d[i] = y[i] * (gv[i] - dot);
                    }
                }
                single(Tensor::new(x.shape().to_vec(), dx)?)
            }
            (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => {
                let dx = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                single(Tensor::new(x.shape().to_vec(), dx)?)
            }
            (LayerSpec::Dropout { .. }, _) => single(grad_out.clone()),
            (&LayerSpec::Upsample2d { factor }, _) => single(upsample_backward(x.shape(), factor, g)),
            (LayerSpec::ConcatSkip, _) => {
                let (a, b) = concat_backward(x.shape(), inputs[1].shape(), g);
                LayerGrads { inputs: vec![a, b], params: Vec::new() }
            }
            (LayerSpec::MaxPool2d { .. }, _) => {
                return Err(SddsError::NoTape);
            }
        };
        Ok(grads)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn softmax_last_axis(x: &Tensor) -> Tensor {
    let k = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn dropout_forward(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: Option<&mut SeededRng>,
) -> Result<(Tensor, Aux)> {
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Aux::None));
    }
    let rng = rng.ok_or_else(|| SddsError::InvalidSpec("train-mode dropout needs an rng".into()))?;
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Aux::Mask(mask)))
}

fn maxpool_forward(x: &Tensor, size: usize, out_shape: Vec<usize>) -> (Tensor, Aux) {
    let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (b, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * ho * wo * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = ((n * h + oy * size + ky) * w + ox * size + kx) * c + ch;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (Tensor::new(out_shape, out).expect("pool shape"), Aux::Argmax(argmax))
}

fn gap_forward(x: &Tensor, out_shape: Vec<usize>) -> Tensor {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![0.0; b * c];
    for (n, sample) in x.data().chunks(h * w * c).enumerate() {
        let acc = &mut out[n * c..(n + 1) * c];
        for px in sample.chunks(c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        let scale = 1.0 / (h * w) as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    Tensor::new(out_shape, out).expect("gap shape")
}

fn gap_backward(in_shape: &[usize], g: &[f64]) -> Tensor {
    let (b, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Vec::with_capacity(b * h * w * c);
    for n in 0..b {
        let gs = &g[n * c..(n + 1) * c];
        for _ in 0..h * w {
            dx.extend(gs.iter().map(|v| v * scale));
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("gap shape")
}

fn upsample_forward(x: &Tensor, factor: usize, out_shape: Vec<usize>) -> Tensor {
    let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (b, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * ho * wo * c);
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((n * h + oy / factor) * w + ox / factor) * c;
                out.extend_from_slice(&xd[src..src + c]);
            }
        }
    }
    Tensor::new(out_shape, out).expect("upsample shape")
}

fn upsample_backward(in_shape: &[usize], factor: usize, g: &[f64]) -> Tensor {
    let (b, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = vec![0.0; b * h * w * c];
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((n * ho + oy) * wo + ox) * c;
                let dst = ((n * h + oy / factor) * w + ox / factor) * c;
                for ch in 0..c {
                    dx[dst + ch] += g[src + ch];
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("upsample shape")
}

fn concat_forward(a: &Tensor, b: &Tensor, out_shape: Vec<usize>) -> Tensor {
    let ca = a.shape()[3];
    let cb = b.shape()[3];
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for (pa, pb) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::new(out_shape, out).expect("concat shape")
}

fn concat_backward(a_shape: &[usize], b_shape: &[usize], g: &[f64]) -> (Tensor, Tensor) {
    let ca = a_shape[3];
    let cb = b_shape[3];
    let pixels = g.len() / (ca + cb);
    let mut da = Vec::with_capacity(pixels * ca);
    let mut db = Vec::with_capacity(pixels * cb);
    for px in g.chunks(ca + cb) {
        da.extend_from_slice(&px[..ca]);
        db.extend_from_slice(&px[ca..]);
    }
    (
        Tensor::new(a_shape.to_vec(), da).expect("concat shape"),
        Tensor::new(b_shape.to_vec(), db).expect("concat shape"),
    )
}

struct ConvGeometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            batch: input[0],
            h: input[1],
            w: input[2],
            cin: input[3],
            ho: output[1],
            wo: output[2],
            cout: output[3],
            kernel,
            stride,
            padding,
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source row/column in the unpadded input, or `None` inside the padding.
    fn source(&self, out: usize, k: usize, limit: usize) -> Option<usize> {
        (out * self.stride + k).checked_sub(self.padding).filter(|&v| v < limit)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (k, c, plen) = (self.kernel, self.cin, self.patch_len());
        cols.fill(0.0);
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * plen..][..plen];
                for ky in 0..k {
                    let Some(iy) = self.source(oy, ky, self.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = self.source(ox, kx, self.w) else { continue };
                        let src = (iy * self.w + ix) * c;
                        row[(ky * k + kx) * c..][..c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (k, c, plen) = (self.kernel, self.cin, self.patch_len());
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * plen..][..plen];
                for ky in 0..k {
                    let Some(iy) = self.source(oy, ky, self.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = self.source(ox, kx, self.w) else { continue };
                        let dst = (iy * self.w + ix) * c;
                        for (d, v) in dx[dst..dst + c].iter_mut().zip(&row[(ky * k + kx) * c..][..c]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(geo: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64], out_shape: Vec<usize>) -> Tensor {
    let (p, plen, cout) = (geo.positions(), geo.patch_len(), geo.cout);
    let in_stride = geo.h * geo.w * geo.cin;
    let mut out = vec![0.0; geo.batch * p * cout];
    let mut cols = vec![0.0; p * plen];
    for n in 0..geo.batch {
        geo.im2col(&x[n * in_stride..(n + 1) * in_stride], &mut cols);
        let y = &mut out[n * p * cout..(n + 1) * p * cout];
        for row in y.chunks_mut(cout) {
            row.copy_from_slice(bias);
        }
        gemm(p, plen, cout, &cols, Layout::N(plen), w, Layout::N(cout), y, 1.0);
    }
    Tensor::new(out_shape, out).expect("conv shape")
}

fn conv_backward(geo: &ConvGeometry, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (p, plen, cout) = (geo.positions(), geo.patch_len(), geo.cout);
    let in_stride = geo.h * geo.w * geo.cin;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; plen * cout];
    let mut db = vec![0.0; cout];
    let mut cols = vec![0.0; p * plen];
    let mut dcols = vec![0.0; p * plen];
    for n in 0..geo.batch {
        let gy = &g[n * p * cout..(n + 1) * p * cout];
        geo.im2col(&x[n * in_stride..(n + 1) * in_stride], &mut cols);
        // dW += colsᵀ · gy
        gemm(plen, p, cout, &cols, Layout::T(plen), gy, Layout::N(cout), &mut dw, 1.0);
        // dcols = gy · Wᵀ
        gemm(p, cout, plen, gy, Layout::N(cout), w, Layout::T(cout), &mut dcols, 0.0);
        geo.col2im(&dcols, &mut dx[n * in_stride..(n + 1) * in_stride]);
        for row in gy.chunks(cout) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    (dx, dw, db)
}

/// Storage of a row-major matrix operand: `N(cols)` as stored, `T(cols)` for
/// the transpose of a stored matrix with `cols` columns.
#[derive(Clone, Copy)]
enum Layout {
    N(usize),
    T(usize),
}

impl Layout {
    fn strides(self) -> (isize, isize) {
        match self {
            Layout::N(cols) => (cols as isize, 1),
            Layout::T(cols) => (1, cols as isize),
        }
    }
}

/// `c = a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = la.strides();
    let (rsb, csb) = lb.strides();
    // SAFETY: operand lengths were checked above against the m/k/n extents,
    // and every stride pair addresses exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}
