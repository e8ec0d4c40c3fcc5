//! Forward and backward kernels for the layer kinds the engine supports.
//!
//! All image tensors are `H x W x C`. Convolutions use valid padding.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Whether the activation maps zero to zero.
    pub fn preserves_zero(self) -> bool {
        self.apply(0.0) == 0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn image_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(SorError::dim(format!("{what} must be H x W x C, got {s:?}"))),
    }
}

/// Output size of a valid (unpadded) window sweep.
pub fn valid_out(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

fn conv_dims(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (h, w, cin) = image_dims(input, "conv2d input")?;
    let (kh, kw, wcin, cout) = match *weights.shape() {
        [a, b, c, d] => (a, b, c, d),
        ref s => {
            return Err(SorError::dim(format!(
                "conv2d weights must be kh x kw x Cin x Cout, got {s:?}"
            )))
        }
    };
    if wcin != cin {
        return Err(SorError::dim(format!(
            "conv2d input has {cin} channels but weights expect {wcin}"
        )));
    }
    let ho = valid_out(h, kh, stride);
    let wo = valid_out(w, kw, stride);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok((h, w, cin, kh, kw, cout, ho, wo)),
        _ => Err(SorError::dim(format!(
            "kernel {kh}x{kw} stride {stride} does not fit a {h}x{w} input"
        ))),
    }
}

/// Valid cross-correlation of `input` with every filter, plus bias.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (_h, w, cin, kh, kw, cout, ho, wo) = conv_dims(input, weights, stride)?;
    if bias.len() != cout {
        return Err(SorError::dim(format!(
            "conv2d bias has {} entries for {cout} filters",
            bias.len()
        )));
    }
    let x = input.data();
    let k = weights.data();
    let mut out = vec![0.0; ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let o = &mut out[(oy * wo + ox) * cout..][..cout];
            o.copy_from_slice(bias.data());
            for dy in 0..kh {
                let iy = oy * stride + dy;
                for dx in 0..kw {
                    let ix = ox * stride + dx;
                    let px = &x[(iy * w + ix) * cin..][..cin];
                    let kbase = (dy * kw + dx) * cin;
                    for (ci, &a) in px.iter().enumerate() {
                        let row = &k[(kbase + ci) * cout..][..cout];
                        for (acc, &wt) in o.iter_mut().zip(row) {
                            *acc += a * wt;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ho, wo, cout], out)
}

/// Accumulates weight and bias gradients and optionally returns the input gradient.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    grad_weights: Option<(&mut Tensor, &mut Tensor)>,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (h, w, cin, kh, kw, cout, ho, wo) = conv_dims(input, weights, stride)?;
    if grad_out.shape() != [ho, wo, cout] {
        return Err(SorError::dim(format!(
            "conv2d upstream gradient {:?} does not match output [{ho}, {wo}, {cout}]",
            grad_out.shape()
        )));
    }
    let x = input.data();
    let k = weights.data();
    let g = grad_out.data();
    let mut gin = if want_input_grad {
        Some(vec![0.0; h * w * cin])
    } else {
        None
    };
    let mut gw = grad_weights;
    for oy in 0..ho {
        for ox in 0..wo {
            let go = &g[(oy * wo + ox) * cout..][..cout];
            if let Some((_, gb)) = gw.as_mut() {
                for (b, &v) in gb.data_mut().iter_mut().zip(go) {
                    *b += v;
                }
            }
            for dy in 0..kh {
                let iy = oy * stride + dy;
                for dx in 0..kw {
                    let ix = ox * stride + dx;
                    let pix = (iy * w + ix) * cin;
                    let kbase = (dy * kw + dx) * cin;
                    for ci in 0..cin {
                        let koff = (kbase + ci) * cout;
                        if let Some((gk, _)) = gw.as_mut() {
                            let a = x[pix + ci];
                            let row = &mut gk.data_mut()[koff..koff + cout];
                            for (r, &v) in row.iter_mut().zip(go) {
                                *r += a * v;
                            }
                        }
                        if let Some(gi) = gin.as_mut() {
                            let row = &k[koff..koff + cout];
                            let mut s = 0.0;
                            for (&wt, &v) in row.iter().zip(go) {
                                s += wt * v;
                            }
                            gi[pix + ci] += s;
                        }
                    }
                }
            }
        }
    }
    gin.map(|d| Tensor::new(vec![h, w, cin], d)).transpose()
}

/// Max pooling; returns the pooled tensor and the flat input index of each maximum.
pub fn maxpool2d_forward(input: &Tensor, pool: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = image_dims(input, "maxpool2d input")?;
    let (ho, wo) = match (valid_out(h, pool, stride), valid_out(w, pool, stride)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(SorError::dim(format!(
                "pool {pool} stride {stride} does not fit a {h}x{w} input"
            )))
        }
    };
    let x = input.data();
    let mut out = vec![f64::NEG_INFINITY; ho * wo * c];
    let mut arg = vec![0usize; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let obase = (oy * wo + ox) * c;
            for dy in 0..pool {
                for dx in 0..pool {
                    let ibase = ((oy * stride + dy) * w + ox * stride + dx) * c;
                    for ch in 0..c {
                        let v = x[ibase + ch];
                        if v > out[obase + ch] {
                            out[obase + ch] = v;
                            arg[obase + ch] = ibase + ch;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![ho, wo, c], out)?, arg))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gi = Tensor::zeros(input_shape);
    let d = gi.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    gi
}

pub fn globalavgpool_forward(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image_dims(input, "global average pool input")?;
    if h == 0 || w == 0 {
        return Err(SorError::dim("global average pool needs a non-empty spatial extent"));
    }
    let mut out = vec![0.0; c];
    if c > 0 {
        for px in input.data().chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
    }
    let n = (h * w) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(Tensor::from_vec(out))
}

pub fn globalavgpool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[0], input_shape[1]);
    let scale = 1.0 / (h * w) as f64;
    let row: Vec<f64> = grad_out.data().iter().map(|g| g * scale).collect();
    let mut data = Vec::with_capacity(h * w * row.len());
    for _ in 0..h * w {
        data.extend_from_slice(&row);
    }
    Tensor::new(input_shape.to_vec(), data).expect("shape matches by construction")
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let (d, u) = match *weights.shape() {
        [d, u] => (d, u),
        ref s => return Err(SorError::dim(format!("dense weights must be d x u, got {s:?}"))),
    };
    if input.len() != d {
        return Err(SorError::dim(format!(
            "dense layer expects {d} inputs, got {}",
            input.len()
        )));
    }
    Ok((d, u))
}

/// `activation(weights^T x + bias)`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    let (_d, u) = dense_dims(input, weights)?;
    if bias.len() != u {
        return Err(SorError::dim(format!("dense bias has {} entries for {u} units", bias.len())));
    }
    let mut out = bias.data().to_vec();
    for (&a, row) in input.data().iter().zip(weights.data().chunks_exact(u.max(1))) {
        for (o, &wt) in out.iter_mut().zip(row) {
            *o += a * wt;
        }
    }
    out.iter_mut().for_each(|o| *o = activation.apply(*o));
    Ok(Tensor::from_vec(out))
}

/// Backward through a dense layer given its cached output; returns the
/// gradient with respect to the pre-activation and, if asked, the input.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    output: &Tensor,
    activation: Activation,
    grad_out: &Tensor,
    grad_weights: Option<(&mut Tensor, &mut Tensor)>,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (d, u) = dense_dims(input, weights)?;
    if grad_out.len() != u {
        return Err(SorError::dim("dense upstream gradient length mismatch"));
    }
    let delta: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(g, &y)| g * activation.derivative_from_output(y))
        .collect();
    if let Some((gw, gb)) = grad_weights {
        for (b, &dl) in gb.data_mut().iter_mut().zip(&delta) {
            *b += dl;
        }
        for (&a, row) in input.data().iter().zip(gw.data_mut().chunks_exact_mut(u.max(1))) {
            for (r, &dl) in row.iter_mut().zip(&delta) {
                *r += a * dl;
            }
        }
    }
    if !want_input_grad {
        return Ok(None);
    }
    let mut gi = vec![0.0; d];
    if u > 0 {
        for (g, row) in gi.iter_mut().zip(weights.data().chunks_exact(u)) {
            *g = row.iter().zip(&delta).map(|(w, dl)| w * dl).sum();
        }
    }
    Ok(Some(Tensor::from_vec(gi)))
}
