//! Value-level kernels shared by eager evaluation and the gradient tape.
//!
//! Every differentiable graph operation computes its forward value through
//! one of these functions, so eager and taped evaluation are bit-identical.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{MacCounter, MacKind, Tensor};

pub const GELU_COEF: f64 = 0.044_715;
/// sqrt(2 / pi)
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Uncounted `m×k · k×p` product. Each output element accumulates its
/// terms in ascending `k` order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    let mut out = vec![0.0; m * p];
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(p)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(p)) {
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn matmul_counted(a: &Tensor, b: &Tensor, kind: MacKind, macs: &mut MacCounter) -> Result<Tensor> {
    let (m, k) = a.matrix_dims()?;
    let (k2, p) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape("matmul", a.dims(), b.dims()));
    }
    macs.record(kind, m, k, p);
    Tensor::new(vec![m, p], matmul_raw(a.data(), b.data(), m, k, p))
}

/// Matrix product, adding `m·k·p` to `macs`.
pub fn matmul(a: &Tensor, b: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
    matmul_counted(a, b, MacKind::Other, macs)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.matrix_dims()?;
    Tensor::new(vec![c, r], transpose_raw(a.data(), r, c))
}

/// Stabilized softmax of one row. Positions where `keep` is false get
/// exactly zero. Returns false when nothing is kept.
pub(crate) fn softmax_row(input: &[f64], out: &mut [f64], keep: impl Fn(usize) -> bool) -> bool {
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in input.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for (j, (&v, o)) in input.iter().zip(out.iter_mut()).enumerate() {
        if keep(j) {
            let e = libm::exp(v - max);
            *o = e;
            sum += e;
        } else {
            *o = 0.0;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if keep(j) {
            *o /= sum;
        }
    }
    true
}

/// Row softmax where every row shares one key mask (`true` = attendable).
pub(crate) fn softmax_keys(x: &Tensor, key_mask: Option<&[bool]>) -> Result<Tensor> {
    let (m, k) = x.matrix_dims()?;
    if let Some(mask) = key_mask {
        if mask.len() != k {
            return Err(Error::shape("softmax mask", &[m, k], &[mask.len()]));
        }
    }
    let mut out = vec![0.0; m * k];
    for (i, (row, orow)) in x.data().chunks_exact(k).zip(out.chunks_exact_mut(k)).enumerate() {
        let ok = match key_mask {
            Some(mask) => softmax_row(row, orow, |j| mask[j]),
            None => softmax_row(row, orow, |_| true),
        };
        if !ok {
            return Err(Error::DegenerateMask { row: i });
        }
    }
    Tensor::new(vec![m, k], out)
}

/// Row-wise softmax. `mask`, when given, has the same dims as `x`; a zero
/// entry excludes the position and yields probability exactly 0.
pub fn softmax_rows(x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let (m, k) = x.matrix_dims()?;
    let Some(mask) = mask else {
        return softmax_keys(x, None);
    };
    if mask.dims() != x.dims() {
        return Err(Error::shape("softmax mask", x.dims(), mask.dims()));
    }
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let keep = mask.row(i);
        if !softmax_row(x.row(i), &mut out[i * k..(i + 1) * k], |j| keep[j] != 0.0) {
            return Err(Error::DegenerateMask { row: i });
        }
    }
    Tensor::new(vec![m, k], out)
}

/// Normalized rows and reciprocal standard deviations kept for backward.
pub(crate) struct NormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_saved(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, NormSaved)> {
    let (m, n) = x.matrix_dims()?;
    if gain.len() != n || bias.len() != n {
        return Err(Error::shape("layer_norm", x.dims(), gain.dims()));
    }
    let mut y = vec![0.0; m * n];
    let mut xhat = vec![0.0; m * n];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let denom = var + eps;
        // A constant row with eps = 0 normalizes to zeros, so the output is the bias.
        let inv = if denom > 0.0 { 1.0 / libm::sqrt(denom) } else { 0.0 };
        inv_std[i] = inv;
        for j in 0..n {
            let h = (row[j] - mean) * inv;
            xhat[i * n + j] = h;
            y[i * n + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(vec![m, n], y)?, NormSaved { xhat, inv_std }))
}

/// Per-row layer normalization with `eps` inside the square root, then
/// an affine transform by `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_saved(x, gain, bias, eps).map(|(y, _)| y)
}

pub fn gelu_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + libm::tanh(u))
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = libm::tanh(u);
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Elementwise tanh-approximation GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.dims().to_vec(), data).expect("same dims")
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
