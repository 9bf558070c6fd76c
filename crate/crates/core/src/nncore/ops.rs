//! Elementwise and row-wise kernels with hand-derived gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Max-subtracted softmax. Rejects empty or non-finite input.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input[{i}] = {}", v[i])));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked variant used on hot paths where inputs are known finite.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Given `p = softmax(s)` and `dp`, writes `ds` in place of `dp`.
pub fn softmax_backward_in_place(p: &[f64], dp: &mut [f64]) {
    let inner: f64 = p.iter().zip(dp.iter()).map(|(a, b)| a * b).sum();
    for (d, &pi) in dp.iter_mut().zip(p) {
        *d = pi * (*d - inner);
    }
}

/// Negative log-likelihood of `target` under `softmax(logits)`; returns
/// the loss and writes `d loss / d logits` into `grad`.
pub fn cross_entropy(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    grad.copy_from_slice(logits);
    softmax_in_place(grad);
    let loss = -grad[target].max(f64::MIN_POSITIVE).ln();
    grad[target] -= 1.0;
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Saved statistics of one layer-norm application.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> LnCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    for i in 0..x.len() {
        out[i] = xhat[i] * gain[i] + bias[i];
    }
    LnCache { xhat, inv_std }
}

/// Accumulates parameter grads and adds `d loss / d x` into `dx`.
pub fn layer_norm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let n = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for i in 0..dy.len() {
        dgain[i] += dy[i] * cache.xhat[i];
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
    }
    let mean_d: f64 = dxhat.iter().sum::<f64>() / n;
    let mean_dx: f64 = dxhat.iter().zip(&cache.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for i in 0..dy.len() {
        dx[i] += cache.inv_std * (dxhat[i] - mean_d - cache.xhat[i] * mean_dx);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
