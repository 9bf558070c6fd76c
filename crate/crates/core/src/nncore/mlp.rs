use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::Activation;
use super::params::Parameters;
use super::tensor::{matvec, matvec_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[n_out, n_in]), bias: Tensor::zeros(&[n_out]) }
    }

    /// Uniform init scaled by `1/sqrt(n_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let scale = (1.0 / n_in as f64).sqrt();
        Self { weight: Tensor::uniform(&[n_out, n_in], scale, rng), bias: Tensor::zeros(&[n_out]) }
    }

    pub fn identity(n: usize) -> Self {
        Self { weight: Tensor::eye(n), bias: Tensor::zeros(&[n]) }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        matvec(self.weight.data(), self.n_in(), x, out);
        for (o, b) in out.iter_mut().zip(self.bias.data()) {
            *o += b;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_out()];
        self.forward(x, &mut out);
        out
    }

    /// Accumulates weight/bias grads into `grad` and `d/dx` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        outer_acc(dy, x, grad.weight.data_mut());
        for (g, d) in grad.bias.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        matvec_t_acc(self.weight.data(), self.n_in(), dy, dx);
    }
}

impl Parameters for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Stack of linear layers with a fixed activation between them (none after
/// the last layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Per-row intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpParams {
    /// `dims = [in, hidden..., out]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        let layers = dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self { layers, activation }
    }

    /// Square identity layers with linear activation.
    pub fn identity(dim: usize, depth: usize) -> Self {
        Self { layers: (0..depth).map(|_| Linear::identity(dim)).collect(), activation: Activation::Identity }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::n_in)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::n_out)
    }

    /// Checks that consecutive layer dims chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("MLP has no layers"));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::shape(format!(
                    "MLP layer {i} outputs {} but layer {} expects {}",
                    w[0].n_out(),
                    i + 1,
                    w[1].n_in()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.n_out() {
                return Err(Error::shape("MLP bias length differs from output dim"));
            }
        }
        Ok(())
    }

    pub fn forward_row(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(std::mem::take(&mut h));
            h = if i < last { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            pre.push(z);
        }
        (h, MlpTape { inputs, pre })
    }

    /// Accumulates parameter grads into `grad`; returns `d/dx`.
    pub fn backward_row(&self, tape: &MlpTape, dy: &[f64], grad: &mut MlpParams) -> Vec<f64> {
        let mut d = dy.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (g, &z) in d.iter_mut().zip(&tape.pre[i]) {
                    *g *= self.activation.derivative(z);
                }
            }
            let mut dx = vec![0.0; self.layers[i].n_in()];
            self.layers[i].backward(&tape.inputs[i], &d, &mut grad.layers[i], &mut dx);
            d = dx;
        }
        d
    }
}

impl Parameters for MlpParams {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.layers.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.layers.visit_mut(f)
    }
}

/// Applies the MLP to every row of `x` (last dim = input dim).
pub fn mlp_forward(p: &MlpParams, x: &Tensor) -> Result<Tensor> {
    p.validate()?;
    if x.last_dim() != p.in_dim() {
        return Err(Error::shape(format!(
            "MLP expects last dim {}, got {:?}",
            p.in_dim(),
            x.shape()
        )));
    }
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * p.out_dim());
    for r in 0..rows {
        data.extend(p.forward_row(x.row(r)).0);
    }
    let mut shape = x.shape().to_vec();
    if shape.is_empty() {
        shape.push(p.out_dim());
    } else {
        *shape.last_mut().unwrap() = p.out_dim();
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_mlp_passes_input_through() {
        let p = MlpParams::identity(4, 3);
        let x = Tensor::new(vec![2, 4], vec![1.0, -2.0, 3.5, 0.0, 0.25, 9.0, -7.0, 1e-3]).unwrap();
        assert_eq!(mlp_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let mut p = MlpParams::zeros(&[3, 5, 5, 2], Activation::Silu);
        p.layers[2].bias = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let x = Tensor::new(vec![3, 3], (0..9).map(f64::from).collect()).unwrap();
        let y = mlp_forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.5, -1.5]);
        }
    }

    /// Independent straight-line forward pass for a 3-layer SiLU MLP.
    fn reference_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let silu = |v: f64| v / (1.0 + (-v).exp());
        let mut h = x.to_vec();
        for (li, layer) in p.layers.iter().enumerate() {
            let (n_out, n_in) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = layer.bias.data()[o];
                for i in 0..n_in {
                    acc += layer.weight.data()[o * n_in + i] * h[i];
                }
                z[o] = if li + 1 < p.layers.len() { silu(acc) } else { acc };
            }
            h = z;
        }
        h
    }

    #[test]
    fn seeded_mlp_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = MlpParams::init(&[4, 8, 8, 3], Activation::Silu, &mut rng);
        let x = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.05]).unwrap();
        let y = mlp_forward(&p, &x).unwrap();
        let r = reference_forward(&p, x.data());
        for (a, b) in y.data().iter().zip(&r) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = MlpParams::identity(4, 3);
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(mlp_forward(&p, &x), Err(Error::Shape(_))));
        let mut bad = MlpParams::identity(4, 3);
        bad.layers[1] = Linear::zeros(5, 4);
        assert!(bad.validate().is_err());
    }
}
