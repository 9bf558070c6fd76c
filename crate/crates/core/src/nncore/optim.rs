use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub const DEFAULT_LR: f64 = 1e-3;

/// Moment accumulators mirroring the parameter tensors, plus step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<P: Parameters>(params: &P, kind: OptimizerKind, lr: f64) -> Self {
        let mut first = Vec::new();
        params.visit(&mut |t| first.push(Tensor::zeros(t.shape())));
        let second = match kind {
            OptimizerKind::Adam { .. } => first.clone(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self { kind, lr, step: 0, first, second }
    }

    pub fn adam<P: Parameters>(params: &P, lr: f64) -> Self {
        Self::new(params, OptimizerKind::default(), lr)
    }

    pub fn sgd<P: Parameters>(params: &P, lr: f64) -> Self {
        Self::new(params, OptimizerKind::Sgd, lr)
    }

    /// Applies one update. Shapes are checked before anything is mutated.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let p_shapes = params.shapes();
        let g_shapes = grads.shapes();
        let acc_shapes: Vec<_> = self.first.iter().map(|t| t.shape().to_vec()).collect();
        if p_shapes != g_shapes || p_shapes != acc_shapes {
            return Err(Error::shape("optimizer: parameter, gradient and state shapes differ"));
        }
        let mut grad_tensors = Vec::with_capacity(g_shapes.len());
        grads.visit(&mut |t| grad_tensors.push(t.data().to_vec()));

        self.step += 1;
        let t = self.step as f64;
        let lr = self.lr;
        let kind = self.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        let mut idx = 0;
        params.visit_mut(&mut |p| {
            let g = &grad_tensors[idx];
            match kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in p.data_mut().iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = first[idx].data_mut();
                    let v = second[idx].data_mut();
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            idx += 1;
        });
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.visit(&mut |t| sq += t.data().iter().map(|x| x * x).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn sgd_single_step() {
        let mut p = scalar(1.0);
        let mut opt = OptimizerState::sgd(&p, 0.1);
        opt.step(&mut p, &scalar(2.0)).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let orig = p.clone();
        let mut opt = OptimizerState::adam(&p, DEFAULT_LR);
        opt.step(&mut p, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(p, orig);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
            let mut opt = OptimizerState::adam(&p, 0.01);
            for i in 0..10 {
                let g = Tensor::new(vec![2], vec![(i as f64).sin(), 0.1 * i as f64]).unwrap();
                opt.step(&mut p, &g).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        assert_eq!(a.data()[1].to_bits(), b.data()[1].to_bits());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = OptimizerState::sgd(&p, 0.1);
        assert!(opt.step(&mut p, &Tensor::zeros(&[3])).is_err());
        assert_eq!(opt.step, 0);
    }
}
