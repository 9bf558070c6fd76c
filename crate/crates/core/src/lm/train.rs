use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TransformerModel;
use crate::error::{Error, Result};
use crate::nncore::{clip_grad_norm, OptimizerState, Parameters, DEFAULT_LR};

/// One training sequence; predictions of `tokens[t]` for `t >= loss_from`
/// are scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub tokens: Vec<u32>,
    pub loss_from: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

fn default_clip() -> f64 {
    1.0
}

impl TrainHyper {
    pub fn new(seed: u64, steps: usize, batch_size: usize) -> Self {
        Self { seed, steps, batch_size, lr: DEFAULT_LR, clip: default_clip() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Adam over mini-batches sampled with replacement from `corpus`.
/// Deterministic given `hyper.seed`; per-example gradients are computed in
/// parallel and summed in a fixed order.
pub fn train_lm(model: &mut TransformerModel, corpus: &[TrainExample], hyper: &TrainHyper) -> Result<TrainReport> {
    if hyper.steps > 0 && (corpus.is_empty() || hyper.batch_size == 0) {
        return Err(Error::InvalidArgument("train_lm needs a non-empty corpus and batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = OptimizerState::adam(&model.weights, hyper.lr);
    let mut losses = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let batch: Vec<usize> = (0..hyper.batch_size).map(|_| rng.gen_range(0..corpus.len())).collect();
        let results: Vec<_> = batch
            .par_iter()
            .map(|&i| model.sequence_loss(&corpus[i].tokens, corpus[i].loss_from))
            .collect::<Result<Vec<_>>>()?;
        let mut grads = model.weights.zeros_like();
        let mut loss = 0.0;
        for (l, g, _) in &results {
            loss += l;
            grads.accumulate(g);
        }
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        grads.scale(inv);
        if hyper.clip > 0.0 {
            clip_grad_norm(&mut grads, hyper.clip);
        }
        opt.step(&mut model.weights, &grads)?;
        if !model.weights.all_finite() {
            return Err(Error::Divergence { step, loss: f64::NAN });
        }
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}
