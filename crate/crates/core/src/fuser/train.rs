use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bridge::{fuse, project_backward, project_cache_recorded, FuseMode, Fuser};
use crate::error::{Error, Result};
use crate::lm::{prefill, KvCache, SegmentGrad, TokenSeq, TrainHyper, TrainReport, TransformerModel};
use crate::nncore::{clip_grad_norm, cross_entropy, OptimizerState, Parameters};

/// Tokens the sender prefills for a query under a fuse mode. Concat
/// senders read the whole query; Mix senders stop one short so their cache
/// lines up with the receiver's prefix.
pub fn sender_span(mode: FuseMode, query: &[u32]) -> &[u32] {
    match mode {
        FuseMode::Concat => query,
        FuseMode::Mix => &query[..query.len().saturating_sub(1)],
    }
}

/// A supervised fuser example: the sender reads `sender_query`, the
/// receiver reads `query` and must continue with `answer`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuserExample {
    pub sender_query: Vec<u32>,
    pub query: Vec<u32>,
    pub answer: Vec<u32>,
}

/// Frozen caches for one example.
#[derive(Debug, Clone)]
pub struct Prepared {
    sender_cache: KvCache,
    own: KvCache,
    /// Receiver input: last query token then all but the last answer token.
    input: Vec<u32>,
    targets: Vec<u32>,
}

pub fn prepare(sender: &TransformerModel, receiver: &TransformerModel, mode: FuseMode, ex: &FuserExample) -> Result<Prepared> {
    if ex.query.len() < 2 || ex.answer.is_empty() {
        return Err(Error::InvalidArgument("fuser example needs a query of 2+ tokens and an answer".into()));
    }
    let span = sender_span(mode, &ex.sender_query);
    let (sender_cache, _) = prefill(sender, &TokenSeq::new(span.to_vec()))?;
    let l = ex.query.len();
    let (own, _) = prefill(receiver, &TokenSeq::new(ex.query[..l - 1].to_vec()))?;
    let mut input = vec![ex.query[l - 1]];
    input.extend_from_slice(&ex.answer[..ex.answer.len() - 1]);
    Ok(Prepared { sender_cache, own, input, targets: ex.answer.clone() })
}

/// Mean answer cross-entropy of the receiver over the fused cache, and its
/// gradient with respect to the fuser parameters.
pub fn fuser_loss(f: &Fuser, receiver: &TransformerModel, p: &Prepared) -> Result<(f64, Fuser)> {
    let (proj, ptape) = project_cache_recorded(f, &p.sender_cache)?;
    let view = fuse(f, &proj, &p.own)?;
    let segments: Vec<&KvCache> = view.segments().collect();
    let start = view.own.end_position();
    let out = receiver.forward(&segments, &p.input, start, true)?;
    let n = p.targets.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(out.logits.len());
    for (row, &t) in out.logits.iter().zip(&p.targets) {
        let mut g = vec![0.0; row.len()];
        loss += cross_entropy(row, t as usize, &mut g);
        g.iter_mut().for_each(|x| *x /= n);
        dlogits.push(g);
    }
    let mut scratch = receiver.weights.zeros_like();
    let seg_grads = receiver.backward(out.tape.as_ref().expect("recorded"), &dlogits, &mut scratch);
    let mut grads = f.zeros_like();
    match f.mode {
        FuseMode::Concat => project_backward(f, &ptape, &seg_grads[0], &mut grads),
        FuseMode::Mix => {
            let d_fused = &seg_grads[0];
            let mut d_proj = SegmentGrad { dk: Vec::new(), dv: Vec::new() };
            for (l, layer) in f.layers.iter().enumerate() {
                let g = layer.gate_value();
                let (pk, ok) = (proj.layers[l].k.data(), p.own.layers[l].k.data());
                let (pv, ov) = (proj.layers[l].v.data(), p.own.layers[l].v.data());
                let mut dg = 0.0;
                for i in 0..pk.len() {
                    dg += d_fused.dk[l][i] * (pk[i] - ok[i]) + d_fused.dv[l][i] * (pv[i] - ov[i]);
                }
                grads.layers[l].gate.data_mut()[0] = dg;
                d_proj.dk.push(d_fused.dk[l].iter().map(|x| g * x).collect());
                d_proj.dv.push(d_fused.dv[l].iter().map(|x| g * x).collect());
            }
            project_backward(f, &ptape, &d_proj, &mut grads);
        }
    }
    Ok((loss / n, grads))
}

/// Trains `f` with sender and receiver frozen. Deterministic given
/// `hyper.seed`.
pub fn train_fuser(
    f: &mut Fuser,
    sender: &TransformerModel,
    receiver: &TransformerModel,
    corpus: &[FuserExample],
    hyper: &TrainHyper,
) -> Result<TrainReport> {
    if sender.config != f.sender || receiver.config != f.receiver {
        return Err(Error::InvalidArgument(format!(
            "fuser {} -> {} does not match models {} and {}",
            f.sender_id(),
            f.receiver_id(),
            sender.id(),
            receiver.id()
        )));
    }
    f.validate()?;
    if hyper.steps > 0 && (corpus.is_empty() || hyper.batch_size == 0) {
        return Err(Error::InvalidArgument("train_fuser needs a non-empty corpus and batch".into()));
    }
    let prepared = corpus.par_iter().map(|ex| prepare(sender, receiver, f.mode, ex)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = OptimizerState::adam(f, hyper.lr);
    let mut losses = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let batch: Vec<usize> = (0..hyper.batch_size).map(|_| rng.gen_range(0..prepared.len())).collect();
        let frozen: &Fuser = f;
        let results = batch
            .par_iter()
            .map(|&i| fuser_loss(frozen, receiver, &prepared[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut grads = f.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
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
        opt.step(f, &grads)?;
        f.clamp_gates();
        if !f.all_finite() {
            return Err(Error::Divergence { step, loss: f64::NAN });
        }
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}
