//! Pre-norm decoder-only transformer with rotary positions, grouped-query
//! attention and a hand-written backward pass.
//!
//! The forward pass runs over a list of cached segments plus a run of new
//! tokens. Prefill, single-step decode and teacher-forced training all go
//! through the same [`TransformerModel::forward`], so they agree to rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cache::{CacheView, KvCache};
use super::config::ModelConfig;
use super::tokenizer::TokenSeq;
use crate::error::{Error, Result};
use crate::nncore::ops::{
    cross_entropy, layer_norm, layer_norm_backward, softmax_backward_in_place, softmax_in_place, Activation, LnCache,
};
use crate::nncore::tensor::dot;
use crate::nncore::{argmax, Linear, Parameters, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn new(d: usize) -> Self {
        Self { gain: Tensor::filled(&[d], 1.0), bias: Tensor::zeros(&[d]) }
    }
}

impl Parameters for LayerNormParams {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.gain);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln_attn: LayerNormParams,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln_ff: LayerNormParams,
    pub ff_up: Linear,
    pub ff_down: Linear,
}

impl Parameters for Block {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.ln_attn.visit(f);
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
        self.ln_ff.visit(f);
        self.ff_up.visit(f);
        self.ff_down.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.ln_attn.visit_mut(f);
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
        self.ln_ff.visit_mut(f);
        self.ff_up.visit_mut(f);
        self.ff_down.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub embed: Tensor,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNormParams,
    pub head: Linear,
}

impl Parameters for ModelWeights {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.embed);
        self.blocks.visit(f);
        self.ln_final.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.embed);
        self.blocks.visit_mut(f);
        self.ln_final.visit_mut(f);
        self.head.visit_mut(f);
    }
}

impl ModelWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, kv) = (cfg.d_model, cfg.kv_dim());
        Self {
            embed: Tensor::zeros(&[cfg.vocab_size, d]),
            blocks: (0..cfg.n_layers)
                .map(|_| Block {
                    ln_attn: LayerNormParams::new(d),
                    wq: Linear::zeros(d, d),
                    wk: Linear::zeros(d, kv),
                    wv: Linear::zeros(d, kv),
                    wo: Linear::zeros(d, d),
                    ln_ff: LayerNormParams::new(d),
                    ff_up: Linear::zeros(d, cfg.d_ff),
                    ff_down: Linear::zeros(cfg.d_ff, d),
                })
                .collect(),
            ln_final: LayerNormParams::new(d),
            head: Linear::zeros(d, cfg.vocab_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

/// Result of one forward call.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One logits row per new token.
    pub logits: Vec<Vec<f64>>,
    /// `[layer][token]` unrotated key rows of the new tokens.
    pub new_k: Vec<Vec<Vec<f64>>>,
    pub new_v: Vec<Vec<Vec<f64>>>,
    pub tape: Option<Tape>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    ln_attn: Vec<LnCache>,
    h_attn: Vec<Vec<f64>>,
    q_rot: Vec<Vec<f64>>,
    /// `[token][head]` attention distribution over the visible context.
    probs: Vec<Vec<Vec<f64>>>,
    o: Vec<Vec<f64>>,
    ln_ff: Vec<LnCache>,
    h_ff: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    ctx_k_rot: Vec<Vec<f64>>,
    ctx_v: Vec<Vec<f64>>,
}

/// Intermediates needed by [`TransformerModel::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    tokens: Vec<u32>,
    start_pos: usize,
    ctx_pos: Vec<usize>,
    segment_lens: Vec<usize>,
    layers: Vec<LayerTape>,
    ln_final: Vec<LnCache>,
    h_final: Vec<Vec<f64>>,
}

/// Gradient with respect to one input cache segment, per layer, as
/// flattened `[seq_len * kv_dim]` buffers for unrotated keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrad {
    pub dk: Vec<Vec<f64>>,
    pub dv: Vec<Vec<f64>>,
}

fn rope(x: &mut [f64], pos: usize, head_dim: usize, base: f64, inverse: bool) {
    let half = head_dim / 2;
    for head in x.chunks_exact_mut(head_dim) {
        for i in 0..half {
            let theta = pos as f64 * base.powf(-2.0 * i as f64 / head_dim as f64);
            let (s, c) = theta.sin_cos();
            let s = if inverse { -s } else { s };
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

fn silu_vec(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&x| Activation::Silu.apply(x)).collect()
}

impl TransformerModel {
    /// Random init; deterministic given the rng state.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, kv) = (config.d_model, config.kv_dim());
        let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let blocks = (0..config.n_layers)
            .map(|_| {
                let mut wo = Linear::init(d, d, rng);
                let mut ff_down = Linear::init(config.d_ff, d, rng);
                wo.weight.data_mut().iter_mut().for_each(|w| *w *= resid_scale);
                ff_down.weight.data_mut().iter_mut().for_each(|w| *w *= resid_scale);
                Block {
                    ln_attn: LayerNormParams::new(d),
                    wq: Linear::init(d, d, rng),
                    wk: Linear::init(d, kv, rng),
                    wv: Linear::init(d, kv, rng),
                    wo,
                    ln_ff: LayerNormParams::new(d),
                    ff_up: Linear::init(d, config.d_ff, rng),
                    ff_down,
                }
            })
            .collect();
        let weights = ModelWeights {
            embed: Tensor::uniform(&[config.vocab_size, d], 1.0, rng),
            blocks,
            ln_final: LayerNormParams::new(d),
            head: Linear::init(d, config.vocab_size, rng),
        };
        Ok(Self { config, weights })
    }

    pub fn id(&self) -> &str {
        &self.config.model_id
    }

    /// Checks every weight shape against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let want = ModelWeights::zeros(&self.config).shapes();
        if want != self.weights.shapes() {
            return Err(Error::shape(format!("weights of {} do not match its config", self.id())));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token {t} outside vocab of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Runs `tokens` at absolute positions `start_pos..` attending over
    /// every entry of `segments` and causally over the new tokens.
    pub fn forward(&self, segments: &[&KvCache], tokens: &[u32], start_pos: usize, record: bool) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        for s in segments {
            s.check_geometry(&self.config)?;
        }
        let cfg = &self.config;
        let (d, hd, nh, g) = (cfg.d_model, cfg.head_dim, cfg.n_heads, cfg.group_size());
        let scale = 1.0 / (hd as f64).sqrt();
        let n_prev: usize = segments.iter().map(|s| s.seq_len).sum();
        let t_len = tokens.len();

        let mut ctx_pos: Vec<usize> = segments.iter().flat_map(|s| (0..s.seq_len).map(move |i| s.position(i))).collect();
        ctx_pos.extend((0..t_len).map(|i| start_pos + i));

        let mut x: Vec<Vec<f64>> =
            tokens.iter().map(|&t| self.weights.embed.row(t as usize).to_vec()).collect();
        let mut layer_tapes = Vec::new();
        let mut new_k = Vec::with_capacity(cfg.n_layers);
        let mut new_v = Vec::with_capacity(cfg.n_layers);

        for (l, block) in self.weights.blocks.iter().enumerate() {
            let mut ctx_k_rot = Vec::with_capacity(n_prev + t_len);
            let mut ctx_v = Vec::with_capacity(n_prev + t_len);
            for s in segments {
                let layer = &s.layers[l];
                for i in 0..s.seq_len {
                    let mut k = layer.k_row(i).to_vec();
                    rope(&mut k, s.position(i), hd, cfg.rope_base, false);
                    ctx_k_rot.push(k);
                    ctx_v.push(layer.v_row(i).to_vec());
                }
            }

            let mut ln_attn = Vec::with_capacity(t_len);
            let mut h_attn = Vec::with_capacity(t_len);
            let mut q_rot = Vec::with_capacity(t_len);
            let mut lk = Vec::with_capacity(t_len);
            let mut lv = Vec::with_capacity(t_len);
            for (i, xi) in x.iter().enumerate() {
                let mut h = vec![0.0; d];
                ln_attn.push(layer_norm(xi, block.ln_attn.gain.data(), block.ln_attn.bias.data(), &mut h));
                let mut q = block.wq.apply(&h);
                let k = block.wk.apply(&h);
                let v = block.wv.apply(&h);
                rope(&mut q, start_pos + i, hd, cfg.rope_base, false);
                let mut kr = k.clone();
                rope(&mut kr, start_pos + i, hd, cfg.rope_base, false);
                ctx_k_rot.push(kr);
                ctx_v.push(v.clone());
                lk.push(k);
                lv.push(v);
                q_rot.push(q);
                h_attn.push(h);
            }

            let mut probs = Vec::with_capacity(t_len);
            let mut os = Vec::with_capacity(t_len);
            let mut ln_ff = Vec::with_capacity(t_len);
            let mut h_ff = Vec::with_capacity(t_len);
            let mut us = Vec::with_capacity(t_len);
            let mut zs = Vec::with_capacity(t_len);
            for i in 0..t_len {
                let n_vis = n_prev + i + 1;
                let mut o = vec![0.0; d];
                let mut head_probs = Vec::with_capacity(nh);
                for h in 0..nh {
                    let kvh = h / g;
                    let q = &q_rot[i][h * hd..(h + 1) * hd];
                    let mut p: Vec<f64> =
                        (0..n_vis).map(|j| dot(q, &ctx_k_rot[j][kvh * hd..(kvh + 1) * hd]) * scale).collect();
                    softmax_in_place(&mut p);
                    let oh = &mut o[h * hd..(h + 1) * hd];
                    for (j, &pj) in p.iter().enumerate() {
                        for (a, b) in oh.iter_mut().zip(&ctx_v[j][kvh * hd..(kvh + 1) * hd]) {
                            *a += pj * b;
                        }
                    }
                    head_probs.push(p);
                }
                let attn = block.wo.apply(&o);
                for (a, b) in x[i].iter_mut().zip(&attn) {
                    *a += b;
                }
                let mut h2 = vec![0.0; d];
                let lc = layer_norm(&x[i], block.ln_ff.gain.data(), block.ln_ff.bias.data(), &mut h2);
                let u = block.ff_up.apply(&h2);
                let z = silu_vec(&u);
                let m = block.ff_down.apply(&z);
                for (a, b) in x[i].iter_mut().zip(&m) {
                    *a += b;
                }
                if record {
                    probs.push(head_probs);
                    os.push(o);
                    ln_ff.push(lc);
                    h_ff.push(h2);
                    us.push(u);
                    zs.push(z);
                }
            }
            if record {
                layer_tapes.push(LayerTape {
                    ln_attn,
                    h_attn,
                    q_rot,
                    probs,
                    o: os,
                    ln_ff,
                    h_ff,
                    u: us,
                    z: zs,
                    ctx_k_rot,
                    ctx_v,
                });
            }
            new_k.push(lk);
            new_v.push(lv);
        }

        let mut logits = Vec::with_capacity(t_len);
        let mut ln_final = Vec::new();
        let mut h_final = Vec::new();
        for xi in &x {
            let mut h = vec![0.0; d];
            let lc = layer_norm(xi, self.weights.ln_final.gain.data(), self.weights.ln_final.bias.data(), &mut h);
            logits.push(self.weights.head.apply(&h));
            if record {
                ln_final.push(lc);
                h_final.push(h);
            }
        }
        let tape = record.then(|| Tape {
            tokens: tokens.to_vec(),
            start_pos,
            ctx_pos,
            segment_lens: segments.iter().map(|s| s.seq_len).collect(),
            layers: layer_tapes,
            ln_final,
            h_final,
        });
        Ok(ForwardOutput { logits, new_k, new_v, tape })
    }

    /// Backpropagates `dlogits` (one row per new token). Accumulates weight
    /// gradients into `grads` and returns gradients for each input segment.
    pub fn backward(&self, tape: &Tape, dlogits: &[Vec<f64>], grads: &mut ModelWeights) -> Vec<SegmentGrad> {
        let cfg = &self.config;
        let (d, hd, nh, g, kvd) = (cfg.d_model, cfg.head_dim, cfg.n_heads, cfg.group_size(), cfg.kv_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let t_len = tape.tokens.len();
        let n_prev: usize = tape.segment_lens.iter().sum();
        let n_ctx = n_prev + t_len;

        let mut seg_grads: Vec<SegmentGrad> = tape
            .segment_lens
            .iter()
            .map(|&n| SegmentGrad {
                dk: vec![vec![0.0; n * kvd]; cfg.n_layers],
                dv: vec![vec![0.0; n * kvd]; cfg.n_layers],
            })
            .collect();

        let mut dx: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for i in 0..t_len {
            let mut dh = vec![0.0; d];
            self.weights.head.backward(&tape.h_final[i], &dlogits[i], &mut grads.head, &mut dh);
            let mut dxi = vec![0.0; d];
            layer_norm_backward(
                &tape.ln_final[i],
                self.weights.ln_final.gain.data(),
                &dh,
                grads.ln_final.gain.data_mut(),
                grads.ln_final.bias.data_mut(),
                &mut dxi,
            );
            dx.push(dxi);
        }

        for l in (0..cfg.n_layers).rev() {
            let block = &self.weights.blocks[l];
            let gb = &mut grads.blocks[l];
            let lt = &tape.layers[l];

            // Feed-forward sublayer.
            let mut dx_mid = dx.clone();
            for i in 0..t_len {
                let mut dz = vec![0.0; cfg.d_ff];
                block.ff_down.backward(&lt.z[i], &dx[i], &mut gb.ff_down, &mut dz);
                for (dzi, &ui) in dz.iter_mut().zip(&lt.u[i]) {
                    *dzi *= Activation::Silu.derivative(ui);
                }
                let mut dh2 = vec![0.0; d];
                block.ff_up.backward(&lt.h_ff[i], &dz, &mut gb.ff_up, &mut dh2);
                layer_norm_backward(
                    &lt.ln_ff[i],
                    block.ln_ff.gain.data(),
                    &dh2,
                    gb.ln_ff.gain.data_mut(),
                    gb.ln_ff.bias.data_mut(),
                    &mut dx_mid[i],
                );
            }

            // Attention sublayer.
            let mut dctx_k = vec![vec![0.0; kvd]; n_ctx];
            let mut dctx_v = vec![vec![0.0; kvd]; n_ctx];
            let mut dq_rot = vec![vec![0.0; d]; t_len];
            for i in 0..t_len {
                let mut d_o = vec![0.0; d];
                block.wo.backward(&lt.o[i], &dx_mid[i], &mut gb.wo, &mut d_o);
                for h in 0..nh {
                    let kvh = h / g;
                    let (ks, ke) = (kvh * hd, (kvh + 1) * hd);
                    let p = &lt.probs[i][h];
                    let doh = &d_o[h * hd..(h + 1) * hd];
                    let mut dp: Vec<f64> = (0..p.len()).map(|j| dot(doh, &lt.ctx_v[j][ks..ke])).collect();
                    for (j, &pj) in p.iter().enumerate() {
                        for (a, b) in dctx_v[j][ks..ke].iter_mut().zip(doh) {
                            *a += pj * b;
                        }
                    }
                    softmax_backward_in_place(p, &mut dp);
                    let q = &lt.q_rot[i][h * hd..(h + 1) * hd];
                    for (j, &ds) in dp.iter().enumerate() {
                        if ds == 0.0 {
                            continue;
                        }
                        let c = ds * scale;
                        for (a, b) in dq_rot[i][h * hd..(h + 1) * hd].iter_mut().zip(&lt.ctx_k_rot[j][ks..ke]) {
                            *a += c * b;
                        }
                        for (a, b) in dctx_k[j][ks..ke].iter_mut().zip(q) {
                            *a += c * b;
                        }
                    }
                }
            }

            let mut dx_in = dx_mid;
            for i in 0..t_len {
                let pos = tape.start_pos + i;
                let j = n_prev + i;
                let mut dk = std::mem::take(&mut dctx_k[j]);
                rope(&mut dk, pos, hd, cfg.rope_base, true);
                let mut dq = std::mem::take(&mut dq_rot[i]);
                rope(&mut dq, pos, hd, cfg.rope_base, true);
                let mut dh = vec![0.0; d];
                block.wq.backward(&lt.h_attn[i], &dq, &mut gb.wq, &mut dh);
                block.wk.backward(&lt.h_attn[i], &dk, &mut gb.wk, &mut dh);
                block.wv.backward(&lt.h_attn[i], &dctx_v[j], &mut gb.wv, &mut dh);
                layer_norm_backward(
                    &lt.ln_attn[i],
                    block.ln_attn.gain.data(),
                    &dh,
                    gb.ln_attn.gain.data_mut(),
                    gb.ln_attn.bias.data_mut(),
                    &mut dx_in[i],
                );
            }

            let mut j = 0;
            for (s, &n) in tape.segment_lens.iter().enumerate() {
                for e in 0..n {
                    let mut dk = std::mem::take(&mut dctx_k[j]);
                    rope(&mut dk, tape.ctx_pos[j], hd, cfg.rope_base, true);
                    seg_grads[s].dk[l][e * kvd..(e + 1) * kvd].copy_from_slice(&dk);
                    seg_grads[s].dv[l][e * kvd..(e + 1) * kvd].copy_from_slice(&dctx_v[j]);
                    j += 1;
                }
            }
            dx = dx_in;
        }

        for (i, &t) in tape.tokens.iter().enumerate() {
            for (a, b) in grads.embed.row_mut(t as usize).iter_mut().zip(&dx[i]) {
                *a += b;
            }
        }
        seg_grads
    }

    /// Teacher-forced next-token loss over `tokens`, counting predictions
    /// of `tokens[t]` for `t >= loss_from`. Returns the mean loss, the
    /// weight gradient and the number of scored positions.
    pub fn sequence_loss(&self, tokens: &[u32], loss_from: usize) -> Result<(f64, ModelWeights, usize)> {
        if tokens.len() < 2 {
            return Err(Error::InvalidArgument("training sequence needs at least 2 tokens".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} exceeds max_seq {}",
                tokens.len(),
                self.config.max_seq
            )));
        }
        let inputs = &tokens[..tokens.len() - 1];
        let own = KvCache::empty(&self.config);
        let out = self.forward(&[&own], inputs, 0, true)?;
        let mut dlogits = Vec::with_capacity(inputs.len());
        let mut total = 0.0;
        let mut count = 0;
        for (t, row) in out.logits.iter().enumerate() {
            let mut g = vec![0.0; row.len()];
            if t + 1 >= loss_from.max(1) {
                total += cross_entropy(row, tokens[t + 1] as usize, &mut g);
                count += 1;
            }
            dlogits.push(g);
        }
        let mut grads = self.weights.zeros_like();
        if count == 0 {
            return Ok((0.0, grads, 0));
        }
        let inv = 1.0 / count as f64;
        for row in dlogits.iter_mut() {
            row.iter_mut().for_each(|x| *x *= inv);
        }
        self.backward(out.tape.as_ref().expect("recorded"), &dlogits, &mut grads);
        Ok((total * inv, grads, count))
    }
}

/// Runs the model over `ts` from an empty cache. Returns the populated cache
/// (positions `0..len`) and the logits of the last position.
pub fn prefill(m: &TransformerModel, ts: &TokenSeq) -> Result<(KvCache, Vec<f64>)> {
    if ts.is_empty() {
        return Err(Error::InvalidArgument("prefill of an empty token sequence".into()));
    }
    if ts.len() > m.config.max_seq {
        return Err(Error::InvalidArgument(format!(
            "prefill of {} tokens exceeds max_seq {}",
            ts.len(),
            m.config.max_seq
        )));
    }
    let mut cache = KvCache::empty(&m.config);
    let out = m.forward(&[&cache], ts.tokens(), 0, false)?;
    append_outputs(&mut cache, &out)?;
    let logits = out.logits.into_iter().last().expect("non-empty");
    Ok((cache, logits))
}

/// One decode step of token `t` over `view`. The new position is appended
/// to `view.own`.
pub fn decode_step(m: &TransformerModel, view: &CacheView, t: u32) -> Result<(Vec<f64>, CacheView)> {
    let mut next = view.clone();
    let logits = decode_in_place(m, &mut next, t)?;
    Ok((logits, next))
}

/// In-place form of [`decode_step`].
pub fn decode_in_place(m: &TransformerModel, view: &mut CacheView, t: u32) -> Result<Vec<f64>> {
    view.check_geometry(&m.config)?;
    if view.seq_len() + 1 > m.config.max_seq {
        return Err(Error::InvalidArgument(format!(
            "no room to decode: {} cached positions, max_seq {}",
            view.seq_len(),
            m.config.max_seq
        )));
    }
    let start = view.own.end_position();
    let segments: Vec<&KvCache> = view.segments().collect();
    let out = m.forward(&segments, &[t], start, false)?;
    append_outputs(&mut view.own, &out)?;
    Ok(out.logits.into_iter().next().expect("one token"))
}

fn append_outputs(cache: &mut KvCache, out: &ForwardOutput) -> Result<()> {
    let n_tok = out.logits.len();
    for i in 0..n_tok {
        let ks: Vec<Vec<f64>> = out.new_k.iter().map(|layer| layer[i].clone()).collect();
        let vs: Vec<Vec<f64>> = out.new_v.iter().map(|layer| layer[i].clone()).collect();
        cache.push(&ks, &vs)?;
    }
    Ok(())
}

/// Argmax with ties broken towards the lowest index.
pub fn greedy_next(logits: &[f64]) -> Result<u32> {
    argmax(logits)
        .map(|i| i as u32)
        .ok_or_else(|| Error::InvalidArgument("greedy_next of empty logits".into()))
}
