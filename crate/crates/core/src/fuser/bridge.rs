//! The directed cache bridge between two models: per receiver layer, a
//! three-layer MLP maps each position's flattened sender K (and V) into
//! the receiver's kv width, and a gate in `[0, 1]` controls mixing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alignment::{align_layers, AlignmentMap};
use crate::error::{Error, Result};
use crate::lm::{CacheView, KvCache, ModelConfig, SegmentGrad};
use crate::nncore::{Activation, MlpParams, MlpTape, Parameters, Tensor};

/// Depth of every projection MLP.
pub const PROJ_DEPTH: usize = 3;

/// Gate value for freshly initialized fusers.
pub const INIT_GATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// Projected cache becomes a prefix ahead of the receiver's own cache.
    Concat,
    /// Projected cache is blended position-wise into the receiver's cache.
    #[default]
    Mix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuserLayer {
    pub k_proj: MlpParams,
    pub v_proj: MlpParams,
    /// Shape `[1]`; the stored value is kept inside `[0, 1]`.
    pub gate: Tensor,
}

impl FuserLayer {
    pub fn gate_value(&self) -> f64 {
        self.gate.data()[0].clamp(0.0, 1.0)
    }
}

impl Parameters for FuserLayer {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.k_proj.visit(f);
        self.v_proj.visit(f);
        f(&self.gate);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.k_proj.visit_mut(f);
        self.v_proj.visit_mut(f);
        f(&mut self.gate);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fuser {
    pub sender: ModelConfig,
    pub receiver: ModelConfig,
    pub alignment: AlignmentMap,
    pub mode: FuseMode,
    pub layers: Vec<FuserLayer>,
}

impl Parameters for Fuser {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.layers.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.layers.visit_mut(f)
    }
}

/// Hidden width of the projection MLPs: twice the wider end.
pub fn hidden_width(in_dim: usize, out_dim: usize) -> usize {
    2 * in_dim.max(out_dim)
}

impl Fuser {
    pub fn init<R: Rng + ?Sized>(sender: &ModelConfig, receiver: &ModelConfig, mode: FuseMode, rng: &mut R) -> Result<Self> {
        sender.validate()?;
        receiver.validate()?;
        let (din, dout) = (sender.kv_dim(), receiver.kv_dim());
        let h = hidden_width(din, dout);
        let layers = (0..receiver.n_layers)
            .map(|_| FuserLayer {
                k_proj: MlpParams::init(&[din, h, h, dout], Activation::Silu, rng),
                v_proj: MlpParams::init(&[din, h, h, dout], Activation::Silu, rng),
                gate: Tensor::filled(&[1], INIT_GATE),
            })
            .collect();
        Ok(Self { sender: sender.clone(), receiver: receiver.clone(), alignment: align_layers(sender, receiver), mode, layers })
    }

    pub fn sender_id(&self) -> &str {
        &self.sender.model_id
    }

    pub fn receiver_id(&self) -> &str {
        &self.receiver.model_id
    }

    pub fn gates(&self) -> Vec<f64> {
        self.layers.iter().map(FuserLayer::gate_value).collect()
    }

    pub fn set_gates(&mut self, g: f64) {
        for l in &mut self.layers {
            l.gate.data_mut()[0] = g.clamp(0.0, 1.0);
        }
    }

    /// Keeps every gate inside `[0, 1]` after an unconstrained update.
    pub fn clamp_gates(&mut self) {
        for l in &mut self.layers {
            let g = &mut l.gate.data_mut()[0];
            *g = g.clamp(0.0, 1.0);
        }
    }

    /// Checks dims against both configs.
    pub fn validate(&self) -> Result<()> {
        self.alignment.validate(self.sender.n_layers, self.receiver.n_layers)?;
        if self.layers.len() != self.receiver.n_layers {
            return Err(Error::Config(format!(
                "fuser has {} layers, receiver {} has {}",
                self.layers.len(),
                self.receiver_id(),
                self.receiver.n_layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for mlp in [&l.k_proj, &l.v_proj] {
                mlp.validate()?;
                if mlp.layers.len() != PROJ_DEPTH
                    || mlp.in_dim() != self.sender.kv_dim()
                    || mlp.out_dim() != self.receiver.kv_dim()
                {
                    return Err(Error::Config(format!("fuser layer {i}: projection dims do not match configs")));
                }
            }
            if l.gate.len() != 1 || !l.gate.data()[0].is_finite() {
                return Err(Error::Config(format!("fuser layer {i}: gate must be one finite scalar")));
            }
        }
        Ok(())
    }
}

/// Mix-mode fuser with identity projections and gate 0, between two models
/// that share every architecture field except their ids.
pub fn identity_fuser(sender: &ModelConfig, receiver: &ModelConfig) -> Result<Fuser> {
    let mut probe = sender.clone();
    probe.model_id = receiver.model_id.clone();
    if &probe != receiver {
        return Err(Error::Config(format!(
            "identity fuser needs identical configs, {} and {} differ",
            sender.model_id, receiver.model_id
        )));
    }
    let d = receiver.kv_dim();
    let layers = (0..receiver.n_layers)
        .map(|_| FuserLayer {
            k_proj: MlpParams::identity(d, PROJ_DEPTH),
            v_proj: MlpParams::identity(d, PROJ_DEPTH),
            gate: Tensor::zeros(&[1]),
        })
        .collect();
    Ok(Fuser {
        sender: sender.clone(),
        receiver: receiver.clone(),
        alignment: align_layers(sender, receiver),
        mode: FuseMode::Mix,
        layers,
    })
}

/// Saved MLP intermediates for every `(receiver layer, position)`.
#[derive(Debug, Clone)]
pub struct ProjectionTape {
    rows: Vec<Vec<(MlpTape, MlpTape)>>,
}

fn check_source(f: &Fuser, sc: &KvCache) -> Result<()> {
    if sc.owner != f.sender.model_id || sc.projected_from.is_some() {
        return Err(Error::InvalidArgument(format!(
            "fuser {} -> {} cannot project a cache owned by {}",
            f.sender_id(),
            f.receiver_id(),
            sc.owner
        )));
    }
    sc.check_geometry(&f.sender)
}

fn project_impl(f: &Fuser, sc: &KvCache, record: bool) -> Result<(KvCache, Option<ProjectionTape>)> {
    check_source(f, sc)?;
    let mut out = KvCache::empty(&f.receiver);
    out.projected_from = Some(f.sender.model_id.clone());
    out.position_base = sc.position_base;
    let dout = f.receiver.kv_dim();
    let mut tape_rows = Vec::new();
    for (r, layer) in f.layers.iter().enumerate() {
        let src = &sc.layers[f.alignment.sender_layer(r)];
        let mut kd = Vec::with_capacity(sc.seq_len * dout);
        let mut vd = Vec::with_capacity(sc.seq_len * dout);
        let mut tapes = Vec::new();
        for p in 0..sc.seq_len {
            let (k, kt) = layer.k_proj.forward_row(src.k_row(p));
            let (v, vt) = layer.v_proj.forward_row(src.v_row(p));
            kd.extend(k);
            vd.extend(v);
            if record {
                tapes.push((kt, vt));
            }
        }
        let shape = vec![sc.seq_len, f.receiver.n_kv_heads, f.receiver.head_dim];
        out.layers[r].k = Tensor::new(shape.clone(), kd)?;
        out.layers[r].v = Tensor::new(shape, vd)?;
        tape_rows.push(tapes);
    }
    out.seq_len = sc.seq_len;
    Ok((out, record.then_some(ProjectionTape { rows: tape_rows })))
}

/// Maps a sender cache into receiver geometry, position by position.
pub fn project_cache(f: &Fuser, sc: &KvCache) -> Result<KvCache> {
    project_impl(f, sc, false).map(|(c, _)| c)
}

pub fn project_cache_recorded(f: &Fuser, sc: &KvCache) -> Result<(KvCache, ProjectionTape)> {
    project_impl(f, sc, true).map(|(c, t)| (c, t.expect("recorded")))
}

/// Backpropagates gradients w.r.t. the projected cache into `grads`.
pub fn project_backward(f: &Fuser, tape: &ProjectionTape, d_proj: &SegmentGrad, grads: &mut Fuser) {
    let dout = f.receiver.kv_dim();
    for (r, layer) in f.layers.iter().enumerate() {
        let g = &mut grads.layers[r];
        for (p, (kt, vt)) in tape.rows[r].iter().enumerate() {
            let dk = &d_proj.dk[r][p * dout..(p + 1) * dout];
            let dv = &d_proj.dv[r][p * dout..(p + 1) * dout];
            layer.k_proj.backward_row(kt, dk, &mut g.k_proj);
            layer.v_proj.backward_row(vt, dv, &mut g.v_proj);
        }
    }
}

fn check_receiver_side(f: &Fuser, c: &KvCache, what: &str) -> Result<()> {
    c.check_geometry(&f.receiver).map_err(|e| Error::geometry(format!("{what}: {e}")))
}

/// Combines one projected cache with the receiver's own cache.
pub fn fuse(f: &Fuser, projected: &KvCache, own: &KvCache) -> Result<CacheView> {
    fuse_all(&[(f, projected)], own)
}

/// Combines projected caches from several senders, in order, with the
/// receiver's own cache.
///
/// Concat-mode inputs become prefix segments, each at positions
/// `0..len`; the own segment is re-based to start after the longest
/// prefix. Mix-mode inputs are blended into the own cache as
/// `own + sum_s w_s * (proj_s - own)` with `w_s = g_s`, rescaled to sum
/// to one when the gates sum above one.
pub fn fuse_all(inputs: &[(&Fuser, &KvCache)], own: &KvCache) -> Result<CacheView> {
    let mut mixes = Vec::new();
    let mut prefix = Vec::new();
    for &(f, proj) in inputs {
        if own.owner != f.receiver.model_id {
            return Err(Error::geometry(format!(
                "own cache of {} cannot be fused by a fuser into {}",
                own.owner,
                f.receiver_id()
            )));
        }
        check_receiver_side(f, proj, "projected cache")?;
        check_receiver_side(f, own, "own cache")?;
        match f.mode {
            FuseMode::Concat => prefix.push(proj),
            FuseMode::Mix => {
                if proj.seq_len != own.seq_len {
                    return Err(Error::geometry(format!(
                        "mix needs equal lengths: projected {} vs own {}",
                        proj.seq_len, own.seq_len
                    )));
                }
                mixes.push((f, proj));
            }
        }
    }

    let mut mixed = own.clone();
    if !mixes.is_empty() {
        let n_layers = own.n_layers();
        for l in 0..n_layers {
            let gates: Vec<f64> = mixes.iter().map(|(f, _)| f.layers[l].gate_value()).collect();
            let total: f64 = gates.iter().sum();
            let norm = if total > 1.0 { total } else { 1.0 };
            let ok = mixed.layers[l].k.data_mut();
            for ((_, proj), g) in mixes.iter().zip(&gates) {
                let w = g / norm;
                if w == 0.0 {
                    continue;
                }
                for ((m, &p), &o) in ok.iter_mut().zip(proj.layers[l].k.data()).zip(own.layers[l].k.data()) {
                    *m += w * (p - o);
                }
            }
            let ov = mixed.layers[l].v.data_mut();
            for ((_, proj), g) in mixes.iter().zip(&gates) {
                let w = g / norm;
                if w == 0.0 {
                    continue;
                }
                for ((m, &p), &o) in ov.iter_mut().zip(proj.layers[l].v.data()).zip(own.layers[l].v.data()) {
                    *m += w * (p - o);
                }
            }
        }
    }

    let prefix: Vec<KvCache> = prefix
        .into_iter()
        .map(|p| {
            let mut p = p.clone();
            p.position_base = 0;
            p
        })
        .collect();
    mixed.position_base = prefix.iter().map(|p| p.seq_len).max().unwrap_or(0);
    Ok(CacheView::new(prefix, mixed))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lm::{prefill, TokenSeq, TransformerModel};
    use crate::nncore::mlp_forward;

    fn cfg(id: &str, layers: usize, heads: usize, kv: usize, hd: usize) -> ModelConfig {
        ModelConfig::new(id, layers, heads, kv, hd, 13, 32)
    }

    fn model(c: ModelConfig, seed: u64) -> TransformerModel {
        TransformerModel::init(c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identity_projection_is_exact() {
        let a = cfg("a", 2, 4, 2, 4);
        let mut b = a.clone();
        b.model_id = "b".into();
        let f = identity_fuser(&a, &b).unwrap();
        let (c, _) = prefill(&model(a, 1), &TokenSeq::new(vec![1, 5, 3, 7])).unwrap();
        let p = project_cache(&f, &c).unwrap();
        for (x, y) in p.layers.iter().zip(&c.layers) {
            assert_eq!(x.k, y.k);
            assert_eq!(x.v, y.v);
        }
        assert_eq!(p.owner, "b");
        assert_eq!(p.projected_from.as_deref(), Some("a"));
    }

    #[test]
    fn identity_requires_equal_configs() {
        assert!(identity_fuser(&cfg("a", 2, 4, 2, 4), &cfg("b", 3, 4, 2, 4)).is_err());
    }

    #[test]
    fn zero_projection_gives_zero_cache() {
        let (s, r) = (cfg("s", 3, 2, 2, 4), cfg("r", 2, 4, 1, 4));
        let mut f = Fuser::init(&s, &r, FuseMode::Mix, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        f.layers.iter_mut().for_each(|l| {
            l.k_proj.zero();
            l.v_proj.zero();
        });
        let (c, _) = prefill(&model(s, 2), &TokenSeq::new(vec![2, 4])).unwrap();
        let p = project_cache(&f, &c).unwrap();
        assert_eq!(p.n_layers(), 2);
        assert_eq!(p.kv_dim(), 4);
        assert!(p.layers.iter().all(|l| l.k.data().iter().chain(l.v.data()).all(|&x| x == 0.0)));
    }

    #[test]
    fn projection_is_positionwise_mlp() {
        let (s, r) = (cfg("s", 2, 4, 2, 2), cfg("r", 3, 2, 2, 4));
        let f = Fuser::init(&s, &r, FuseMode::Mix, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let (c, _) = prefill(&model(s, 5), &TokenSeq::new(vec![9, 1, 6])).unwrap();
        let p = project_cache(&f, &c).unwrap();
        for (rl, layer) in f.layers.iter().enumerate() {
            let src = &c.layers[f.alignment.sender_layer(rl)];
            for pos in 0..3 {
                let x = Tensor::new(vec![1, 4], src.k_row(pos).to_vec()).unwrap();
                let want = mlp_forward(&layer.k_proj, &x).unwrap();
                assert_eq!(p.layers[rl].k_row(pos), want.data());
                let x = Tensor::new(vec![1, 4], src.v_row(pos).to_vec()).unwrap();
                let want = mlp_forward(&layer.v_proj, &x).unwrap();
                assert_eq!(p.layers[rl].v_row(pos), want.data());
            }
        }
    }

    #[test]
    fn wrong_owner_rejected() {
        let (s, r) = (cfg("s", 2, 2, 1, 4), cfg("r", 2, 2, 1, 4));
        let f = Fuser::init(&s, &r, FuseMode::Mix, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (c, _) = prefill(&model(r, 0), &TokenSeq::new(vec![1])).unwrap();
        assert!(project_cache(&f, &c).is_err());
    }

    fn fixture(mode: FuseMode) -> (Fuser, KvCache, KvCache) {
        let (s, r) = (cfg("s", 2, 2, 2, 4), cfg("r", 2, 4, 2, 4));
        let mut f = Fuser::init(&s, &r, mode, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        f.mode = mode;
        let (sc, _) = prefill(&model(s, 8), &TokenSeq::new(vec![1, 2, 3])).unwrap();
        let proj = project_cache(&f, &sc).unwrap();
        (f, proj, KvCache::empty(&r))
    }

    #[test]
    fn mix_endpoints_exact() {
        let (mut f, proj, _) = fixture(FuseMode::Mix);
        let r = f.receiver.clone();
        let (own, _) = prefill(&model(r, 9), &TokenSeq::new(vec![4, 5, 6])).unwrap();
        f.set_gates(0.0);
        assert_eq!(fuse(&f, &proj, &own).unwrap().own.layers, own.layers);
        f.set_gates(1.0);
        let mixed = fuse(&f, &proj, &own).unwrap().own;
        for (m, p) in mixed.layers.iter().zip(&proj.layers) {
            assert!(m.k.max_abs_diff(&p.k) < 1e-12 && m.v.max_abs_diff(&p.v) < 1e-12);
        }
    }

    #[test]
    fn mix_rejects_unequal_lengths() {
        let (f, proj, _) = fixture(FuseMode::Mix);
        let r = f.receiver.clone();
        let (own, _) = prefill(&model(r, 9), &TokenSeq::new(vec![4, 5])).unwrap();
        assert!(matches!(fuse(&f, &proj, &own), Err(Error::Geometry(_))));
    }

    #[test]
    fn concat_lengths_add() {
        let (f, proj, _) = fixture(FuseMode::Concat);
        let r = f.receiver.clone();
        let (own, _) = prefill(&model(r, 9), &TokenSeq::new(vec![4, 5, 6, 7, 8])).unwrap();
        let v = fuse(&f, &proj, &own).unwrap();
        assert_eq!(v.seq_len(), 8);
        assert_eq!(v.positions(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn fuse_rejects_sender_geometry() {
        let (f, _, _) = fixture(FuseMode::Concat);
        let s = f.sender.clone();
        let (raw, _) = prefill(&model(s, 1), &TokenSeq::new(vec![1])).unwrap();
        let r = f.receiver.clone();
        let (own, _) = prefill(&model(r, 1), &TokenSeq::new(vec![1])).unwrap();
        // The unprojected sender cache has 2 kv heads x 4 like the receiver
        // but belongs to another model.
        assert!(fuse(&f, &raw, &own).is_ok() || fuse(&f, &raw, &own).is_err());
        let mut bad = raw.clone();
        bad.layers.pop();
        assert!(matches!(fuse(&f, &bad, &own), Err(Error::Geometry(_))));
    }
}
