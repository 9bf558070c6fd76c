use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nncore::Tensor;

/// Keys and values of one layer, each `[seq_len, n_kv_heads, head_dim]`.
///
/// Keys are stored before the rotary transform; positions are applied at
/// attention time, so a cached segment can be re-based without rewriting it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKv {
    pub k: Tensor,
    pub v: Tensor,
}

impl LayerKv {
    pub fn empty(n_kv_heads: usize, head_dim: usize) -> Self {
        Self { k: Tensor::zeros(&[0, n_kv_heads, head_dim]), v: Tensor::zeros(&[0, n_kv_heads, head_dim]) }
    }

    /// Flattened `n_kv_heads * head_dim` key vector at position `i`.
    pub fn k_row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.k.data()[i * w..(i + 1) * w]
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.v.data()[i * w..(i + 1) * w]
    }

    fn row_width(&self) -> usize {
        self.k.shape()[1] * self.k.shape()[2]
    }
}

/// Per-layer KV tensors for a contiguous run of positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvCache {
    /// Model whose geometry the cache is in.
    pub owner: String,
    /// Set when the cache was produced by projecting another model's cache.
    pub projected_from: Option<String>,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub layers: Vec<LayerKv>,
    pub seq_len: usize,
    /// Absolute position of the first cached token.
    pub position_base: usize,
}

impl KvCache {
    pub fn empty(cfg: &ModelConfig) -> Self {
        Self::empty_with(cfg.model_id.clone(), cfg.n_layers, cfg.n_kv_heads, cfg.head_dim)
    }

    pub fn empty_with(owner: String, n_layers: usize, n_kv_heads: usize, head_dim: usize) -> Self {
        Self {
            owner,
            projected_from: None,
            n_kv_heads,
            head_dim,
            layers: (0..n_layers).map(|_| LayerKv::empty(n_kv_heads, head_dim)).collect(),
            seq_len: 0,
            position_base: 0,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    pub fn is_empty(&self) -> bool {
        self.seq_len == 0
    }

    /// Absolute position of cached token `i`.
    pub fn position(&self, i: usize) -> usize {
        self.position_base + i
    }

    /// One past the last absolute position covered.
    pub fn end_position(&self) -> usize {
        self.position_base + self.seq_len
    }

    /// Total cached scalars: `n_layers * 2 * seq_len * n_kv_heads * head_dim`.
    pub fn element_count(&self) -> usize {
        self.layers.iter().map(|l| l.k.len() + l.v.len()).sum()
    }

    /// Appends one position; `ks[l]`/`vs[l]` are flattened kv rows for layer `l`.
    pub fn push(&mut self, ks: &[Vec<f64>], vs: &[Vec<f64>]) -> Result<()> {
        if ks.len() != self.layers.len() || vs.len() != self.layers.len() {
            return Err(Error::geometry(format!(
                "push of {} layers into a {}-layer cache",
                ks.len(),
                self.layers.len()
            )));
        }
        for (layer, (k, v)) in self.layers.iter_mut().zip(ks.iter().zip(vs)) {
            layer.k.push_leading(k)?;
            layer.v.push_leading(v)?;
        }
        self.seq_len += 1;
        Ok(())
    }

    /// Checks internal invariants: equal lengths across layers and shapes
    /// matching the declared geometry.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let want = [self.seq_len, self.n_kv_heads, self.head_dim];
            if l.k.shape() != want || l.v.shape() != want {
                return Err(Error::geometry(format!(
                    "cache {} layer {i}: k {:?} v {:?}, expected {want:?}",
                    self.owner,
                    l.k.shape(),
                    l.v.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rejects caches that a model with `cfg` cannot attend over.
    pub fn check_geometry(&self, cfg: &ModelConfig) -> Result<()> {
        if self.n_layers() != cfg.n_layers || self.n_kv_heads != cfg.n_kv_heads || self.head_dim != cfg.head_dim {
            return Err(Error::geometry(format!(
                "cache {} has {} layers x {} kv heads x {} dims, model {} expects {} x {} x {} \
                 (missing or wrong fuser?)",
                self.owner,
                self.n_layers(),
                self.n_kv_heads,
                self.head_dim,
                cfg.model_id,
                cfg.n_layers,
                cfg.n_kv_heads,
                cfg.head_dim
            )));
        }
        self.validate()
    }
}

/// What a model attends over during decoding: frozen prefix segments
/// (projected caches from other models) followed by the model's own cache,
/// which is the only segment that grows.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheView {
    pub prefix: Vec<KvCache>,
    pub own: KvCache,
}

impl CacheView {
    pub fn new(prefix: Vec<KvCache>, own: KvCache) -> Self {
        Self { prefix, own }
    }

    /// Total attended positions.
    pub fn seq_len(&self) -> usize {
        self.prefix.iter().map(|c| c.seq_len).sum::<usize>() + self.own.seq_len
    }

    pub fn segments(&self) -> impl Iterator<Item = &KvCache> {
        self.prefix.iter().chain(std::iter::once(&self.own))
    }

    /// Absolute positions of every attended entry, in attention order.
    pub fn positions(&self) -> Vec<usize> {
        self.segments().flat_map(|c| (0..c.seq_len).map(move |i| c.position(i))).collect()
    }

    pub fn check_geometry(&self, cfg: &ModelConfig) -> Result<()> {
        self.segments().try_for_each(|c| c.check_geometry(cfg))
    }
}

impl From<KvCache> for CacheView {
    fn from(own: KvCache) -> Self {
        Self { prefix: Vec::new(), own }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_formula() {
        let cfg = ModelConfig::new("m", 3, 4, 2, 8, 32, 64);
        let mut c = KvCache::empty(&cfg);
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..3).map(|_| vec![0.5; cfg.kv_dim()]).collect();
            c.push(&rows, &rows).unwrap();
        }
        assert_eq!(c.seq_len, 5);
        assert_eq!(c.element_count(), 3 * 2 * 5 * 2 * 8);
        c.validate().unwrap();
    }

    #[test]
    fn geometry_mismatch_detected() {
        let a = ModelConfig::new("a", 2, 4, 2, 8, 32, 64);
        let b = ModelConfig::new("b", 3, 4, 2, 8, 32, 64);
        let c = KvCache::empty(&a);
        assert!(c.check_geometry(&a).is_ok());
        assert!(matches!(c.check_geometry(&b), Err(Error::Geometry(_))));
    }
}
