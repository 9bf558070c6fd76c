use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture hyperparameters of one toy decoder-only model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Hidden width of the per-block feed-forward network.
    #[serde(default)]
    pub d_ff: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_rope_base() -> f64 {
    10_000.0
}

impl ModelConfig {
    /// Builds a config with `d_model = n_heads * head_dim` and `d_ff = 4 * d_model`.
    pub fn new(
        model_id: impl Into<String>,
        n_layers: usize,
        n_heads: usize,
        n_kv_heads: usize,
        head_dim: usize,
        vocab_size: usize,
        max_seq: usize,
    ) -> Self {
        let d_model = n_heads * head_dim;
        Self {
            model_id: model_id.into(),
            n_layers,
            n_heads,
            n_kv_heads,
            head_dim,
            d_model,
            vocab_size,
            max_seq,
            d_ff: 4 * d_model,
            rope_base: default_rope_base(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model {}: {m}", self.model_id)));
        if self.model_id.is_empty() {
            return Err(Error::Config("model id is empty".into()));
        }
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("d_model", self.d_model),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model != self.n_heads * self.head_dim {
            return bad(format!(
                "d_model {} != n_heads {} * head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            ));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!("n_heads {} not divisible by n_kv_heads {}", self.n_heads, self.n_kv_heads));
        }
        if !self.head_dim.is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return bad(format!("rope_base {} must be > 1", self.rope_base));
        }
        Ok(())
    }

    /// Width of one position's keys (or values) across kv heads.
    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    /// Cached elements per token: `n_layers * 2 * n_kv_heads * head_dim`.
    pub fn kv_elements_per_token(&self) -> usize {
        self.n_layers * 2 * self.kv_dim()
    }

    /// Same cache geometry (layers and per-layer KV layout).
    pub fn same_geometry(&self, other: &ModelConfig) -> bool {
        self.n_layers == other.n_layers && self.n_kv_heads == other.n_kv_heads && self.head_dim == other.head_dim
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let cfg = ModelConfig::new("m", 2, 4, 2, 8, 64, 32);
        cfg.validate().unwrap();
        assert_eq!(cfg.d_model, 32);

        let mut bad = cfg.clone();
        bad.n_kv_heads = 3;
        assert!(bad.validate().is_err());

        let mut bad = cfg.clone();
        bad.d_model = 30;
        assert!(bad.validate().is_err());

        let mut bad = cfg;
        bad.head_dim = 3;
        bad.d_model = 12;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = ModelConfig::new("m", 2, 4, 2, 8, 64, 32);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.n_layers = 3;
        assert_ne!(a.digest(), b.digest());
    }
}
