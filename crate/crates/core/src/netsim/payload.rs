use super::cost::CostModel;
use crate::lm::ModelConfig;

/// Bytes to ship `n_tokens` positions of a cache with `cfg`'s geometry.
pub fn kv_payload_bytes(cfg: &ModelConfig, n_tokens: u64, dtype_bytes: u64) -> u64 {
    cfg.n_layers as u64 * 2 * cfg.n_kv_heads as u64 * cfg.head_dim as u64 * dtype_bytes * n_tokens
}

pub fn text_payload_bytes(n_tokens: u64, cost: &CostModel) -> u64 {
    n_tokens * cost.text_bytes_per_token
}

/// Architecture of a public model family, for payload sizing only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicModel {
    pub name: &'static str,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
}

impl PublicModel {
    pub fn config(&self) -> ModelConfig {
        ModelConfig::new(self.name, self.n_layers, self.n_heads, self.n_kv_heads, self.head_dim, 1, 1)
    }
}

/// Four sender families from the published configuration files.
pub const PUBLIC_SENDERS: [PublicModel; 4] = [
    PublicModel { name: "Qwen2.5-0.5B", n_layers: 24, n_heads: 14, n_kv_heads: 2, head_dim: 64 },
    PublicModel { name: "Qwen2.5-Coder-0.5B", n_layers: 24, n_heads: 14, n_kv_heads: 2, head_dim: 64 },
    PublicModel { name: "Qwen2.5-1.5B", n_layers: 28, n_heads: 12, n_kv_heads: 2, head_dim: 128 },
    PublicModel { name: "Llama-3.2-1B", n_layers: 16, n_heads: 32, n_kv_heads: 8, head_dim: 64 },
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        let cfg = ModelConfig::new("m", 4, 2, 2, 8, 10, 10);
        assert_eq!(kv_payload_bytes(&cfg, 1, 4), 512);
        assert_eq!(kv_payload_bytes(&cfg, 0, 4), 0);
        let cost = CostModel::default();
        assert_eq!(text_payload_bytes(1, &cost), 16);
        assert_eq!(text_payload_bytes(0, &cost), 0);
        assert_eq!(text_payload_bytes(32, &cost), 512);
    }

    #[test]
    fn public_senders_near_88_kb() {
        let per: Vec<u64> = PUBLIC_SENDERS.iter().map(|m| kv_payload_bytes(&m.config(), 1, 2)).collect();
        let total: u64 = per.iter().sum();
        let target = 88.0 * 1024.0;
        assert!(total as f64 >= target / 2.0 && total as f64 <= target * 2.0, "{per:?} sum {total}");
    }
}
