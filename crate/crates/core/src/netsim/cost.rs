use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Collaboration medium of one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    /// Projected KV cache.
    Cache,
    /// Generated text tokens.
    Token,
}

impl Medium {
    pub fn label(self) -> &'static str {
        match self {
            Medium::Cache => "kv",
            Medium::Token => "token",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkState {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub rtt: f64,
}

/// Per-link network conditions; links are keyed by sender id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkState {
    pub bandwidth: f64,
    pub rtt: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, LinkState>,
}

impl NetworkState {
    pub fn uniform(bandwidth: f64, rtt: f64) -> Self {
        Self { bandwidth, rtt, links: BTreeMap::new() }
    }

    pub fn link(&self, sender: &str) -> LinkState {
        self.links.get(sender).copied().unwrap_or(LinkState { bandwidth: self.bandwidth, rtt: self.rtt })
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, l: LinkState| {
            if !(l.bandwidth > 0.0) || !(l.rtt >= 0.0) || l.rtt.is_infinite() {
                Err(Error::Config(format!("network {name}: need bandwidth > 0 and finite rtt >= 0")))
            } else {
                Ok(())
            }
        };
        check("default", LinkState { bandwidth: self.bandwidth, rtt: self.rtt })?;
        for (k, l) in &self.links {
            check(k, *l)?;
        }
        Ok(())
    }
}

/// Per-token compute prices in seconds, keyed by model id with defaults,
/// and wire encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub default_prefill: f64,
    pub default_decode: f64,
    /// Per projected token, per fuser.
    pub default_fuse: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prefill: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub decode: BTreeMap<String, f64>,
    /// Keyed by sender id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fuse: BTreeMap<String, f64>,
    #[serde(default = "default_wire_dtype")]
    pub wire_dtype_bytes: u64,
    #[serde(default = "default_text_bytes")]
    pub text_bytes_per_token: u64,
}

pub const DEFAULT_TEXT_BYTES_PER_TOKEN: u64 = 16;
pub const DEFAULT_WIRE_DTYPE_BYTES: u64 = 2;

fn default_wire_dtype() -> u64 {
    DEFAULT_WIRE_DTYPE_BYTES
}

fn default_text_bytes() -> u64 {
    DEFAULT_TEXT_BYTES_PER_TOKEN
}

impl CostModel {
    pub fn uniform(prefill: f64, decode: f64, fuse: f64) -> Self {
        Self {
            default_prefill: prefill,
            default_decode: decode,
            default_fuse: fuse,
            prefill: BTreeMap::new(),
            decode: BTreeMap::new(),
            fuse: BTreeMap::new(),
            wire_dtype_bytes: DEFAULT_WIRE_DTYPE_BYTES,
            text_bytes_per_token: DEFAULT_TEXT_BYTES_PER_TOKEN,
        }
    }

    pub fn prefill_cost(&self, model: &str) -> f64 {
        self.prefill.get(model).copied().unwrap_or(self.default_prefill)
    }

    pub fn decode_cost(&self, model: &str) -> f64 {
        self.decode.get(model).copied().unwrap_or(self.default_decode)
    }

    pub fn fuse_cost(&self, sender: &str) -> f64 {
        self.fuse.get(sender).copied().unwrap_or(self.default_fuse)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.default_prefill, self.default_decode, self.default_fuse]
            .into_iter()
            .chain(self.prefill.values().copied())
            .chain(self.decode.values().copied())
            .chain(self.fuse.values().copied());
        for x in all {
            if !(x >= 0.0) || x.is_infinite() {
                return Err(Error::Config(format!("cost entries must be finite and >= 0, got {x}")));
            }
        }
        if self.wire_dtype_bytes == 0 {
            return Err(Error::Config("wire_dtype_bytes must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::uniform(1e-3, 2e-2, 1e-4)
    }
}
