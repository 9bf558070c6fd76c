use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuser::{sender_span, FuseMode};
use crate::lm::ModelConfig;
use crate::netsim::{kv_payload_bytes, simulate_round, text_payload_bytes, CostModel, Medium, NetworkState, RoundTrace, SenderTrace};

/// Service targets for one task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosSpec {
    /// Seconds; `None` means no deadline.
    #[serde(default)]
    pub deadline: Option<f64>,
    /// Informational only; accuracy is not predicted.
    #[serde(default)]
    pub min_accuracy_hint: Option<f64>,
}

/// Expected size of a round, used to predict latency per medium before
/// any model runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionShape {
    pub receiver: ModelConfig,
    pub senders: Vec<ModelConfig>,
    pub mode: FuseMode,
    pub query_len: usize,
    /// Expected text contribution length per sender, including `<eos>`.
    pub contribution_len: usize,
    pub answer_len: usize,
    pub rewrite_tokens: usize,
}

impl SessionShape {
    /// Predicted trace with every sender on `medium`.
    pub fn trace(&self, medium: Medium, cost: &CostModel) -> RoundTrace {
        let l = self.query_len as u64;
        let c = self.contribution_len as u64;
        let span = sender_span(self.mode, &vec![0u32; self.query_len]).len() as u64;
        let senders: Vec<SenderTrace> = self
            .senders
            .iter()
            .map(|s| match medium {
                Medium::Cache => SenderTrace {
                    sender_id: s.model_id.clone(),
                    medium,
                    prefill_tokens: span,
                    decode_tokens: 0,
                    payload_bytes: kv_payload_bytes(s, span, cost.wire_dtype_bytes),
                    fuse_tokens: span,
                },
                Medium::Token => SenderTrace {
                    sender_id: s.model_id.clone(),
                    medium,
                    prefill_tokens: l,
                    decode_tokens: c,
                    payload_bytes: text_payload_bytes(c, cost),
                    fuse_tokens: 0,
                },
            })
            .collect();
        let extra = if medium == Medium::Token { c * senders.len() as u64 } else { 0 };
        RoundTrace {
            receiver_id: self.receiver.model_id.clone(),
            rewrite_tokens: self.rewrite_tokens as u64,
            senders,
            receiver_prefill_tokens: l + extra,
            receiver_decode_tokens: self.answer_len as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumDecision {
    pub chosen: Medium,
    pub cache_latency: f64,
    pub token_latency: f64,
    /// Set when neither medium meets the deadline; `chosen` is then the
    /// faster one.
    pub deadline_miss: bool,
}

/// Picks the medium with the lower predicted latency; ties go to the cache.
/// Any medium meeting the deadline is at least as fast as one missing it,
/// so the deadline only sets the miss flag.
pub fn select_medium(net: &NetworkState, cost: &CostModel, shape: &SessionShape, qos: &QosSpec) -> Result<MediumDecision> {
    if shape.query_len == 0 {
        return Err(Error::InvalidArgument("empty query".into()));
    }
    let cache_latency = simulate_round(&shape.trace(Medium::Cache, cost), net, cost)?.total;
    let token_latency = simulate_round(&shape.trace(Medium::Token, cost), net, cost)?.total;
    let chosen = if cache_latency <= token_latency { Medium::Cache } else { Medium::Token };
    let deadline_miss = qos.deadline.is_some_and(|d| cache_latency.min(token_latency) > d);
    Ok(MediumDecision { chosen, cache_latency, token_latency, deadline_miss })
}
