use serde::{Deserialize, Serialize};

use super::cost::{CostModel, Medium, NetworkState};
use super::timeline::{Phase, Timeline};
use crate::error::{Error, Result};

/// Work done by one sender in a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderTrace {
    pub sender_id: String,
    pub medium: Medium,
    pub prefill_tokens: u64,
    /// Tokens generated as a text contribution.
    pub decode_tokens: u64,
    pub payload_bytes: u64,
    /// Cache positions the receiver projects and fuses.
    pub fuse_tokens: u64,
}

/// Work done in one collaborative inference round, independent of prices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub receiver_id: String,
    /// Tokens generated by the receiver to rephrase the query for senders.
    pub rewrite_tokens: u64,
    pub senders: Vec<SenderTrace>,
    pub receiver_prefill_tokens: u64,
    pub receiver_decode_tokens: u64,
}

impl RoundTrace {
    pub fn standalone(receiver_id: &str, prefill_tokens: u64, decode_tokens: u64) -> Self {
        Self {
            receiver_id: receiver_id.to_string(),
            rewrite_tokens: 0,
            senders: Vec::new(),
            receiver_prefill_tokens: prefill_tokens,
            receiver_decode_tokens: decode_tokens,
        }
    }

    pub fn payload_bytes(&self) -> u64 {
        self.senders.iter().map(|s| s.payload_bytes).sum()
    }
}

/// Prices a round.
///
/// The receiver first rephrases (`decode_cost x rewrite_tokens`). Senders
/// then work in parallel: prefill, text generation for token links, and
/// transmission (`bytes / bandwidth + rtt`). Once the last payload
/// arrives the receiver fuses each cache, prefills its own context and
/// decodes.
pub fn simulate_round(trace: &RoundTrace, net: &NetworkState, cost: &CostModel) -> Result<Timeline> {
    net.validate()?;
    cost.validate()?;
    let recv = trace.receiver_id.as_str();
    if trace.senders.iter().any(|s| s.sender_id == recv) {
        return Err(Error::InvalidArgument(format!("receiver {recv} listed as its own sender")));
    }
    let mut tl = Timeline::default();
    let mut ready = 0.0;
    if trace.rewrite_tokens > 0 {
        let d = cost.decode_cost(recv) * trace.rewrite_tokens as f64;
        ready = tl.push(Phase::Rephrase, recv, 0.0, d, trace.rewrite_tokens);
    }
    let mut arrived = ready;
    for s in &trace.senders {
        let id = s.sender_id.as_str();
        let mut t = tl.push(Phase::SenderPrefill, id, ready, cost.prefill_cost(id) * s.prefill_tokens as f64, s.prefill_tokens);
        if s.decode_tokens > 0 {
            t = tl.push(Phase::SenderDecode, id, t, cost.decode_cost(id) * s.decode_tokens as f64, s.decode_tokens);
        }
        let link = net.link(id);
        let d = s.payload_bytes as f64 / link.bandwidth + link.rtt;
        t = tl.push(Phase::Transmit, &format!("{id}->{recv}"), t, d, s.payload_bytes);
        arrived = f64::max(arrived, t);
    }
    let mut t = arrived;
    for s in trace.senders.iter().filter(|s| s.fuse_tokens > 0) {
        t = tl.push(Phase::Fuse, recv, t, cost.fuse_cost(&s.sender_id) * s.fuse_tokens as f64, s.fuse_tokens);
    }
    t = tl.push(
        Phase::ReceiverPrefill,
        recv,
        t,
        cost.prefill_cost(recv) * trace.receiver_prefill_tokens as f64,
        trace.receiver_prefill_tokens,
    );
    tl.push(Phase::Decode, recv, t, cost.decode_cost(recv) * trace.receiver_decode_tokens as f64, trace.receiver_decode_tokens);
    Ok(tl)
}

/// Bandwidth at which two traces take equally long, found by bisection on
/// a log scale over `[lo, hi]`. `None` when the sign of the latency
/// difference does not change in the interval.
pub fn crossover_bandwidth(
    a: &RoundTrace,
    b: &RoundTrace,
    net: &NetworkState,
    cost: &CostModel,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>> {
    let diff = |bw: f64| -> Result<f64> {
        let n = NetworkState { bandwidth: bw, links: Default::default(), ..net.clone() };
        Ok(simulate_round(a, &n, cost)?.total - simulate_round(b, &n, cost)?.total)
    };
    let (mut l, mut h) = (lo.ln(), hi.ln());
    let (dl, dh) = (diff(lo)?, diff(hi)?);
    if dl.signum() == dh.signum() {
        return Ok(None);
    }
    for _ in 0..200 {
        let m = 0.5 * (l + h);
        if diff(m.exp())?.signum() == dl.signum() {
            l = m;
        } else {
            h = m;
        }
    }
    Ok(Some((0.5 * (l + h)).exp()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cache_sender(id: &str, bytes: u64) -> SenderTrace {
        SenderTrace { sender_id: id.into(), medium: Medium::Cache, prefill_tokens: 2, decode_tokens: 0, payload_bytes: bytes, fuse_tokens: 2 }
    }

    fn token_sender(id: &str, c: u64) -> SenderTrace {
        SenderTrace { sender_id: id.into(), medium: Medium::Token, prefill_tokens: 2, decode_tokens: c, payload_bytes: 16 * c, fuse_tokens: 0 }
    }

    fn round(senders: Vec<SenderTrace>, rewrite: u64) -> RoundTrace {
        let extra: u64 = senders.iter().filter(|s| s.medium == Medium::Token).map(|s| s.decode_tokens).sum();
        RoundTrace { receiver_id: "r".into(), rewrite_tokens: rewrite, senders, receiver_prefill_tokens: 2 + extra, receiver_decode_tokens: 2 }
    }

    #[test]
    fn zero_senders_is_prefill_plus_decode() {
        let cost = CostModel::uniform(0.01, 0.1, 0.0);
        let tl = simulate_round(&RoundTrace::standalone("r", 3, 2), &NetworkState::uniform(1e6, 0.05), &cost).unwrap();
        assert!((tl.total - (0.03 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_cache_round() {
        let cost = CostModel::uniform(0.01, 0.1, 0.001);
        let net = NetworkState::uniform(1000.0, 0.05);
        let tr = round(vec![cache_sender("a", 500), cache_sender("b", 1500)], 4);
        let tl = simulate_round(&tr, &net, &cost).unwrap();
        // rephrase 0.4, slowest sender 0.02 + 1.5 + 0.05, fuse 0.004, prefill 0.02, decode 0.2
        let want = 0.4 + 0.02 + 1.5 + 0.05 + 0.004 + 0.02 + 0.2;
        assert!((tl.total - want).abs() < 1e-12, "{} vs {want}", tl.total);
        assert_eq!(tl.receiver_prefill_tokens(), 2);
        assert!((tl.busy_time("a") - 0.02).abs() < 1e-15);
    }

    #[test]
    fn infinite_bandwidth_cache_beats_token() {
        let cost = CostModel::uniform(0.001, 0.02, 0.0001);
        let net = NetworkState::uniform(f64::MAX, 0.0);
        let c = simulate_round(&round(vec![cache_sender("a", 10_000)], 0), &net, &cost).unwrap();
        let t = simulate_round(&round(vec![token_sender("a", 2)], 0), &net, &cost).unwrap();
        assert!(c.total < t.total);
    }

    #[test]
    fn crossover_matches_closed_form() {
        let cost = CostModel::uniform(0.001, 0.02, 0.0005);
        let net = NetworkState::uniform(1.0, 0.01);
        let (k, c) = (100_000u64, 3u64);
        let a = round(vec![cache_sender("a", k)], 0);
        let b = round(vec![token_sender("a", c)], 0);
        let want = (k as f64 - 16.0 * c as f64) / (0.02 * c as f64 + 0.001 * c as f64 - 0.0005 * 2.0);
        let got = crossover_bandwidth(&a, &b, &net, &cost, 1.0, 1e12).unwrap().unwrap();
        assert!((got / want - 1.0).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cost = CostModel::default();
        assert!(simulate_round(&RoundTrace::standalone("r", 1, 1), &NetworkState::uniform(0.0, 0.0), &cost).is_err());
        let bad = CostModel { default_decode: -1.0, ..CostModel::default() };
        assert!(simulate_round(&RoundTrace::standalone("r", 1, 1), &NetworkState::uniform(1.0, 0.0), &bad).is_err());
    }

    proptest! {
        #[test]
        fn latency_monotone(
            bw in 1e2f64..1e9, rtt in 0.0f64..0.5, p in 0.0f64..0.01, d in 0.0f64..0.1,
            bump in 1.0f64..3.0, which in 0usize..4, token in any::<bool>(),
        ) {
            let tr = if token { round(vec![token_sender("a", 4), token_sender("b", 2)], 3) }
                     else { round(vec![cache_sender("a", 4000), cache_sender("b", 900)], 3) };
            let base_cost = CostModel::uniform(p, d, 1e-4);
            let base_net = NetworkState::uniform(bw, rtt);
            let t0 = simulate_round(&tr, &base_net, &base_cost).unwrap().total;
            let (mut net, mut cost) = (base_net.clone(), base_cost.clone());
            match which {
                0 => net.rtt = rtt * bump + 1e-3,
                1 => net.bandwidth = bw / bump,
                2 => cost.default_prefill = p * bump,
                _ => cost.default_decode = d * bump,
            }
            let t1 = simulate_round(&tr, &net, &cost).unwrap().total;
            prop_assert!(t1 >= t0);
        }

        #[test]
        fn total_is_max_segment_end(n in 0usize..4, bw in 1e2f64..1e6) {
            let senders = (0..n).map(|i| cache_sender(&format!("s{i}"), 100 * (i as u64 + 1))).collect();
            let tl = simulate_round(&round(senders, 2), &NetworkState::uniform(bw, 0.01), &CostModel::default()).unwrap();
            let max_end = tl.segments.iter().map(|s| s.end()).fold(0.0, f64::max);
            prop_assert_eq!(tl.total, max_end);
            prop_assert!(tl.segments.iter().all(|s| s.duration >= 0.0));
        }
    }
}
