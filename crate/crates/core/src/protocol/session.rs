use serde::{Deserialize, Serialize};

use super::log::{MessageKind, MessageLog};
use super::rephrase::{rephrase_for_senders, RephrasePolicy};
use crate::error::{Error, Result};
use crate::fuser::{fuse_all, project_cache, sender_span, Fuser, FuserRegistry};
use crate::lm::{decode_in_place, greedy_next, prefill, CacheView, KvCache, TokenSeq, TransformerModel};
use crate::netsim::{
    kv_payload_bytes, simulate_round, text_payload_bytes, CostModel, Medium, NetworkState, Phase, RoundTrace, SenderTrace,
    Timeline,
};

/// Default cap on a sender's text contribution.
pub const MAX_CONTRIBUTION: usize = 32;

/// A directed collaboration link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub sender_id: String,
    pub receiver_id: String,
    pub medium: Medium,
}

impl Link {
    pub fn validate(&self, registry: &FuserRegistry) -> Result<()> {
        if self.sender_id == self.receiver_id {
            return Err(Error::Config(format!("link from {} to itself", self.sender_id)));
        }
        if self.medium == Medium::Cache {
            registry.get(&self.sender_id, &self.receiver_id)?;
        }
        Ok(())
    }
}

/// One receiver and an ordered set of senders, each with a medium.
#[derive(Debug, Clone)]
pub struct FedSession<'a> {
    pub receiver: &'a TransformerModel,
    pub senders: Vec<(&'a TransformerModel, Medium)>,
    pub registry: &'a FuserRegistry,
    pub rephrase: RephrasePolicy,
    pub net: NetworkState,
    pub cost: CostModel,
    pub max_contribution: usize,
}

/// Result of one collaborative decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Generated tokens, ending with `<eos>` when it was produced.
    pub tokens: TokenSeq,
    pub trace: RoundTrace,
    pub timeline: Timeline,
}

impl Outcome {
    /// Generated tokens before `<eos>`.
    pub fn answer(&self) -> &[u32] {
        let t = self.tokens.tokens();
        let end = t.iter().position(|&x| x == 0).unwrap_or(t.len());
        &t[..end]
    }
}

/// Feeds `last` onto `view` then emits up to `max_new` greedy tokens,
/// stopping after `<eos>` (id 0).
fn generate(model: &TransformerModel, view: &mut CacheView, last: u32, max_new: usize) -> Result<Vec<u32>> {
    let eos = 0u32;
    let mut out = Vec::with_capacity(max_new);
    let mut t = last;
    for _ in 0..max_new {
        let logits = decode_in_place(model, view, t)?;
        t = greedy_next(&logits)?;
        out.push(t);
        if t == eos {
            break;
        }
    }
    Ok(out)
}

fn prefill_or_empty(model: &TransformerModel, tokens: &[u32]) -> Result<KvCache> {
    if tokens.is_empty() {
        Ok(KvCache::empty(&model.config))
    } else {
        Ok(prefill(model, &TokenSeq::new(tokens.to_vec()))?.0)
    }
}

/// Greedy answer of `model` alone.
pub fn standalone_decode(model: &TransformerModel, query: &TokenSeq, max_new: usize) -> Result<TokenSeq> {
    if query.is_empty() {
        return Err(Error::InvalidArgument("empty query".into()));
    }
    query.check_vocab(model.config.vocab_size)?;
    let q = query.tokens();
    let mut view = CacheView::from(prefill_or_empty(model, &q[..q.len() - 1])?);
    Ok(TokenSeq::new(generate(model, &mut view, q[q.len() - 1], max_new)?))
}

impl<'a> FedSession<'a> {
    pub fn new(receiver: &'a TransformerModel, registry: &'a FuserRegistry) -> Self {
        Self {
            receiver,
            senders: Vec::new(),
            registry,
            rephrase: RephrasePolicy::None,
            net: NetworkState::uniform(1e7, 0.0),
            cost: CostModel::default(),
            max_contribution: MAX_CONTRIBUTION,
        }
    }

    pub fn with_senders(mut self, senders: &[&'a TransformerModel], medium: Medium) -> Self {
        self.senders = senders.iter().map(|&m| (m, medium)).collect();
        self
    }

    pub fn links(&self) -> Vec<Link> {
        self.senders
            .iter()
            .map(|(m, medium)| Link { sender_id: m.id().into(), receiver_id: self.receiver.id().into(), medium: *medium })
            .collect()
    }

    /// Everything that can be checked without running a model.
    fn preflight(&self, query: &TokenSeq) -> Result<Vec<Option<&'a Fuser>>> {
        if query.is_empty() {
            return Err(Error::InvalidArgument("empty query".into()));
        }
        query.check_vocab(self.receiver.config.vocab_size)?;
        let mut fusers = Vec::with_capacity(self.senders.len());
        for ((s, medium), link) in self.senders.iter().zip(self.links()) {
            link.validate(self.registry)?;
            query.check_vocab(s.config.vocab_size)?;
            fusers.push(match medium {
                Medium::Cache => {
                    let f = self.registry.get(s.id(), self.receiver.id())?;
                    if f.sender != s.config || f.receiver != self.receiver.config {
                        return Err(Error::geometry(format!(
                            "fuser {} -> {} was built for different model configs",
                            f.sender_id(),
                            f.receiver_id()
                        )));
                    }
                    Some(f)
                }
                Medium::Token => None,
            });
        }
        Ok(fusers)
    }

    /// Runs one round with each sender on its own medium.
    pub fn decode(&self, query: &TokenSeq, max_new: usize, task_id: u64, log: &mut MessageLog) -> Result<Outcome> {
        let fusers = self.preflight(query)?;
        let recv = self.receiver;
        let rid = recv.id();
        let (rephrased, rewrite_tokens) = if self.senders.is_empty() {
            (Vec::new(), 0)
        } else {
            rephrase_for_senders(query, &self.rephrase, self.senders.len(), recv)?
        };

        let mut traces = Vec::with_capacity(self.senders.len());
        let mut projected: Vec<(&Fuser, KvCache)> = Vec::new();
        let mut contributions: Vec<Vec<u32>> = Vec::new();
        for (((s, medium), f), q_s) in self.senders.iter().zip(&fusers).zip(&rephrased) {
            let qs = q_s.tokens();
            match (medium, f) {
                (Medium::Cache, Some(f)) => {
                    let span = sender_span(f.mode, qs);
                    let cache = prefill_or_empty(s, span)?;
                    let n = span.len() as u64;
                    projected.push((f, project_cache(f, &cache)?));
                    traces.push(SenderTrace {
                        sender_id: s.id().into(),
                        medium: Medium::Cache,
                        prefill_tokens: n,
                        decode_tokens: 0,
                        payload_bytes: kv_payload_bytes(&s.config, n, self.cost.wire_dtype_bytes),
                        fuse_tokens: n,
                    });
                }
                _ => {
                    let mut view = CacheView::from(prefill_or_empty(s, &qs[..qs.len() - 1])?);
                    let c = generate(s, &mut view, qs[qs.len() - 1], self.max_contribution)?;
                    traces.push(SenderTrace {
                        sender_id: s.id().into(),
                        medium: Medium::Token,
                        prefill_tokens: qs.len() as u64,
                        decode_tokens: c.len() as u64,
                        payload_bytes: text_payload_bytes(c.len() as u64, &self.cost),
                        fuse_tokens: 0,
                    });
                    contributions.push(c);
                }
            }
        }

        let mut context: Vec<u32> = contributions.iter().flatten().copied().collect();
        context.extend_from_slice(query.tokens());
        let prefix_len = projected.iter().map(|(_, c)| c.seq_len).max().unwrap_or(0);
        if prefix_len + context.len() + max_new > recv.config.max_seq {
            return Err(Error::InvalidArgument(format!(
                "receiver context of {} tokens plus {max_new} new exceeds max_seq {}",
                prefix_len + context.len(),
                recv.config.max_seq
            )));
        }
        let own = prefill_or_empty(recv, &context[..context.len() - 1])?;
        let mut view = if projected.is_empty() {
            CacheView::from(own)
        } else {
            let inputs: Vec<(&Fuser, &KvCache)> = projected.iter().map(|(f, c)| (*f, c)).collect();
            fuse_all(&inputs, &own)?
        };
        let out = generate(recv, &mut view, context[context.len() - 1], max_new)?;

        let trace = RoundTrace {
            receiver_id: rid.into(),
            rewrite_tokens: rewrite_tokens as u64,
            senders: traces,
            receiver_prefill_tokens: context.len() as u64,
            receiver_decode_tokens: out.len() as u64,
        };
        let timeline = simulate_round(&trace, &self.net, &self.cost)?;
        self.log_round(&trace, &timeline, &contributions, task_id, log);
        Ok(Outcome { tokens: TokenSeq::new(out), trace, timeline })
    }

    fn log_round(&self, trace: &RoundTrace, tl: &Timeline, contributions: &[Vec<u32>], task_id: u64, log: &mut MessageLog) {
        let rid = trace.receiver_id.as_str();
        let start = tl.phase_time(Phase::Rephrase);
        for s in &trace.senders {
            log.record(task_id, rid, &s.sender_id, s.medium, MessageKind::TaskRequest, 0, start, None);
        }
        let mut text = contributions.iter();
        for s in &trace.senders {
            let link = format!("{}->{rid}", s.sender_id);
            let t = tl
                .segments
                .iter()
                .find(|g| g.phase == Phase::Transmit && g.party == link)
                .map_or(start, |g| g.start);
            let (kind, tokens) = match s.medium {
                Medium::Cache => (MessageKind::KvPayload, None),
                Medium::Token => (MessageKind::TextPayload, text.next().cloned()),
            };
            log.record(task_id, &s.sender_id, rid, s.medium, kind, s.payload_bytes, t, tokens);
        }
    }
}

/// Cache-medium round over all senders of `session`.
pub fn c2c_decode(session: &FedSession, query: &TokenSeq, max_new: usize, task_id: u64, log: &mut MessageLog) -> Result<Outcome> {
    let mut s = session.clone();
    s.senders.iter_mut().for_each(|(_, m)| *m = Medium::Cache);
    s.decode(query, max_new, task_id, log)
}

/// Token-medium round over all senders of `session`.
pub fn t2t_decode(session: &FedSession, query: &TokenSeq, max_new: usize, task_id: u64, log: &mut MessageLog) -> Result<Outcome> {
    let mut s = session.clone();
    s.senders.iter_mut().for_each(|(_, m)| *m = Medium::Token);
    s.decode(query, max_new, task_id, log)
}

/// Answers of both directions of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidirectional {
    pub at_i: Outcome,
    pub at_j: Outcome,
}

/// `j` refines `i`'s decode, then `i` refines `j`'s. Both fusers must be
/// registered before anything runs.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_round(
    i: &TransformerModel,
    j: &TransformerModel,
    registry: &FuserRegistry,
    rephrase: &RephrasePolicy,
    net: &NetworkState,
    cost: &CostModel,
    query: &TokenSeq,
    max_new: usize,
    task_id: u64,
    log: &mut MessageLog,
) -> Result<Bidirectional> {
    registry.get(j.id(), i.id())?;
    registry.get(i.id(), j.id())?;
    let session = |r, s| FedSession {
        receiver: r,
        senders: vec![(s, Medium::Cache)],
        registry,
        rephrase: rephrase.clone(),
        net: net.clone(),
        cost: cost.clone(),
        max_contribution: MAX_CONTRIBUTION,
    };
    let mut local = MessageLog::new();
    let at_i = session(i, j).decode(query, max_new, task_id, &mut local)?;
    let at_j = session(j, i).decode(query, max_new, task_id, &mut local)?;
    log.extend(local);
    Ok(Bidirectional { at_i, at_j })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fuser::{identity_fuser, FuseMode};
    use crate::lm::ModelConfig;
    use crate::netsim::Phase;

    fn model(id: &str, layers: usize, seed: u64) -> TransformerModel {
        TransformerModel::init(ModelConfig::new(id, layers, 2, 1, 4, 12, 24), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn q() -> TokenSeq {
        TokenSeq::new(vec![5, 1])
    }

    #[test]
    fn identity_fuser_matches_standalone() {
        let (r, s) = (model("r", 2, 1), model("s", 2, 2));
        let mut reg = FuserRegistry::new();
        reg.insert(identity_fuser(&s.config, &r.config).unwrap()).unwrap();
        let session = FedSession::new(&r, &reg).with_senders(&[&s], Medium::Cache);
        let out = session.decode(&q(), 4, 0, &mut MessageLog::new()).unwrap();
        assert_eq!(out.tokens, standalone_decode(&r, &q(), 4).unwrap());
        assert_eq!(out.trace.senders[0].prefill_tokens, 1);
        assert_eq!(out.trace.receiver_prefill_tokens, 2);
    }

    #[test]
    fn missing_fuser_fails_before_compute() {
        let (r, s) = (model("r", 2, 1), model("s", 1, 2));
        let reg = FuserRegistry::new();
        let mut log = MessageLog::new();
        let session = FedSession::new(&r, &reg).with_senders(&[&s], Medium::Cache);
        assert!(matches!(session.decode(&q(), 4, 0, &mut log), Err(Error::MissingFuser { .. })));
        assert!(log.is_empty());
        assert!(t2t_decode(&session, &q(), 4, 0, &mut log).is_ok());
    }

    #[test]
    fn mismatched_fuser_rejected() {
        let (r, s) = (model("r", 2, 1), model("s", 1, 2));
        let other = ModelConfig::new("s", 3, 2, 1, 4, 12, 24);
        let mut reg = FuserRegistry::new();
        reg.insert(Fuser::init(&other, &r.config, FuseMode::Concat, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()).unwrap();
        let session = FedSession::new(&r, &reg).with_senders(&[&s], Medium::Cache);
        assert!(matches!(session.decode(&q(), 4, 0, &mut MessageLog::new()), Err(Error::Geometry(_))));
    }

    #[test]
    fn bad_queries_rejected() {
        let r = model("r", 1, 1);
        let reg = FuserRegistry::new();
        let session = FedSession::new(&r, &reg);
        let mut log = MessageLog::new();
        assert!(session.decode(&TokenSeq::new(vec![]), 4, 0, &mut log).is_err());
        assert!(matches!(session.decode(&TokenSeq::new(vec![40]), 4, 0, &mut log), Err(Error::Alphabet(_))));
        assert!(session.decode(&q(), 30, 0, &mut log).is_err());
    }

    #[test]
    fn token_round_logs_text_and_requests() {
        let (r, a, b) = (model("r", 1, 1), model("a", 1, 2), model("b", 2, 3));
        let mut reg = FuserRegistry::new();
        reg.insert(Fuser::init(&b.config, &r.config, FuseMode::Concat, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()).unwrap();
        let mut session = FedSession::new(&r, &reg);
        session.senders = vec![(&a, Medium::Token), (&b, Medium::Cache)];
        session.max_contribution = 3;
        let mut log = MessageLog::new();
        let out = session.decode(&q(), 2, 7, &mut log).unwrap();
        assert_eq!(log.len(), 4);
        for m in log.sender_bound("r") {
            assert_eq!((m.kind, m.tokens.is_none(), m.payload_bytes), (MessageKind::TaskRequest, true, 0));
        }
        let text = &log.entries()[2];
        assert_eq!(text.kind, MessageKind::TextPayload);
        let c = text.tokens.as_ref().unwrap();
        assert!(!c.is_empty() && c.len() <= 3);
        assert_eq!(text.payload_bytes, 16 * c.len() as u64);
        assert_eq!(out.trace.receiver_prefill_tokens, 2 + c.len() as u64);
        let kv = &log.entries()[3];
        assert_eq!((kv.kind, kv.payload_bytes), (MessageKind::KvPayload, 2 * 2 * 4 * 2 * 2));
        assert!(kv.t_sim > 0.0);
        assert!(out.timeline.phase_time(Phase::Transmit) > 0.0);
    }

    #[test]
    fn bidirectional_checks_both_links() {
        let (i, j) = (model("i", 1, 1), model("j", 2, 2));
        let mut reg = FuserRegistry::new();
        reg.insert(Fuser::init(&j.config, &i.config, FuseMode::Concat, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()).unwrap();
        let (net, cost) = (NetworkState::uniform(1e6, 0.0), CostModel::default());
        let mut log = MessageLog::new();
        let run = |reg: &FuserRegistry, log: &mut MessageLog| {
            bidirectional_round(&i, &j, reg, &RephrasePolicy::None, &net, &cost, &q(), 2, 0, log)
        };
        assert!(matches!(run(&reg, &mut log), Err(Error::MissingFuser { .. })));
        assert!(log.is_empty());
        reg.insert(Fuser::init(&i.config, &j.config, FuseMode::Concat, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()).unwrap();
        let out = run(&reg, &mut log).unwrap();
        assert_eq!((out.at_i.trace.receiver_id.as_str(), out.at_j.trace.receiver_id.as_str()), ("i", "j"));
        assert_eq!(log.len(), 4);
    }
}
