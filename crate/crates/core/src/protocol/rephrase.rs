use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TaskAlphabet;
use crate::lm::{decode_in_place, prefill, CacheView, TokenSeq, TrainExample, TransformerModel};
use crate::nncore::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RephraseKind {
    #[default]
    None,
    SynonymMap,
    ModelRewrite,
}

/// Classes of interchangeable tokens. Each token belongs to at most one
/// class; tokens outside every class map to themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymTable {
    classes: Vec<Vec<u32>>,
    pos: HashMap<u32, (usize, usize)>,
}

impl SynonymTable {
    pub fn new(classes: Vec<Vec<u32>>) -> Result<Self> {
        let mut pos = HashMap::new();
        for (c, class) in classes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::Config(format!("synonym class {c} is empty")));
            }
            for (i, &t) in class.iter().enumerate() {
                if pos.insert(t, (c, i)).is_some() {
                    return Err(Error::Config(format!("token {t} appears in two synonym classes")));
                }
            }
        }
        Ok(Self { classes, pos })
    }

    /// One class per key, holding its surface forms.
    pub fn from_alphabet(a: &TaskAlphabet) -> Result<Self> {
        Self::new((0..a.n_facts).map(|k| (0..a.synonyms).map(|f| a.key(k, f)).collect()).collect())
    }

    /// Largest class size.
    pub fn max_class(&self) -> usize {
        self.classes.iter().map(Vec::len).max().unwrap_or(1)
    }

    /// Cyclic shift of a token within its class.
    pub fn shift(&self, t: u32, offset: isize) -> u32 {
        match self.pos.get(&t) {
            Some(&(c, i)) => {
                let n = self.classes[c].len() as isize;
                self.classes[c][(i as isize + offset).rem_euclid(n) as usize]
            }
            None => t,
        }
    }

    pub fn map(&self, tokens: &[u32], offset: isize) -> Vec<u32> {
        tokens.iter().map(|&t| self.shift(t, offset)).collect()
    }
}

/// Shift used for `party` (1-based sender index). Distinct non-zero shifts
/// while `party < forms`; party 0 keeps its own wording.
pub fn party_offset(seed: u64, party: usize, forms: usize) -> isize {
    if party == 0 || forms <= 1 {
        return 0;
    }
    let span = (forms - 1) as u64;
    (1 + (seed % span + (party as u64 - 1)) % span) as isize
}

/// How senders' copies of a query are produced.
#[derive(Debug, Clone, Default)]
pub enum RephrasePolicy {
    /// Every party sees the original query.
    #[default]
    None,
    /// Token-wise synonym substitution with a per-party shift.
    SynonymMap { table: Arc<SynonymTable>, seed: u64 },
    /// The receiver model rewrites the query after a prompt token; party
    /// `p` receives the `p`-th rewrite in a chain.
    ModelRewrite { prompt: u32, banned: Vec<u32> },
}

impl RephrasePolicy {
    pub fn kind(&self) -> RephraseKind {
        match self {
            RephrasePolicy::None => RephraseKind::None,
            RephrasePolicy::SynonymMap { .. } => RephraseKind::SynonymMap,
            RephrasePolicy::ModelRewrite { .. } => RephraseKind::ModelRewrite,
        }
    }
}

/// One greedy rewrite of `query` by `model`: prompt is `query ++ [prompt]`,
/// output has the query's length and avoids `banned` tokens.
pub fn model_rewrite(model: &TransformerModel, query: &[u32], prompt: u32, banned: &[u32]) -> Result<Vec<u32>> {
    let mut ctx = query.to_vec();
    ctx.push(prompt);
    if ctx.len() + query.len() > model.config.max_seq {
        return Err(Error::InvalidArgument("rewrite prompt exceeds max_seq".into()));
    }
    let (own, mut logits) = prefill(model, &TokenSeq::new(ctx))?;
    let mut view = CacheView::from(own);
    let mut out = Vec::with_capacity(query.len());
    for i in 0..query.len() {
        for &b in banned {
            if let Some(l) = logits.get_mut(b as usize) {
                *l = f64::NEG_INFINITY;
            }
        }
        let t = argmax(&logits).ok_or_else(|| Error::InvalidArgument("empty logits".into()))? as u32;
        out.push(t);
        if i + 1 < query.len() {
            logits = decode_in_place(model, &mut view, t)?;
        }
    }
    Ok(out)
}

/// Rephrases `query` for `party` (0 = the receiver itself). Returns the
/// new tokens and the number of tokens the rewriter generated.
pub fn rephrase(query: &TokenSeq, policy: &RephrasePolicy, party: usize, rewriter: &TransformerModel) -> Result<(TokenSeq, usize)> {
    query.check_vocab(rewriter.config.vocab_size)?;
    let q = query.tokens();
    match policy {
        RephrasePolicy::None => Ok((query.clone(), 0)),
        RephrasePolicy::SynonymMap { table, seed } => {
            let off = party_offset(*seed, party, table.max_class());
            let n = if party == 0 { 0 } else { q.len() };
            Ok((TokenSeq::new(table.map(q, off)), n))
        }
        RephrasePolicy::ModelRewrite { prompt, banned } => {
            let mut cur = q.to_vec();
            for _ in 0..party {
                cur = model_rewrite(rewriter, &cur, *prompt, banned)?;
            }
            Ok((TokenSeq::new(cur), party * q.len()))
        }
    }
}

/// Rephrasings for senders `1..=n`, and the total tokens the receiver
/// generated to produce them.
pub fn rephrase_for_senders(
    query: &TokenSeq,
    policy: &RephrasePolicy,
    n: usize,
    rewriter: &TransformerModel,
) -> Result<(Vec<TokenSeq>, usize)> {
    query.check_vocab(rewriter.config.vocab_size)?;
    match policy {
        RephrasePolicy::ModelRewrite { prompt, banned } => {
            let mut out = Vec::with_capacity(n);
            let mut cur = query.tokens().to_vec();
            for _ in 0..n {
                cur = model_rewrite(rewriter, &cur, *prompt, banned)?;
                out.push(TokenSeq::new(cur.clone()));
            }
            Ok((out, n * query.len()))
        }
        _ => {
            let mut total = 0;
            let mut out = Vec::with_capacity(n);
            for p in 1..=n {
                let (t, k) = rephrase(query, policy, p, rewriter)?;
                total += k;
                out.push(t);
            }
            Ok((out, total))
        }
    }
}

/// Training sequences teaching a model to rewrite `k{i}.{f} ?` into
/// `k{i}.{f+1} ?` after the rewrite prompt.
pub fn rewrite_corpus(a: &TaskAlphabet) -> Vec<TrainExample> {
    let mut out = Vec::new();
    for k in 0..a.n_facts {
        for f in 0..a.synonyms {
            let mut tokens = a.query(k, f);
            tokens.push(a.rewrite());
            tokens.extend(a.query(k, (f + 1) % a.synonyms));
            out.push(TrainExample { tokens, loss_from: 3 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::harness::{gen_partitioned_qa, TaskSpec};
    use crate::lm::ModelConfig;

    fn setup() -> (TaskAlphabet, Arc<SynonymTable>, TransformerModel) {
        let a = TaskAlphabet::new(20, 3, 20).unwrap();
        let t = Arc::new(SynonymTable::from_alphabet(&a).unwrap());
        let m = TransformerModel::init(ModelConfig::new("r", 1, 2, 1, 4, a.size(), 16), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (a, t, m)
    }

    #[test]
    fn none_is_identity() {
        let (a, _, m) = setup();
        let q = TokenSeq::new(a.query(3, 1));
        assert_eq!(rephrase(&q, &RephrasePolicy::None, 2, &m).unwrap(), (q, 0));
    }

    #[test]
    fn inverse_shift_restores() {
        let (a, t, _) = setup();
        let q = a.query(5, 2);
        for off in -4..5 {
            assert_eq!(t.map(&t.map(&q, off), -off), q);
        }
    }

    #[test]
    fn distinct_parties_distinct_outputs() {
        let (a, t, m) = setup();
        let policy = RephrasePolicy::SynonymMap { table: t, seed: 11 };
        let q = TokenSeq::new(a.query(7, 0));
        let (outs, n) = rephrase_for_senders(&q, &policy, 2, &m).unwrap();
        assert_eq!(n, 4);
        assert_ne!(outs[0], q);
        assert_ne!(outs[1], q);
        assert_ne!(outs[0], outs[1]);
    }

    #[test]
    fn labels_preserved() {
        let qa = gen_partitioned_qa(&TaskSpec::new(40, 4, 0.2, 0.0, 3)).unwrap();
        let a = &qa.alphabet;
        let t = Arc::new(SynonymTable::from_alphabet(a).unwrap());
        let m = TransformerModel::init(ModelConfig::new("r", 1, 2, 1, 4, a.size(), 16), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..1000 {
            let policy = RephrasePolicy::SynonymMap { table: t.clone(), seed: i };
            let (fact, form) = (rng.gen_range(0..40), rng.gen_range(0..3));
            let q = TokenSeq::new(a.query(fact, form));
            let (r, _) = rephrase(&q, &policy, rng.gen_range(1..5), &m).unwrap();
            assert_eq!(a.key_of(r.tokens()[0]).unwrap().0, fact);
            assert_eq!(r.tokens()[1], a.query_mark());
        }
    }

    #[test]
    fn alphabet_violation_rejected() {
        let (a, t, m) = setup();
        let q = TokenSeq::new(vec![a.size() as u32 + 3]);
        let policy = RephrasePolicy::SynonymMap { table: t, seed: 0 };
        assert!(matches!(rephrase(&q, &policy, 1, &m), Err(Error::Alphabet(_))));
    }

    #[test]
    fn overlapping_classes_rejected() {
        assert!(SynonymTable::new(vec![vec![1, 2], vec![2, 3]]).is_err());
    }

    #[test]
    fn party_offsets() {
        let offs: Vec<isize> = (1..4).map(|p| party_offset(5, p, 4)).collect();
        assert!(offs.iter().all(|&o| (1..4).contains(&o)));
        let mut d = offs.clone();
        d.dedup();
        assert_eq!(d.len(), 3);
        assert_eq!(party_offset(5, 0, 4), 0);
    }

    #[test]
    fn model_rewrite_respects_bans_and_length() {
        let (a, _, m) = setup();
        let q = a.query(2, 0);
        let out = model_rewrite(&m, &q, a.rewrite(), &[a.eos(), a.rewrite()]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|&t| t != a.eos() && t != a.rewrite()));
        let policy = RephrasePolicy::ModelRewrite { prompt: a.rewrite(), banned: vec![0] };
        let (outs, n) = rephrase_for_senders(&TokenSeq::new(q), &policy, 3, &m).unwrap();
        assert_eq!((outs.len(), n), (3, 6));
    }

    #[test]
    fn rewrite_corpus_targets_next_form() {
        let a = TaskAlphabet::new(4, 3, 4).unwrap();
        let c = rewrite_corpus(&a);
        assert_eq!(c.len(), 12);
        let ex = &c[2];
        assert_eq!(ex.tokens, vec![a.key(0, 2), 1, a.rewrite(), a.key(0, 0), 1]);
    }
}
