//! Synthetic partitioned-knowledge QA.
//!
//! Facts map a key `k{i}` to a value `v{j}`. Every key has `synonyms`
//! surface forms (`k7`, `k7.1`, `k7.2`, ...) with identical meaning. A query
//! is `<key form> ?` and its answer `<value> <eos>`. A party that does not
//! know a fact is trained to answer `none`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{TrainExample, Vocab};

pub const QUERY_MARK: &str = "?";
pub const ABSTAIN: &str = "none";
pub const REWRITE: &str = "<rw>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub n_facts: usize,
    pub n_senders: usize,
    /// Fraction of facts known to the receiver.
    pub receiver_share: f64,
    /// Fraction of each sender's facts also given to the next sender.
    pub overlap: f64,
    pub seed: u64,
    /// Surface forms per key.
    #[serde(default = "default_synonyms")]
    pub synonyms: usize,
    /// Size of the value alphabet; defaults to `n_facts`.
    #[serde(default)]
    pub n_values: Option<usize>,
}

fn default_synonyms() -> usize {
    3
}

impl TaskSpec {
    pub fn new(n_facts: usize, n_senders: usize, receiver_share: f64, overlap: f64, seed: u64) -> Self {
        Self { n_facts, n_senders, receiver_share, overlap, seed, synonyms: default_synonyms(), n_values: None }
    }

    pub fn n_values(&self) -> usize {
        self.n_values.unwrap_or(self.n_facts)
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("task {name} must lie in [0, 1], got {x}")))
            }
        };
        frac("receiver_share", self.receiver_share)?;
        frac("overlap", self.overlap)?;
        if self.n_facts == 0 || self.synonyms == 0 || self.n_values() == 0 {
            return Err(Error::Config("task needs at least one fact, synonym and value".into()));
        }
        Ok(())
    }
}

/// Symbol table for a task: `<eos>`, `?`, `none`, `<rw>`, key forms, values.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAlphabet {
    pub vocab: Vocab,
    pub n_facts: usize,
    pub synonyms: usize,
    pub n_values: usize,
}

impl TaskAlphabet {
    pub fn new(n_facts: usize, synonyms: usize, n_values: usize) -> Result<Self> {
        let mut syms = vec![QUERY_MARK.to_string(), ABSTAIN.to_string(), REWRITE.to_string()];
        for k in 0..n_facts {
            for f in 0..synonyms {
                syms.push(key_symbol(k, f));
            }
        }
        syms.extend((0..n_values).map(|v| format!("v{v}")));
        Ok(Self { vocab: Vocab::new(syms)?, n_facts, synonyms, n_values })
    }

    pub fn for_spec(spec: &TaskSpec) -> Result<Self> {
        Self::new(spec.n_facts, spec.synonyms, spec.n_values())
    }

    pub fn size(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos(&self) -> u32 {
        0
    }

    pub fn query_mark(&self) -> u32 {
        1
    }

    pub fn abstain(&self) -> u32 {
        2
    }

    pub fn rewrite(&self) -> u32 {
        3
    }

    pub fn key(&self, fact: usize, form: usize) -> u32 {
        (4 + fact * self.synonyms + form) as u32
    }

    pub fn value(&self, v: usize) -> u32 {
        (4 + self.n_facts * self.synonyms + v) as u32
    }

    /// `(fact, form)` of a key token.
    pub fn key_of(&self, t: u32) -> Option<(usize, usize)> {
        let i = (t as usize).checked_sub(4)?;
        (i < self.n_facts * self.synonyms).then(|| (i / self.synonyms, i % self.synonyms))
    }

    pub fn is_value(&self, t: u32) -> bool {
        let lo = 4 + self.n_facts * self.synonyms;
        (lo..lo + self.n_values).contains(&(t as usize))
    }

    pub fn query(&self, fact: usize, form: usize) -> Vec<u32> {
        vec![self.key(fact, form), self.query_mark()]
    }
}

pub fn key_symbol(fact: usize, form: usize) -> String {
    if form == 0 {
        format!("k{fact}")
    } else {
        format!("k{fact}.{form}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub fact: usize,
    pub query: Vec<u32>,
    /// Expected answer tokens, ending with `<eos>`.
    pub answer: Vec<u32>,
}

/// Output of [`gen_partitioned_qa`]. Party 0 is the receiver, parties
/// `1..=n_senders` the senders.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedQa {
    pub spec: TaskSpec,
    pub alphabet: TaskAlphabet,
    /// Value index of every fact.
    pub values: Vec<usize>,
    /// Facts known to each party, sorted.
    pub known: Vec<Vec<usize>>,
    pub corpora: Vec<Vec<TrainExample>>,
    pub eval: Vec<EvalItem>,
}

impl PartitionedQa {
    pub fn n_parties(&self) -> usize {
        self.known.len()
    }

    pub fn knows(&self, party: usize, fact: usize) -> bool {
        self.known[party].binary_search(&fact).is_ok()
    }

    pub fn answer(&self, fact: usize) -> Vec<u32> {
        vec![self.alphabet.value(self.values[fact]), self.alphabet.eos()]
    }

    /// Answer a party is trained to give: the value when known, else `none`.
    pub fn party_answer(&self, party: usize, fact: usize) -> Vec<u32> {
        if self.knows(party, fact) {
            self.answer(fact)
        } else {
            vec![self.alphabet.abstain(), self.alphabet.eos()]
        }
    }

    /// The receiver's corpus where every example also appears behind
    /// `1..=max_contributions` random peer contributions (`<value> <eos>` or
    /// `none <eos>`), with the target unchanged. Makes the receiver's answer
    /// independent of any text prefix.
    pub fn receiver_corpus_with_prefixes(&self, max_contributions: usize, seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = &self.corpora[0];
        let mut out = base.clone();
        if max_contributions == 0 {
            return out;
        }
        for ex in base {
            let n = rng.gen_range(1..=max_contributions);
            let mut tokens = Vec::with_capacity(2 * n + ex.tokens.len());
            for _ in 0..n {
                let head = if rng.gen_bool(0.5) {
                    self.alphabet.abstain()
                } else {
                    self.alphabet.value(rng.gen_range(0..self.alphabet.n_values))
                };
                tokens.extend([head, self.alphabet.eos()]);
            }
            let loss_from = tokens.len() + ex.loss_from;
            tokens.extend_from_slice(&ex.tokens);
            out.push(TrainExample { tokens, loss_from });
        }
        out
    }

    /// Fraction of eval items whose fact the receiver knows.
    pub fn standalone_ceiling(&self) -> f64 {
        let hits = self.eval.iter().filter(|e| self.knows(0, e.fact)).count();
        hits as f64 / self.eval.len().max(1) as f64
    }
}

/// Splits facts between the receiver and the senders and builds per-party
/// corpora plus an eval set of every (fact, surface form) query.
/// Deterministic in `spec.seed`.
pub fn gen_partitioned_qa(spec: &TaskSpec) -> Result<PartitionedQa> {
    spec.validate()?;
    let alphabet = TaskAlphabet::for_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_facts;
    let values: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.n_values())).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_recv = (spec.receiver_share * n as f64).round() as usize;
    if n_recv < n && spec.n_senders == 0 {
        return Err(Error::Config(format!(
            "receiver_share {} leaves {} facts unassigned with no senders",
            spec.receiver_share,
            n - n_recv
        )));
    }
    let mut known = vec![Vec::new(); spec.n_senders + 1];
    known[0].extend_from_slice(&order[..n_recv]);
    for (i, &fact) in order[n_recv..].iter().enumerate() {
        known[1 + i % spec.n_senders].push(fact);
    }
    if spec.n_senders > 1 && spec.overlap > 0.0 {
        let base: Vec<Vec<usize>> = known[1..].to_vec();
        for (s, facts) in base.iter().enumerate() {
            let k = (spec.overlap * facts.len() as f64).round() as usize;
            let next = 1 + (s + 1) % spec.n_senders;
            known[next].extend_from_slice(&facts[..k]);
        }
    }
    for k in &mut known {
        k.sort_unstable();
        k.dedup();
    }

    let mut qa = PartitionedQa { spec: spec.clone(), alphabet, values, known, corpora: Vec::new(), eval: Vec::new() };
    qa.corpora = (0..qa.n_parties())
        .map(|p| {
            let mut c = Vec::with_capacity(n * spec.synonyms);
            for fact in 0..n {
                for form in 0..spec.synonyms {
                    let mut tokens = qa.alphabet.query(fact, form);
                    tokens.extend(qa.party_answer(p, fact));
                    c.push(TrainExample { tokens, loss_from: 2 });
                }
            }
            c
        })
        .collect();
    qa.eval = (0..n)
        .flat_map(|fact| (0..spec.synonyms).map(move |form| (fact, form)))
        .map(|(fact, form)| EvalItem { fact, query: qa.alphabet.query(fact, form), answer: qa.answer(fact) })
        .collect();
    Ok(qa)
}
