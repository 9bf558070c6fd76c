use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{MediumChoice, ScenarioConfig};
use super::eval::{evaluate_accuracy, EvalReport};
use super::task::{gen_partitioned_qa, PartitionedQa};
use crate::error::{Error, Result};
use crate::fuser::{load_fuser, save_fuser, train_fuser, Fuser, FuserExample, FuserRegistry};
use crate::lm::checkpoint::{load_model, save_model};
use crate::lm::{train_lm, ModelConfig, TokenSeq, TrainExample, TrainHyper, TrainReport, TransformerModel};
use crate::netsim::{kv_payload_bytes, write_csv, Medium, MetricsRow, Timeline, PUBLIC_SENDERS};
use crate::protocol::{
    rewrite_corpus, select_medium, FedSession, MessageLog, RephraseKind, RephrasePolicy, SessionShape, SynonymTable,
    MAX_CONTRIBUTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privacy {
    Original,
    Rephrased,
}

impl Privacy {
    pub fn label(self) -> &'static str {
        match self {
            Privacy::Original => "original",
            Privacy::Rephrased => "rephrased",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Standalone,
    /// Every link carries caches.
    Kv,
    /// Every link carries text.
    Token,
    /// Per-link media as configured, `auto` links resolved by medium
    /// selection.
    Configured,
}

impl Protocol {
    pub fn label(self, cfg: &ScenarioConfig) -> &'static str {
        match self {
            Protocol::Standalone => "standalone",
            Protocol::Kv => "kv",
            Protocol::Token => "token",
            Protocol::Configured => {
                if cfg.senders.iter().any(|s| cfg.medium_of(s) == MediumChoice::Auto) {
                    "auto"
                } else {
                    "mixed"
                }
            }
        }
    }
}

/// Stable per-stage seed derived from the master seed.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn in_stage<T>(stage: &'static str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage, seed, source: Box::new(e) },
    })
}

/// Model configs in party order (receiver first).
pub fn model_configs(cfg: &ScenarioConfig, qa: &PartitionedQa) -> Vec<ModelConfig> {
    cfg.parties().iter().map(|m| m.config(qa.alphabet.size())).collect()
}

pub fn rephrase_policy(cfg: &ScenarioConfig, qa: &PartitionedQa) -> Result<RephrasePolicy> {
    let a = &qa.alphabet;
    Ok(match cfg.rephrase {
        RephraseKind::None => RephrasePolicy::None,
        RephraseKind::SynonymMap => RephrasePolicy::SynonymMap {
            table: Arc::new(SynonymTable::from_alphabet(a)?),
            seed: derive_seed(cfg.seed, "rephrase", 0),
        },
        RephraseKind::ModelRewrite => {
            let mut banned = vec![a.eos(), a.abstain(), a.rewrite()];
            banned.extend((0..a.n_values).map(|v| a.value(v)));
            RephrasePolicy::ModelRewrite { prompt: a.rewrite(), banned }
        }
    })
}

/// The receiver learns its facts behind random peer contributions, plus
/// the rewrite task when it rephrases with its own model.
pub fn receiver_corpus(cfg: &ScenarioConfig, qa: &PartitionedQa) -> Vec<TrainExample> {
    let mut c = qa.receiver_corpus_with_prefixes(cfg.training.prefix_contributions, derive_seed(cfg.seed, "prefixes", 0));
    if cfg.rephrase == RephraseKind::ModelRewrite {
        c.extend(rewrite_corpus(&qa.alphabet));
    }
    c
}

/// Ground-truth examples for the link from sender `party`: every fact the
/// sender or the receiver knows, over all receiver and sender wordings.
pub fn fuser_corpus(qa: &PartitionedQa, party: usize) -> Vec<FuserExample> {
    let a = &qa.alphabet;
    let mut out = Vec::new();
    for fact in (0..qa.spec.n_facts).filter(|&f| qa.knows(party, f) || qa.knows(0, f)) {
        for form in 0..a.synonyms {
            for sender_form in 0..a.synonyms {
                out.push(FuserExample { sender_query: a.query(fact, sender_form), query: a.query(fact, form), answer: qa.answer(fact) });
            }
        }
    }
    out
}

/// Sender parties (1-based) whose link may carry caches.
pub fn cache_links(cfg: &ScenarioConfig) -> Vec<usize> {
    (1..=cfg.senders.len()).filter(|&p| cfg.medium_of(&cfg.senders[p - 1]) != MediumChoice::Token).collect()
}

pub fn generate_task(cfg: &ScenarioConfig) -> Result<PartitionedQa> {
    in_stage("generate", cfg.task.seed, gen_partitioned_qa(&cfg.task))
}

pub fn train_models(cfg: &ScenarioConfig, qa: &PartitionedQa) -> Result<(Vec<TransformerModel>, Vec<TrainReport>)> {
    let t = &cfg.training;
    model_configs(cfg, qa)
        .into_par_iter()
        .enumerate()
        .map(|(p, c)| {
            let seed = derive_seed(cfg.seed, "lm", p as u64);
            in_stage("train_models", seed, {
                let corpus = if p == 0 { receiver_corpus(cfg, qa) } else { qa.corpora[p].clone() };
                let hyper = TrainHyper { lr: t.lr, ..TrainHyper::new(seed, t.lm_steps, t.lm_batch) };
                TransformerModel::init(c, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init", p as u64))).and_then(|mut m| {
                    let r = train_lm(&mut m, &corpus, &hyper)?;
                    Ok((m, r))
                })
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

pub fn train_fusers(
    cfg: &ScenarioConfig,
    qa: &PartitionedQa,
    models: &[TransformerModel],
) -> Result<(FuserRegistry, BTreeMap<String, TrainReport>)> {
    let t = &cfg.training;
    let trained = cache_links(cfg)
        .into_par_iter()
        .map(|p| {
            let seed = derive_seed(cfg.seed, "fuser", p as u64);
            in_stage("train_fusers", seed, {
                let (s, r) = (&models[p], &models[0]);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "fuser_init", p as u64));
                let hyper = TrainHyper { lr: t.lr, ..TrainHyper::new(seed, t.fuser_steps, t.fuser_batch) };
                Fuser::init(&s.config, &r.config, cfg.fuse_mode, &mut rng).and_then(|mut f| {
                    let rep = train_fuser(&mut f, s, r, &fuser_corpus(qa, p), &hyper)?;
                    Ok((f, rep))
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut registry = FuserRegistry::new();
    let mut reports = BTreeMap::new();
    for (f, rep) in trained {
        reports.insert(f.sender_id().to_string(), rep);
        registry.insert(f)?;
    }
    Ok((registry, reports))
}

/// Everything a scenario evaluation needs.
#[derive(Debug, Clone)]
pub struct Trained {
    pub qa: PartitionedQa,
    /// Party order: receiver, then senders.
    pub models: Vec<TransformerModel>,
    pub registry: FuserRegistry,
    pub policy: RephrasePolicy,
    pub lm_losses: Vec<f64>,
    pub fuser_losses: BTreeMap<String, f64>,
}

impl Trained {
    pub fn receiver(&self) -> &TransformerModel {
        &self.models[0]
    }

    pub fn senders(&self) -> &[TransformerModel] {
        &self.models[1..]
    }
}

pub fn train_all(cfg: &ScenarioConfig) -> Result<Trained> {
    let qa = generate_task(cfg)?;
    let policy = in_stage("generate", cfg.seed, rephrase_policy(cfg, &qa))?;
    let (models, lm_reports) = train_models(cfg, &qa)?;
    let (registry, fuser_reports) = train_fusers(cfg, &qa, &models)?;
    Ok(Trained {
        qa,
        models,
        registry,
        policy,
        lm_losses: lm_reports.iter().map(|r| r.final_loss().unwrap_or(f64::NAN)).collect(),
        fuser_losses: fuser_reports.iter().map(|(k, r)| (k.clone(), r.final_loss().unwrap_or(f64::NAN))).collect(),
    })
}

fn fuser_file(f: &Fuser) -> String {
    format!("{}--{}.frck", f.sender_id(), f.receiver_id())
}

pub fn save_models(models: &[TransformerModel], dir: &Path) -> Result<()> {
    for m in models {
        save_model(m, &dir.join("models").join(format!("{}.frck", m.id())))?;
    }
    Ok(())
}

pub fn save_fusers(registry: &FuserRegistry, dir: &Path) -> Result<()> {
    for f in registry.iter() {
        save_fuser(f, &dir.join("fusers").join(fuser_file(f)))?;
    }
    Ok(())
}

/// Loads checkpoints written by [`save_models`]; each must match the
/// scenario's architecture.
pub fn load_models(cfg: &ScenarioConfig, qa: &PartitionedQa, dir: &Path) -> Result<Vec<TransformerModel>> {
    model_configs(cfg, qa)
        .into_iter()
        .map(|c| {
            let m = load_model(&dir.join("models").join(format!("{}.frck", c.model_id)))?;
            if m.config != c {
                return Err(Error::Config(format!("checkpoint of {} does not match the scenario's architecture", c.model_id)));
            }
            Ok(m)
        })
        .collect()
}

pub fn load_fusers(cfg: &ScenarioConfig, models: &[TransformerModel], dir: &Path) -> Result<FuserRegistry> {
    let mut registry = FuserRegistry::new();
    for p in cache_links(cfg) {
        let (s, r) = (&models[p].config, &models[0].config);
        let path = dir.join("fusers").join(format!("{}--{}.frck", s.model_id, r.model_id));
        registry.insert(load_fuser(&path, s, r)?)?;
    }
    Ok(registry)
}

/// Rebuilds [`Trained`] from a directory written by [`run_scenario`] or the
/// train commands.
pub fn load_trained(cfg: &ScenarioConfig, dir: &Path) -> Result<Trained> {
    let qa = generate_task(cfg)?;
    let policy = rephrase_policy(cfg, &qa)?;
    let models = load_models(cfg, &qa, dir)?;
    let registry = load_fusers(cfg, &models, dir)?;
    Ok(Trained { qa, models, registry, policy, lm_losses: Vec::new(), fuser_losses: BTreeMap::new() })
}

/// Media of the first `k` links under `protocol`.
pub fn resolve_media(cfg: &ScenarioConfig, t: &Trained, protocol: Protocol, privacy: Privacy, k: usize) -> Result<Vec<Medium>> {
    let query_len = t.qa.eval.first().map_or(2, |e| e.query.len());
    (1..=k)
        .map(|p| match protocol {
            Protocol::Standalone => Err(Error::InvalidArgument("standalone has no links".into())),
            Protocol::Kv => Ok(Medium::Cache),
            Protocol::Token => Ok(Medium::Token),
            Protocol::Configured => match cfg.medium_of(&cfg.senders[p - 1]).fixed() {
                Some(m) => Ok(m),
                None => {
                    let shape = SessionShape {
                        receiver: t.receiver().config.clone(),
                        senders: vec![t.models[p].config.clone()],
                        mode: cfg.fuse_mode,
                        query_len,
                        contribution_len: 2,
                        answer_len: 2,
                        rewrite_tokens: if privacy == Privacy::Rephrased { query_len } else { 0 },
                    };
                    Ok(select_medium(&cfg.network, &cfg.cost, &shape, &cfg.qos)?.chosen)
                }
            },
        })
        .collect()
}

/// Result of evaluating one protocol on the whole eval set.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub row: MetricsRow,
    pub report: EvalReport,
    pub log: MessageLog,
    /// Per eval item; `None` where the round failed.
    pub timelines: Vec<Option<Timeline>>,
}

pub fn evaluate_protocol(
    cfg: &ScenarioConfig,
    t: &Trained,
    protocol: Protocol,
    privacy: Privacy,
    k: usize,
    first_task_id: u64,
) -> Result<ProtocolRun> {
    let k = if protocol == Protocol::Standalone { 0 } else { k };
    if k > t.senders().len() {
        return Err(Error::InvalidArgument(format!("{k} senders requested, scenario has {}", t.senders().len())));
    }
    let media = if k == 0 { Vec::new() } else { resolve_media(cfg, t, protocol, privacy, k)? };
    let session = FedSession {
        receiver: t.receiver(),
        senders: t.senders()[..k].iter().zip(media).collect(),
        registry: &t.registry,
        rephrase: if privacy == Privacy::Rephrased { t.policy.clone() } else { RephrasePolicy::None },
        net: cfg.network.clone(),
        cost: cfg.cost.clone(),
        max_contribution: MAX_CONTRIBUTION,
    };
    let results: Vec<(Result<_>, MessageLog)> = t
        .qa
        .eval
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut log = MessageLog::new();
            let r = session.decode(&TokenSeq::new(item.query.clone()), cfg.max_new, first_task_id + i as u64, &mut log);
            (r, log)
        })
        .collect();

    let mut log = MessageLog::new();
    let mut outputs = Vec::with_capacity(results.len());
    let mut timelines = Vec::with_capacity(results.len());
    let (mut latency, mut ok, mut bytes, mut positions) = (0.0, 0usize, 0u64, 0u64);
    for (r, l) in results {
        log.extend(l);
        match r {
            Ok(o) => {
                latency += o.timeline.total;
                ok += 1;
                for s in &o.trace.senders {
                    bytes += s.payload_bytes;
                    positions += match s.medium {
                        Medium::Cache => s.prefill_tokens,
                        Medium::Token => s.decode_tokens,
                    };
                }
                outputs.push(Ok(o.tokens.tokens().to_vec()));
                timelines.push(Some(o.timeline));
            }
            Err(e) => {
                outputs.push(Err(e));
                timelines.push(None);
            }
        }
    }
    let mut outputs = outputs.into_iter();
    let report = evaluate_accuracy(|_| outputs.next().expect("one output per item"), &t.qa.eval, &t.qa.alphabet.vocab);
    let row = MetricsRow {
        scenario: cfg.name.clone(),
        protocol: protocol.label(cfg).into(),
        privacy: privacy.label().into(),
        n_senders: k,
        accuracy: report.accuracy(),
        latency_s: if ok == 0 { 0.0 } else { latency / ok as f64 },
        bytes_per_token: if positions == 0 { 0.0 } else { bytes as f64 / positions as f64 },
    };
    Ok(ProtocolRun { row, report, log, timelines })
}

/// Protocols a scenario reports besides standalone.
pub fn scenario_protocols(cfg: &ScenarioConfig) -> Vec<Protocol> {
    let v = cfg.variant();
    let mut out = Vec::new();
    if cache_links(cfg).len() == cfg.senders.len() && !cfg.senders.is_empty() {
        out.push(Protocol::Kv);
    }
    if !cfg.senders.is_empty() {
        out.push(Protocol::Token);
    }
    if matches!(v.medium, MediumChoice::Auto) {
        out.push(Protocol::Configured);
    }
    out
}

pub fn scenario_privacies(cfg: &ScenarioConfig) -> Vec<Privacy> {
    if cfg.rephrase == RephraseKind::None {
        vec![Privacy::Original]
    } else {
        vec![Privacy::Original, Privacy::Rephrased]
    }
}

/// Per-token KV payload of every sender and their sum, for the scenario's
/// models and for the public sender families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSummary {
    pub wire_dtype_bytes: u64,
    pub text_bytes_per_token: u64,
    pub senders: BTreeMap<String, u64>,
    pub senders_total: u64,
    pub public_senders: BTreeMap<String, u64>,
    pub public_total: u64,
}

pub fn payload_summary(cfg: &ScenarioConfig, t: &Trained) -> PayloadSummary {
    let d = cfg.cost.wire_dtype_bytes;
    let senders: BTreeMap<String, u64> = t.senders().iter().map(|m| (m.id().to_string(), kv_payload_bytes(&m.config, 1, d))).collect();
    let public_senders: BTreeMap<String, u64> =
        PUBLIC_SENDERS.iter().map(|m| (m.name.to_string(), kv_payload_bytes(&m.config(), 1, d))).collect();
    PayloadSummary {
        wire_dtype_bytes: d,
        text_bytes_per_token: cfg.cost.text_bytes_per_token,
        senders_total: senders.values().sum(),
        senders,
        public_total: public_senders.values().sum(),
        public_senders,
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trained: Trained,
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_FILE: &str = "metrics.csv";

/// Trains, evaluates standalone and every sender-count prefix, and writes
/// `metrics.csv`, checkpoints, `messages.jsonl`, `timelines.jsonl`,
/// `vocab.json`, `payload.json` and `training.json` under `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioRun> {
    in_stage("config", cfg.seed, cfg.validate())?;
    let trained = train_all(cfg)?;
    let rows = in_stage("evaluate", cfg.seed, evaluate_and_write(cfg, &trained, out))?;
    Ok(ScenarioRun { trained, rows })
}

/// Evaluation and artifact writing for already trained models.
pub fn evaluate_and_write(cfg: &ScenarioConfig, trained: &Trained, out: &Path) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(out)?;
    save_models(&trained.models, out)?;
    save_fusers(&trained.registry, out)?;
    let mut messages = BufWriter::new(File::create(out.join("messages.jsonl"))?);
    let mut timelines = BufWriter::new(File::create(out.join("timelines.jsonl"))?);

    let mut plan = vec![(Protocol::Standalone, Privacy::Original, 0)];
    for k in 1..=cfg.senders.len() {
        for p in scenario_protocols(cfg) {
            for privacy in scenario_privacies(cfg) {
                plan.push((p, privacy, k));
            }
        }
    }
    let mut rows = Vec::with_capacity(plan.len());
    let mut next_task = 0u64;
    for (protocol, privacy, k) in plan {
        let run = evaluate_protocol(cfg, trained, protocol, privacy, k, next_task)?;
        run.log.write_jsonl(&mut messages)?;
        for (i, tl) in run.timelines.iter().enumerate() {
            if let Some(tl) = tl {
                let task = format!("{}:{}/{}/k{}", next_task + i as u64, run.row.protocol, run.row.privacy, k);
                tl.write_jsonl(&task, &mut timelines)?;
            }
        }
        next_task += trained.qa.eval.len() as u64;
        rows.push(run.row);
    }
    messages.flush()?;
    timelines.flush()?;

    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    fs::write(out.join(METRICS_FILE), csv)?;
    fs::write(out.join("vocab.json"), serde_json::to_vec_pretty(trained.qa.alphabet.vocab.symbols())?)?;
    fs::write(out.join("payload.json"), serde_json::to_vec_pretty(&payload_summary(cfg, trained))?)?;
    #[derive(Serialize)]
    struct Losses<'a> {
        lm: BTreeMap<&'a str, f64>,
        fusers: &'a BTreeMap<String, f64>,
    }
    let lm = trained.models.iter().zip(&trained.lm_losses).map(|(m, l)| (m.id(), *l)).collect();
    fs::write(out.join("training.json"), serde_json::to_vec_pretty(&Losses { lm, fusers: &trained.fuser_losses })?)?;
    Ok(rows)
}

/// Rows for the chosen protocols and privacy settings at `k` senders.
pub fn compare_protocols(
    cfg: &ScenarioConfig,
    trained: &Trained,
    k: usize,
    protocols: &[Protocol],
    privacies: &[Privacy],
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for &p in protocols {
        for &privacy in privacies {
            rows.push(evaluate_protocol(cfg, trained, p, privacy, k, 0)?.row);
        }
    }
    Ok(rows)
}
