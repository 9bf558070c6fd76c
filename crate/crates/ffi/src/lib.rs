//! C ABI over `fedrefine`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an `FrStatus`;
//! on failure `fr_last_error` describes the most recent error on the
//! calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedrefine::harness::pipeline::evaluate_protocol;
use fedrefine::harness::{load_trained, run_scenario, Privacy, Protocol, ScenarioConfig, Trained};
use fedrefine::lm::checkpoint::load_model;
use fedrefine::lm::{ModelConfig, TokenSeq, TransformerModel};
use fedrefine::netsim::{kv_payload_bytes, Medium};
use fedrefine::protocol::{standalone_decode, FedSession, MessageLog, RephrasePolicy, MAX_CONTRIBUTION};
use fedrefine::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or out-of-range argument.
    InvalidArgument = 1,
    Config = 2,
    Divergence = 3,
    MissingArtifact = 4,
    Geometry = 5,
    MissingFuser = 6,
    Alphabet = 7,
    /// Output buffer too small; the required length was still written.
    BufferTooSmall = 8,
    /// The handle has no trained artifacts yet.
    NotTrained = 9,
    Internal = 10,
    Panic = 11,
}

/// Collaboration medium of every link in a decode call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrMedium {
    Cache = 0,
    Token = 1,
}

/// A scenario configuration and, once trained or loaded, its artifacts.
pub struct FrScenario {
    config: ScenarioConfig,
    trained: Option<Trained>,
}

/// One trained language model.
pub struct FrModel {
    model: TransformerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FrStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) => FrStatus::Config,
        Error::Divergence { .. } => FrStatus::Divergence,
        Error::MissingArtifact { .. } => FrStatus::MissingArtifact,
        Error::Geometry(_) => FrStatus::Geometry,
        Error::MissingFuser { .. } => FrStatus::MissingFuser,
        Error::Alphabet(_) => FrStatus::Alphabet,
        Error::InvalidArgument(_) | Error::Shape(_) => FrStatus::InvalidArgument,
        _ => FrStatus::Internal,
    }
}

struct Fail(FrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(FrStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> FrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside fedrefine".into());
            FrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(invalid("null path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn tokens_arg<'a>(p: *const u32, len: usize) -> Result<&'a [u32], Fail> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(invalid("null token buffer")) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `src` into `out` and writes its length to `out_len`, even when
/// `out` is too small.
unsafe fn write_tokens(src: &[u32], out: *mut u32, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(invalid("null out_len"));
    }
    *out_len = src.len();
    if src.len() > cap {
        return Err(Fail(FrStatus::BufferTooSmall, format!("need {} tokens, buffer holds {cap}", src.len())));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(invalid("null output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn fr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn fr_status_str(status: FrStatus) -> *const c_char {
    let s: &'static CStr = match status {
        FrStatus::Ok => c"ok",
        FrStatus::InvalidArgument => c"invalid argument",
        FrStatus::Config => c"config error",
        FrStatus::Divergence => c"training diverged",
        FrStatus::MissingArtifact => c"missing artifact",
        FrStatus::Geometry => c"geometry mismatch",
        FrStatus::MissingFuser => c"missing fuser",
        FrStatus::Alphabet => c"symbol outside alphabet",
        FrStatus::BufferTooSmall => c"buffer too small",
        FrStatus::NotTrained => c"scenario not trained",
        FrStatus::Internal => c"internal error",
        FrStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Bytes to ship `n_tokens` cache positions at `dtype_bytes` per element.
#[no_mangle]
pub extern "C" fn fr_kv_payload_bytes(n_layers: usize, n_kv_heads: usize, head_dim: usize, n_tokens: u64, dtype_bytes: u64) -> u64 {
    let cfg = ModelConfig::new("ffi", n_layers, n_kv_heads.max(1), n_kv_heads, head_dim, 1, 1);
    kv_payload_bytes(&cfg, n_tokens, dtype_bytes)
}

/// Parses a scenario file into `*out`.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_load(path: *const c_char, out: *mut *mut FrScenario) -> FrStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null out handle"));
        }
        let config = ScenarioConfig::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FrScenario { config, trained: None }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fr_scenario_free(s: *mut FrScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Overrides the master seed.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_set_seed(s: *mut FrScenario, seed: u64) -> FrStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| invalid("null scenario"))?;
        s.config.seed = seed;
        Ok(())
    })
}

/// Trains and evaluates the scenario, writing artifacts to `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_run(s: *mut FrScenario, out_dir: *const c_char) -> FrStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| invalid("null scenario"))?;
        let run = run_scenario(&s.config, &path_arg(out_dir)?)?;
        s.trained = Some(run.trained);
        Ok(())
    })
}

/// Loads checkpoints previously written for this scenario from `dir`.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_load_artifacts(s: *mut FrScenario, dir: *const c_char) -> FrStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| invalid("null scenario"))?;
        s.trained = Some(load_trained(&s.config, &path_arg(dir)?)?);
        Ok(())
    })
}

/// Number of configured senders, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_sender_count(s: *const FrScenario) -> usize {
    s.as_ref().map_or(0, |s| s.config.senders.len())
}

/// Tokenizes a space-separated query over the scenario's task vocabulary.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_tokenize(
    s: *const FrScenario,
    text: *const c_char,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> FrStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| invalid("null scenario"))?;
        if text.is_null() {
            return Err(invalid("null text"));
        }
        let text = CStr::from_ptr(text).to_str().map_err(|_| invalid("text is not UTF-8"))?;
        let qa = fedrefine::harness::gen_partitioned_qa(&s.config.task)?;
        let ts = fedrefine::lm::tokenize(text, &qa.alphabet.vocab)?;
        write_tokens(ts.tokens(), out, cap, out_len)
    })
}

/// Answers `query` at the receiver with the first `n_senders` senders on
/// `medium`. Writes the generated tokens (ending with end-of-answer when
/// produced) and the simulated latency in seconds.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_decode(
    s: *const FrScenario,
    medium: FrMedium,
    rephrased: bool,
    n_senders: usize,
    query: *const u32,
    query_len: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
    latency_s: *mut f64,
) -> FrStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| invalid("null scenario"))?;
        let t = s.trained.as_ref().ok_or_else(|| Fail(FrStatus::NotTrained, "scenario has no trained artifacts".into()))?;
        if n_senders > t.senders().len() {
            return Err(invalid("more senders requested than configured"));
        }
        let q = TokenSeq::new(tokens_arg(query, query_len)?.to_vec());
        let m = match medium {
            FrMedium::Cache => Medium::Cache,
            FrMedium::Token => Medium::Token,
        };
        let session = FedSession {
            receiver: t.receiver(),
            senders: t.senders()[..n_senders].iter().map(|x| (x, m)).collect(),
            registry: &t.registry,
            rephrase: if rephrased { t.policy.clone() } else { RephrasePolicy::None },
            net: s.config.network.clone(),
            cost: s.config.cost.clone(),
            max_contribution: MAX_CONTRIBUTION,
        };
        let o = session.decode(&q, s.config.max_new, 0, &mut MessageLog::new())?;
        if !latency_s.is_null() {
            *latency_s = o.timeline.total;
        }
        write_tokens(o.tokens.tokens(), out, cap, out_len)
    })
}

/// Accuracy of one protocol over the scenario's eval set.
#[no_mangle]
pub unsafe extern "C" fn fr_scenario_accuracy(
    s: *const FrScenario,
    medium: FrMedium,
    rephrased: bool,
    n_senders: usize,
    accuracy: *mut f64,
) -> FrStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| invalid("null scenario"))?;
        let t = s.trained.as_ref().ok_or_else(|| Fail(FrStatus::NotTrained, "scenario has no trained artifacts".into()))?;
        if accuracy.is_null() {
            return Err(invalid("null accuracy"));
        }
        let protocol = match (n_senders, medium) {
            (0, _) => Protocol::Standalone,
            (_, FrMedium::Cache) => Protocol::Kv,
            (_, FrMedium::Token) => Protocol::Token,
        };
        let privacy = if rephrased { Privacy::Rephrased } else { Privacy::Original };
        *accuracy = evaluate_protocol(&s.config, t, protocol, privacy, n_senders, 0)?.row.accuracy;
        Ok(())
    })
}

/// Loads a model checkpoint into `*out`.
#[no_mangle]
pub unsafe extern "C" fn fr_model_load(path: *const c_char, out: *mut *mut FrModel) -> FrStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null out handle"));
        }
        let model = load_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FrModel { model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fr_model_free(m: *mut FrModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Vocabulary size of a model, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fr_model_vocab_size(m: *const FrModel) -> usize {
    m.as_ref().map_or(0, |m| m.model.config.vocab_size)
}

/// Greedy continuation of `query` by the model alone, up to `max_new`
/// tokens.
#[no_mangle]
pub unsafe extern "C" fn fr_model_generate(
    m: *const FrModel,
    query: *const u32,
    query_len: usize,
    max_new: usize,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> FrStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| invalid("null model"))?;
        let q = TokenSeq::new(tokens_arg(query, query_len)?.to_vec());
        let t = standalone_decode(&m.model, &q, max_new)?;
        write_tokens(t.tokens(), out, cap, out_len)
    })
}
