use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use fedrefine::harness::pipeline::{evaluate_protocol, model_configs};
use fedrefine::harness::{
    chance_level, gen_partitioned_qa, run_scenario, MediumChoice, Privacy, Protocol, ScenarioConfig, METRICS_FILE,
};
use fedrefine::lm::{prefill, TokenSeq, TransformerModel};
use fedrefine::netsim::read_csv;
use fedrefine::protocol::{MessageKind, MessageLog};
use fedrefine::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn variant(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&configs_dir().join("variants").join(format!("{name}.toml"))).unwrap()
}

#[test]
fn reference_config_round_trips() {
    let cfg = ScenarioConfig::load(&configs_dir().join("reference.toml")).unwrap();
    let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg, back);
    assert_eq!(cfg.senders.len(), 4);
    assert!(!cfg.variant().homogeneous);
}

#[test]
fn unknown_keys_and_bad_versions_are_config_errors() {
    let text = std::fs::read_to_string(configs_dir().join("variants/homo-cache.toml")).unwrap();
    let extra = format!("colour = \"red\"\n{text}");
    assert!(matches!(ScenarioConfig::from_toml(&extra), Err(Error::Config(_))));
    let bumped = text.replacen("schema_version = 1", "schema_version = 2", 1);
    assert!(matches!(ScenarioConfig::from_toml(&bumped), Err(Error::Config(_))));
    let unknown_model = text.replacen("receiver = \"recv\"", "receiver = \"ghost\"", 1);
    assert!(matches!(ScenarioConfig::from_toml(&unknown_model), Err(Error::Config(_))));
    let e = ScenarioConfig::load(Path::new("/nonexistent.toml")).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn variant_files_cover_both_axes() {
    let cases = [
        ("homo-token", true, MediumChoice::Token),
        ("homo-cache", true, MediumChoice::Cache),
        ("hetero-token", false, MediumChoice::Token),
        ("hetero-cache", false, MediumChoice::Cache),
    ];
    for (name, homogeneous, medium) in cases {
        let v = variant(name).variant();
        assert_eq!((v.homogeneous, v.medium), (homogeneous, medium), "{name}");
    }
}

#[test]
fn every_variant_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["homo-token", "homo-cache", "hetero-token", "hetero-cache"] {
        let cfg = variant(name);
        let out = dir.path().join(name);
        let run = run_scenario(&cfg, &out).unwrap();
        let k = cfg.senders.len();
        assert_eq!(run.rows[0].protocol, "standalone");
        assert!(run.rows.iter().any(|r| r.protocol == "token" && r.n_senders == k));
        assert_eq!(run.rows.iter().any(|r| r.protocol == "kv"), cfg.variant().medium == MediumChoice::Cache, "{name}");
        for r in &run.rows {
            assert!((0.0..=1.0).contains(&r.accuracy) && r.latency_s > 0.0, "{r:?}");
        }
        let on_disk = read_csv(std::fs::File::open(out.join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk.len(), run.rows.len());
        for f in ["messages.jsonl", "timelines.jsonl", "payload.json", "training.json", "vocab.json"] {
            assert!(out.join(f).exists(), "{name}: {f}");
        }
    }
}

#[test]
fn mixed_media_reports_the_configured_protocol() {
    let mut cfg = variant("hetero-cache");
    cfg.name = "mixed".into();
    cfg.media.insert("b".into(), MediumChoice::Token);
    assert_eq!(cfg.variant().medium, MediumChoice::Auto);
    let dir = tempfile::tempdir().unwrap();
    let run = run_scenario(&cfg, dir.path()).unwrap();
    assert!(run.rows.iter().any(|r| r.protocol == "mixed"));
    assert!(!run.rows.iter().any(|r| r.protocol == "kv"));
}

#[test]
fn zero_senders_yield_only_standalone() {
    let mut cfg = variant("hetero-cache");
    cfg.name = "solo".into();
    cfg.senders.clear();
    cfg.task.n_senders = 0;
    cfg.task.receiver_share = 1.0;
    cfg.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = run_scenario(&cfg, dir.path()).unwrap();
    assert_eq!(run.rows.len(), 1);
    assert_eq!((run.rows[0].protocol.as_str(), run.rows[0].n_senders), ("standalone", 0));
}

#[test]
fn senders_never_receive_query_tokens() {
    let cfg = variant("hetero-token");
    let dir = tempfile::tempdir().unwrap();
    let run = run_scenario(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("messages.jsonl")).unwrap();
    let log = MessageLog::read_jsonl(text.as_bytes()).unwrap();
    assert!(!log.is_empty());
    let mut requests = 0;
    for m in log.sender_bound(&cfg.receiver) {
        assert_eq!(m.kind, MessageKind::TaskRequest);
        assert!(m.tokens.is_none() && m.payload_bytes == 0, "{m:?}");
        requests += 1;
    }
    assert!(requests > 0);
    let t = run.trained;
    for privacy in [Privacy::Original, Privacy::Rephrased] {
        let r = evaluate_protocol(&cfg, &t, Protocol::Token, privacy, 2, 0).unwrap();
        assert!(r.log.sender_bound(&cfg.receiver).all(|m| m.tokens.is_none()));
    }
}

#[test]
fn untrained_receiver_is_at_chance() {
    // Value picked by an untrained model, restricted to value tokens, over
    // many independent initializations.
    let mut cfg = variant("hetero-cache");
    cfg.task.n_facts = 40;
    let qa = gen_partitioned_qa(&cfg.task).unwrap();
    let mc = model_configs(&cfg, &qa)[0].clone();
    let values: Vec<u32> = (0..qa.alphabet.n_values).map(|v| qa.alphabet.value(v)).collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let m = TransformerModel::init(mc.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for item in &qa.eval {
            let (_, logits) = prefill(&m, &TokenSeq::new(item.query.clone())).unwrap();
            let best = values.iter().copied().max_by(|a, b| logits[*a as usize].total_cmp(&logits[*b as usize])).unwrap();
            correct += usize::from(best == item.answer[0]);
            total += 1;
        }
    }
    let p = chance_level(&qa);
    let acc = correct as f64 / total as f64;
    let sigma = (p * (1.0 - p) / total as f64).sqrt();
    // Items sharing one initialization are correlated; allow a wide band.
    assert!((acc - p).abs() < 6.0 * sigma + 0.05, "accuracy {acc} vs chance {p}");
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedrefine"));
    c.current_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")).stdout(Stdio::null()).stderr(Stdio::null());
    c
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let s = cli().args(["--config", "/nonexistent.toml", "run"]).status().unwrap();
    assert_eq!(s.code(), Some(4));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\n").unwrap();
    let s = cli().arg("--config").arg(&bad).arg("generate").status().unwrap();
    assert_eq!(s.code(), Some(2));

    let v = "configs/variants/homo-cache.toml";
    let s = cli().args(["--config", v, "--out", out, "compare"]).status().unwrap();
    assert_eq!(s.code(), Some(4));

    let s = cli().args(["--config", v, "--out", out, "generate"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    assert!(dir.path().join("homo-cache/task.json").exists());

    let s = cli().args(["--config", v, "--out", out, "train", "fusers"]).status().unwrap();
    assert_eq!(s.code(), Some(4));
    let s = cli().args(["--config", v, "--out", out, "train", "models"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    let s = cli().args(["--config", v, "--out", out, "train", "fusers"]).status().unwrap();
    assert_eq!(s.code(), Some(0));

    let o = cli().args(["--config", v, "--out", out, "compare", "--senders", "1", "--medium", "auto"]).stdout(Stdio::piped()).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert!(rows.iter().all(|r| r.n_senders == 1 && r.protocol == "auto"));

    let s = cli().args(["--config", v, "--out", out, "plot"]).status().unwrap();
    assert_eq!(s.code(), Some(4));
    let s = cli().args(["--config", v, "--out", out, "run"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    let s = cli().args(["--config", v, "--out", out, "plot"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    assert!(dir.path().join("homo-cache/accuracy.svg").exists());
}
