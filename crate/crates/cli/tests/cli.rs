use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tabeae_core::corpus::{load_corpus, CorpusFormat};
use tabeae_core::eval::read_predictions;
use tabeae_core::prompts::PromptRegistry;

fn tabeae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabeae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tabeae(args);
    assert!(
        out.status.success(),
        "tabeae {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Env {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["synth", "--seed", "0", "--n", "12", "--max-events", "3", "--out", s(&env.path("train.jsonl"))]);
        ok(&["synth", "--seed", "1", "--n", "6", "--max-events", "3", "--out", s(&env.path("dev.jsonl"))]);
        env
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let train = self.path("train.jsonl");
        let out = self.path(out);
        let mut args = vec!["train", "--data", s(&train), "--steps", "4", "--out", s(&out), "--quiet"];
        args.extend_from_slice(extra);
        tabeae(&args)
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&["synth", "--seed", "0", "--n", "50", "--out", s(&a)]);
    ok(&["synth", "--seed", "0", "--n", "50", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.jsonl");
    ok(&["synth", "--seed", "1", "--n", "50", "--out", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn synth_single_event_instances() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.jsonl");
    ok(&["synth", "--seed", "3", "--n", "30", "--max-events", "1", "--out", s(&p)]);
    let corpus = load_corpus(&p, CorpusFormat::NativeJsonl, None).unwrap();
    assert_eq!(corpus.len(), 30);
    assert!(corpus.iter().all(|x| x.num_events() == 1));
}

#[test]
fn synth_default_schema_loads_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.jsonl");
    ok(&["synth", "--out", s(&p)]);
    let reg = PromptRegistry::builtin_ace05();
    let corpus = load_corpus(&p, CorpusFormat::NativeJsonl, Some(&reg)).unwrap();
    assert_eq!(corpus.len(), 50);
}

#[test]
fn synth_rejects_zero_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabeae(&["synth", "--max-events", "0", "--out", s(&dir.path().join("a.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_manifest_checkpoint_and_metrics() {
    let env = Env::new();
    let out = env.train("run", &["--scheme", "multi-single", "--profile", "desk"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(env.path("run/manifest.json"));
    assert_eq!(m["scheme"], "multi-single");
    assert_eq!(m["profile"], "desk");
    assert_eq!(m["seeds"], serde_json::json!([0]));
    assert_eq!(m["train"]["steps"], 4);
    assert_eq!(m["registry"]["hash"], PromptRegistry::builtin_ace05().content_hash());
    for rel in ["run/seed-0/model.safetensors", "run/seed-0/metrics.jsonl", "run/registry.jsonl", "run/vocab.json", "run/summary.json"] {
        assert!(env.path(rel).is_file(), "{rel}");
    }
    let lines = std::fs::read_to_string(env.path("run/seed-0/metrics.jsonl")).unwrap();
    assert!(lines.lines().count() >= 1);
}

#[test]
fn unsupported_scheme_is_a_usage_error() {
    let env = Env::new();
    let out = env.train("run", &["--scheme", "single-multi"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for pair in ["single-single", "multi-multi", "multi-single"] {
        assert!(err.contains(pair), "{err}");
    }
    assert!(!env.path("run").exists());
}

#[test]
fn unsupported_scheme_in_config_is_a_usage_error() {
    let env = Env::new();
    std::fs::write(env.path("c.toml"), "scheme = \"single-multi\"\n").unwrap();
    let cfg = env.path("c.toml");
    let out = env.train("run", &["--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multi-single"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let env = Env::new();
    std::fs::write(env.path("c.toml"), "[train]\nstepz = 3\n").unwrap();
    let cfg = env.path("c.toml");
    let out = env.train("run", &["--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_training_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tabeae(&[
        "train",
        "--data",
        s(&dir.path().join("none.jsonl")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let env = Env::new();
    std::fs::write(
        env.path("c.toml"),
        "scheme = \"multi-multi\"\nseed = 9\n[train]\nsteps = 2\nbatch_size = 2\n[model]\nhidden = 32\n[ablation]\npet = false\n",
    )
    .unwrap();
    let cfg = env.path("c.toml");
    let train = env.path("train.jsonl");
    let out = env.path("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&train), "--out", s(&out), "--scheme", "single-single", "--no-saam", "-q"]);
    let m = json(env.path("run/manifest.json"));
    assert_eq!(m["scheme"], "single-single");
    assert_eq!(m["seeds"], serde_json::json!([9]));
    assert_eq!(m["train"]["steps"], 2);
    assert_eq!(m["train"]["batch_size"], 2);
    assert_eq!(m["model"]["hidden"], 32);
    assert_eq!(m["ablation"]["pet"], false);
    assert_eq!(m["ablation"]["saam"], false);
    assert_eq!(m["ablation"]["prompts"], true);
}

#[test]
fn five_seeds_give_five_checkpoints_and_a_summary() {
    let env = Env::new();
    let dev = env.path("dev.jsonl");
    let out = env.train("run", &["--seeds", "1,2,3,4,5", "--dev", s(&dev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for k in 1..=5 {
        assert!(env.path(&format!("run/seed-{k}/model.safetensors")).is_file());
    }
    let summary = json(env.path("run/summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 5);
    assert_eq!(summary["split"], "dev");
    let f1: Vec<f64> = runs.iter().map(|r| r["arg_c"]["f1"].as_f64().unwrap()).collect();
    let mean = f1.iter().sum::<f64>() / 5.0;
    let std = (f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((summary["arg_c_f1"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((summary["arg_c_f1"]["std"].as_f64().unwrap() - std).abs() < 1e-12);
}

#[test]
fn duplicate_seeds_are_rejected() {
    let env = Env::new();
    let out = env.train("run", &["--seeds", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_deterministic_across_worker_counts() {
    let env = Env::new();
    assert!(env.train("a", &["--seed", "7"]).status.success());
    assert!(env.train("b", &["--seed", "7", "--workers", "3"]).status.success());
    let a = std::fs::read(env.path("a/seed-7/model.safetensors")).unwrap();
    let b = std::fs::read(env.path("b/seed-7/model.safetensors")).unwrap();
    let tensors = |buf: &[u8]| {
        let n = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        buf[8 + n..].to_vec()
    };
    assert_eq!(tensors(&a), tensors(&b));
}

#[test]
fn eval_reports_three_tables_and_the_training_ablation() {
    let env = Env::new();
    assert!(env.train("run", &["--no-saam"]).status.success());
    let ckpt = env.path("run/seed-0/model.safetensors");
    let dev = env.path("dev.jsonl");
    let rep = env.path("rep");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dev), "--analyses", "buckets,overlap,distance", "--out", s(&rep)]);
    let r = json(env.path("rep/report.json"));
    let tables = r["report"]["buckets"].as_object().unwrap();
    assert_eq!(tables.len(), 3);
    for k in ["buckets", "overlap", "distance"] {
        assert!(tables.contains_key(k));
    }
    assert_eq!(r["ablation"]["saam"], false);
    assert_eq!(r["manifest"]["ablation"]["saam"], false);
    assert!(env.path("rep/distance.svg").is_file());
    assert!(env.path("rep/event_counts.svg").is_file());
    assert!(env.path("rep/predictions.jsonl").is_file());
}

#[test]
fn missing_checkpoint_leaves_no_report() {
    let env = Env::new();
    let dev = env.path("dev.jsonl");
    let rep = env.path("rep");
    let out = tabeae(&["eval", "--checkpoint", s(&env.path("nope.safetensors")), "--data", s(&dev), "--out", s(&rep)]);
    assert_ne!(out.status.code(), Some(0));
    assert_eq!(out.status.code(), Some(1));
    assert!(!rep.exists());
}

/// Rewrites the model configuration stored in a checkpoint header.
fn tamper(path: &Path, edit: impl FnOnce(&mut Value)) {
    let buf = std::fs::read(path).unwrap();
    let n = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
    let mut header: Value = serde_json::from_slice(&buf[8..8 + n]).unwrap();
    let meta = &mut header["__metadata__"];
    let mut cfg: Value = serde_json::from_str(meta["tabeae.model"].as_str().unwrap()).unwrap();
    edit(&mut cfg);
    meta["tabeae.model"] = Value::String(cfg.to_string());
    let mut h = serde_json::to_vec(&header).unwrap();
    while h.len() % 8 != 0 {
        h.push(b' ');
    }
    let mut out = (h.len() as u64).to_le_bytes().to_vec();
    out.extend(h);
    out.extend_from_slice(&buf[8 + n..]);
    std::fs::write(path, out).unwrap();
}

#[test]
fn mismatched_checkpoint_reports_a_shape_diff() {
    let env = Env::new();
    assert!(env.train("run", &[]).status.success());
    let ckpt = env.path("run/seed-0/model.safetensors");
    tamper(&ckpt, |c| c["decoder_layers"] = Value::from(3));
    let dev = env.path("dev.jsonl");
    let rep = env.path("rep");
    let out = tabeae(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dev), "--out", s(&rep)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("decoder.2."), "{err}");
    assert!(!rep.exists());
}

#[test]
fn predict_and_analyze_agree_with_eval() {
    let env = Env::new();
    assert!(env.train("run", &[]).status.success());
    let ckpt = env.path("run/seed-0/model.safetensors");
    let dev = env.path("dev.jsonl");
    let preds = env.path("preds.jsonl");
    ok(&["predict", "--checkpoint", s(&ckpt), "--data", s(&dev), "--out", s(&preds)]);
    read_predictions(&preds).unwrap();
    let a = env.path("a");
    ok(&["analyze", "--gold", s(&dev), "--pred", s(&preds), "--analyses", "overlap", "--out", s(&a)]);
    let e = env.path("e");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dev), "--analyses", "overlap", "--out", s(&e)]);
    let ra = json(env.path("a/report.json"));
    let re = json(env.path("e/report.json"));
    assert_eq!(ra["report"], re["report"]);
    assert_eq!(
        std::fs::read(&preds).unwrap(),
        std::fs::read(env.path("e/predictions.jsonl")).unwrap()
    );
}

#[test]
fn unknown_analysis_is_a_usage_error() {
    let env = Env::new();
    let dev = env.path("dev.jsonl");
    let out = tabeae(&["analyze", "--gold", s(&dev), "--pred", s(&dev), "--analyses", "depth", "--out", s(&env.path("a"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_runs_each_variant() {
    let env = Env::new();
    let train = env.path("train.jsonl");
    let out = env.path("abl");
    ok(&["ablate", "--data", s(&train), "--steps", "2", "--variants", "full,no-pet,no-prompts", "--out", s(&out), "-q"]);
    let table = std::fs::read_to_string(env.path("abl/ablation.md")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("w/o pet") && table.contains("w/o prompts"));
    assert_eq!(json(env.path("abl/no-pet/manifest.json"))["ablation"]["pet"], false);
    assert_eq!(json(env.path("abl/full/manifest.json"))["ablation"]["pet"], true);
}
