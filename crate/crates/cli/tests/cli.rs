use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "hidden=8",
    "noise_dim=4",
    "channels=4",
    "res_blocks=1",
    "kernel=3",
    "max_len=6",
    "vocab_size=20",
    "code_critic_hidden=8",
    "generator_hidden=8",
    "batch_size=8",
    "critic_iters=1",
    "eval_every=3",
    "eval_samples=16",
    "checkpoint_every=3",
];

fn latext(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latext"))
        .args(args)
        .env("LATEXT_OUT_ROOT", root)
        .output()
        .expect("run latext")
}

fn ok(args: &[&str], root: &Path) -> String {
    let out = latext(args, root);
    assert!(
        out.status.success(),
        "latext {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn toy_corpus(root: &Path, n: usize, seed: u64) -> PathBuf {
    let name = format!("toy_{n}_{seed}.txt");
    ok(&["toy-corpus", "-n", &n.to_string(), "--seed", &seed.to_string(), "--out", &name], root);
    root.join(name)
}

fn train_tiny(root: &Path, kind: &str, out: &str) -> PathBuf {
    let corpus = toy_corpus(root, 80, 3);
    let corpus = corpus.to_str().unwrap();
    let mut args = vec!["train", "--corpus", corpus, "--references", corpus, "--kind", kind, "--iterations", "6", "--out", out, "--quiet"];
    for kv in TINY {
        args.extend(["--set", kv]);
    }
    ok(&args, root);
    root.join(out)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_writes_vocab_ids_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus(dir.path(), 40, 1);
    ok(&["prepare", "--corpus", corpus.to_str().unwrap(), "--vocab-size", "12", "--max-len", "5", "--out", "data"], dir.path());
    let data = dir.path().join("data");
    let stats = json(&data.join("stats.json"));
    assert_eq!(stats["sentences"], 40);
    assert_eq!(stats["vocab_size"], 12);
    assert_eq!(fs::read_to_string(data.join("vocab.txt")).unwrap().lines().count(), 12);
    let ids = fs::read_to_string(data.join("ids.txt")).unwrap();
    assert_eq!(ids.lines().count(), 40);
    assert!(ids.lines().all(|l| l.split(' ').count() <= 5));
}

#[test]
fn prepare_rejects_vocabulary_without_room_for_words() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus(dir.path(), 10, 1);
    let out = latext(&["prepare", "--corpus", corpus.to_str().unwrap(), "--vocab-size", "4", "--max-len", "5", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_kind_lists_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = latext(&["train", "--corpus", "x.txt", "--kind", "vae"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for kind in ["iwgan", "aae", "arae", "soft_gan", "latext_i", "latext_ii", "latext_iii"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn train_writes_artifacts_and_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "latext_ii", "run");
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["iteration"], 6);
    assert_eq!(manifest["kind"], "latext_ii");
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 2);
    assert!(manifest["best_bleu4"].is_number());
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count() >= 6, true);

    let ckpt = run.join("last.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    ok(&["generate", "--checkpoint", ckpt, "-n", "30", "--seed", "4", "--out", "a.txt"], dir.path());
    ok(&["generate", "--checkpoint", ckpt, "-n", "30", "--seed", "4", "--out", "b.txt"], dir.path());
    ok(&["generate", "--checkpoint", ckpt, "-n", "30", "--seed", "5", "--out", "c.txt"], dir.path());
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_eq!(read("a.txt").lines().count(), 30);
    assert_ne!(read("a.txt"), read("c.txt"));
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "arae", "run");
    let ckpt = run.join("ckpt_00000003.ckpt");
    ok(
        &["train", "--corpus", dir.path().join("toy_80_3.txt").to_str().unwrap(), "--resume", ckpt.to_str().unwrap(), "--out", "resumed", "--quiet"],
        dir.path(),
    );
    let log = |d: &str| -> Vec<Value> {
        fs::read_to_string(dir.path().join(d).join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .filter(|v: &Value| v["iteration"] == 6 && v.get("generator").is_some())
            .collect()
    };
    let (a, b) = (log("run"), log("resumed"));
    assert_eq!(a.len(), 1);
    assert_eq!(a, b);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "iwgan", "run");
    let path = run.join("last.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let out = latext(&["generate", "--checkpoint", path.to_str().unwrap(), "-n", "3", "--out", "x.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("x.txt").exists());
}

#[test]
fn evaluating_the_test_set_against_itself_gives_perfect_bleu() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_corpus(dir.path(), 60, 1);
    let test = toy_corpus(dir.path(), 20, 2);
    let (train, test) = (train.to_str().unwrap(), test.to_str().unwrap());
    let stdout = ok(
        &["evaluate", "--samples", test, "--train", train, "--test", test, "--desk", "--lm-epochs", "2", "--lm-hidden", "8", "--out", "r.json"],
        dir.path(),
    );
    let report = json(&dir.path().join("r.json"));
    assert_eq!(serde_json::from_str::<Value>(stdout.trim()).unwrap(), report);
    for n in 2..=5 {
        assert!((report["bleu"][n.to_string()].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(report["candidates"], 20);
    assert!(report["forward_ppl"].as_f64().unwrap() >= 1.0);
}

#[test]
fn demo_writes_both_series() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["demo-two-word", "--out", "demo.json", "--seeds", "1,2", "--steps", "5"], dir.path());
    let demo = json(&dir.path().join("demo.json"));
    assert_eq!(demo["series"]["iwgan"].as_array().unwrap().len(), 5);
    assert_eq!(demo["series"]["soft_gan"].as_array().unwrap().len(), 5);
    assert_eq!(demo["runs"].as_array().unwrap().len(), 2);
    assert!(demo["final"]["iwgan"].is_number());
}
