//! `latext`: prepare corpora, train, generate, evaluate, and run the two-word demo.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use latext::data::{load_corpus, load_lines, sentence_ids, TokenizedCorpus, Vocabulary};
use latext::demo::{two_word_demo, DemoConfig};
use latext::metrics::{evaluate, EvalOptions, LmConfig, RefCap};
use latext::training::{train, write_lines, TrainOptions, METRIC_LOG};
use latext::{checkpoint, ModelKind, ModelState, TrainingConfig};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "latext", version, about = "Adversarial text generation with soft-text and latent-code critics")]
struct Cli {
    /// Root that relative output paths are resolved against.
    #[arg(long, global = true, env = "LATEXT_OUT_ROOT", default_value = ".")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and encoded dataset from a raw corpus.
    Prepare(PrepareArgs),
    /// Train a model from a key=value config, with flag overrides.
    Train(TrainArgs),
    /// Sample sentences from a checkpoint.
    Generate(GenerateArgs),
    /// BLEU, self-BLEU and forward/reverse perplexity of a sample file.
    Evaluate(EvaluateArgs),
    /// Critic separability on a two-word language, one-hot versus soft-text reals.
    DemoTwoWord(DemoArgs),
    /// Write sentences from the built-in toy grammar.
    ToyCorpus(ToyArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
    /// Keep the original casing.
    #[arg(long)]
    keep_case: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value file; unspecified keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `prepare`.
    #[arg(long, conflicts_with = "corpus")]
    data: Option<PathBuf>,
    /// Raw training corpus, one sentence per line.
    #[arg(long, required_unless_present = "data")]
    corpus: Option<PathBuf>,
    /// Reference sentences for the periodic BLEU check.
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint; only `--iterations` may change its config.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    orders: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Small language models suited to toy corpora.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    lm_hidden: Option<usize>,
    #[arg(long)]
    lm_epochs: Option<usize>,
    #[arg(long)]
    lm_vocab_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cap on the references per self-BLEU hypothesis; exact when omitted.
    #[arg(long)]
    self_bleu_max_refs: Option<usize>,
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    iteration: Option<u64>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    match cli.command {
        Command::Prepare(a) => prepare(a, &resolve),
        Command::Train(a) => train_cmd(a, &resolve),
        Command::Generate(a) => generate(a, &resolve),
        Command::Evaluate(a) => evaluate_cmd(a, &resolve),
        Command::DemoTwoWord(a) => demo(a, &resolve),
        Command::ToyCorpus(a) => {
            let out = resolve(&a.out);
            make_parent(&out)?;
            write_lines(&out, &latext::toy::corpus(a.n, a.seed))?;
            println!("wrote {} sentences to {}", a.n, out.display());
            Ok(())
        }
    }
}

fn make_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn sha256_file(p: &Path) -> Result<String> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json(p: &Path, v: &serde_json::Value) -> Result<()> {
    make_parent(p)?;
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

fn prepare(a: PrepareArgs, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let sentences = load_corpus(&a.corpus, !a.keep_case)?;
    ensure!(!sentences.is_empty(), "corpus {} has no sentences", a.corpus.display());
    let vocab = Vocabulary::build(&sentences, a.vocab_size)?;
    let corpus = TokenizedCorpus::new(&vocab, &sentences, a.max_len)?;
    let out = resolve(&a.out);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    vocab.save(out.join("vocab.txt"))?;
    write_lines(&out.join("train.txt"), &sentences.iter().map(|s| join(s)).collect::<Vec<_>>())?;
    let ids: Vec<String> = sentences
        .iter()
        .map(|s| {
            let ids = sentence_ids(&vocab, s, a.max_len);
            ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        })
        .collect();
    write_lines(&out.join("ids.txt"), &ids)?;

    let tokens: usize = sentences.iter().map(Vec::len).sum();
    let unk = sentences.iter().flatten().filter(|t| !vocab.contains(t)).count();
    let truncated = sentences.iter().filter(|s| s.len() + 1 > a.max_len).count();
    let stats = json!({
        "corpus": a.corpus.display().to_string(),
        "corpus_sha256": sha256_file(&a.corpus)?,
        "sentences": corpus.len(),
        "tokens": tokens,
        "vocab_size": vocab.len(),
        "vocab_fingerprint": vocab.fingerprint(),
        "max_len": a.max_len,
        "truncated_sentences": truncated,
        "unk_tokens": unk,
        "lowercase": !a.keep_case,
    });
    write_json(&out.join("stats.json"), &stats)?;
    println!("{} sentences, vocabulary {} -> {}", corpus.len(), vocab.len(), out.display());
    Ok(())
}

fn build_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut c = TrainingConfig::default();
            c.apply_kv(&text)?;
            c
        }
        None => TrainingConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("override {kv:?} is not key=value"))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(k) = a.kind {
        c.kind = k;
    }
    if let Some(n) = a.iterations {
        c.iterations = n;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn train_cmd(a: TrainArgs, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let (mut state, sentences) = match &a.resume {
        Some(p) => {
            let mut s = checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            if let Some(n) = a.iterations {
                s.config.iterations = n;
            }
            let (_, sentences) = training_text(&a, &s.config)?;
            (s, sentences)
        }
        None => {
            let c = build_config(&a)?;
            let (vocab, sentences) = training_text(&a, &c)?;
            (ModelState::new(c, vocab)?, sentences)
        }
    };
    let c = state.config.clone();
    let corpus = TokenizedCorpus::new(&state.vocab, &sentences, c.max_len)?;

    let out = resolve(
        &a.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}-seed{}", c.kind, c.seed))),
    );
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let vocab_path = out.join("vocab.txt");
    state.vocab.save(&vocab_path)?;
    let config_path = out.join("config.kv");
    fs::write(&config_path, c.to_kv()).with_context(|| format!("writing {}", config_path.display()))?;

    let mut opts = TrainOptions::new(&out);
    opts.eval_seed = c.seed;
    if let Some(r) = &a.references {
        opts.references = load_corpus(r, c.lowercase)?;
    }
    let quiet = a.quiet;
    let every = (c.iterations / 20).max(1);
    let outcome = train(&mut state, &corpus, &opts, |r| {
        if !quiet && (r.iteration % every == 0 || r.iteration == c.iterations) {
            eprintln!(
                "iter {:>8} ae {:>10} critics {:?} gen {:.5}",
                r.iteration,
                r.ae.map_or("-".into(), |v| format!("{v:.5}")),
                r.critics,
                r.generator
            );
        }
    })?;

    let mut inputs = BTreeMap::new();
    for (name, p) in [("data", &a.data), ("corpus", &a.corpus), ("references", &a.references)] {
        if let Some(p) = p {
            let file = if name == "data" { p.join("train.txt") } else { p.clone() };
            inputs.insert(name, json!({"path": file.display().to_string(), "sha256": sha256_file(&file)?}));
        }
    }
    let mut config = serde_json::Map::new();
    for line in c.to_kv().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            config.insert(k.to_owned(), json!(v));
        }
    }
    let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
    let manifest = json!({
        "command": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": c.seed,
        "kind": c.kind.name(),
        "config": config,
        "config_file": config_path.display().to_string(),
        "inputs": inputs,
        "vocab": {"path": vocab_path.display().to_string(), "fingerprint": state.vocab.fingerprint()},
        "resumed_from": a.resume.as_ref().map(|p| p.display().to_string()),
        "iteration": state.iteration,
        "metric_log": outcome.metric_log.display().to_string(),
        "checkpoints": paths(&outcome.checkpoints),
        "last_checkpoint": outcome.last_checkpoint.as_ref().map(|p| p.display().to_string()),
        "best_checkpoint": outcome.best_checkpoint.as_ref().map(|p| p.display().to_string()),
        "best_bleu4": outcome.best_bleu4,
        "best_iteration": outcome.best_iteration,
        "samples": paths(&outcome.samples),
    });
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    ensure!(out.join(METRIC_LOG).exists(), "metric log missing");
    println!("trained {} to iteration {} -> {}", c.kind, state.iteration, manifest_path.display());
    Ok(())
}

/// Vocabulary and sentences from `--data` or `--corpus`.
fn training_text(a: &TrainArgs, c: &TrainingConfig) -> Result<(Vocabulary, Vec<Vec<String>>)> {
    if let Some(dir) = &a.data {
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        let sentences = load_corpus(dir.join("train.txt"), c.lowercase)?;
        return Ok((vocab, sentences));
    }
    let path = a.corpus.as_ref().context("no training data given")?;
    let sentences = load_corpus(path, c.lowercase)?;
    ensure!(!sentences.is_empty(), "corpus {} has no sentences", path.display());
    Ok((Vocabulary::build(&sentences, c.vocab_size)?, sentences))
}

fn generate(a: GenerateArgs, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let lines = state.generate_sentences(a.n, a.seed)?;
    let out = resolve(&a.out);
    make_parent(&out)?;
    write_lines(&out, &lines)?;
    let written = fs::read_to_string(&out)?.lines().count();
    ensure!(written == a.n, "wrote {written} lines, expected {}", a.n);
    println!("{} sentences -> {} (sha256 {})", a.n, out.display(), sha256_file(&out)?);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let samples = load_lines(&a.samples, true)?;
    let train = load_corpus(&a.train, true)?;
    let test = load_corpus(&a.test, true)?;
    ensure!(samples.len() >= 2, "need at least 2 samples for self-BLEU");
    let mut lm = if a.desk { LmConfig::desk() } else { LmConfig::default() };
    if let Some(h) = a.lm_hidden {
        lm.hidden = h;
    }
    if let Some(e) = a.lm_epochs {
        lm.max_epochs = e;
    }
    if let Some(v) = a.lm_vocab_size {
        lm.vocab_size = v;
    }
    if let Some(m) = a.max_len {
        lm.max_len = m;
    }
    lm.seed = a.seed;
    let opts = EvalOptions {
        orders: a.orders,
        self_bleu_cap: a.self_bleu_max_refs.map(|max_refs| RefCap { max_refs, seed: a.seed }),
        lm,
    };
    let mut report = evaluate(&samples, &train, &test, &opts)?;
    report.kind = a.kind.map(|k| k.name().to_owned());
    report.iteration = a.iteration;
    let out = resolve(&a.out);
    make_parent(&out)?;
    fs::write(&out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!("{}", report.to_json());
    Ok(())
}

fn demo(a: DemoArgs, resolve: &dyn Fn(&Path) -> PathBuf) -> Result<()> {
    let mut cfg = DemoConfig::default();
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(n) = a.steps {
        cfg.critic_steps = n;
    }
    let report = two_word_demo(&cfg)?;
    let out = resolve(&a.out);
    let per_seed: Vec<_> = report
        .runs
        .iter()
        .map(|r| json!({"seed": r.seed, "iwgan": r.one_hot, "soft_gan": r.soft, "final_iwgan": r.final_one_hot, "final_soft_gan": r.final_soft}))
        .collect();
    write_json(
        &out,
        &json!({
            "config": cfg,
            "series": {"iwgan": report.one_hot_median, "soft_gan": report.soft_median},
            "final": {"iwgan": report.final_one_hot_median, "soft_gan": report.final_soft_median},
            "runs": per_seed,
            "summary": report.summary(),
        }),
    )?;
    println!("{}", report.summary());
    Ok(())
}
