//! Per-kind update schedules.
//!
//! Each outer iteration runs the autoencoder step (kinds that own one), then
//! `k` repetitions of every critic the kind owns, then one generator step.
//! Critic losses that are minimized jointly over a critic and part of the
//! autoencoder apply the autoencoder-side gradient only on the last of the `k`
//! repetitions, so that side is updated once per iteration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::Var;
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autoencoder::{ae_train_step, SoftText};
use crate::config::{Group, ModelKind, TrainingConfig};
use crate::checkpoint;
use crate::data::{decode_ids, tokenize, OneHotBatch, TokenizedCorpus};
use crate::error::{Error, Result};
use crate::gan::{gradient_penalty, sample_alpha, sample_noise, NoiseBatch};
use crate::metrics::bleu_n;
use crate::model::{ModelState, Networks};
use crate::nn::Scope;

/// The update operations an outer iteration is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Ae,
    CriticText,
    CriticCodeAae,
    CriticCodeArae,
    CriticJoint,
    Generator,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Ae => "ae",
            StepKind::CriticText => "critic_text",
            StepKind::CriticCodeAae => "critic_code_aae",
            StepKind::CriticCodeArae => "critic_code_arae",
            StepKind::CriticJoint => "critic_joint",
            StepKind::Generator => "generator",
        }
    }

    /// Critic steps a kind runs `k` times per iteration, in order.
    pub fn critics_of(kind: ModelKind) -> &'static [StepKind] {
        use StepKind::*;
        match kind {
            ModelKind::Iwgan | ModelKind::SoftGan => &[CriticText],
            ModelKind::Aae => &[CriticCodeAae],
            ModelKind::Arae => &[CriticCodeArae],
            ModelKind::LatextI => &[CriticText, CriticCodeAae],
            ModelKind::LatextII => &[CriticText, CriticCodeArae],
            ModelKind::LatextIII => &[CriticJoint],
        }
    }

    /// Every step a kind runs, critics listed for both values of the last-repetition flag.
    pub fn all_for(kind: ModelKind) -> Vec<(StepKind, bool)> {
        let mut steps = Vec::new();
        if kind.has_autoencoder() {
            steps.push((StepKind::Ae, false));
        }
        for &c in StepKind::critics_of(kind) {
            steps.push((c, false));
            steps.push((c, true));
        }
        steps.push((StepKind::Generator, false));
        steps
    }

    /// Parameter groups this step updates. `last` marks the final critic repetition.
    pub fn groups(self, config: &TrainingConfig, last: bool) -> Vec<Group> {
        use Group::*;
        let kind = config.kind;
        match self {
            StepKind::Ae => vec![Encoder, Decoder],
            StepKind::CriticText => {
                let mut g = vec![TextCritic];
                if last && kind.has_autoencoder() && config.decoder_in_text_critic {
                    g.push(Decoder);
                }
                g
            }
            StepKind::CriticCodeAae => vec![CodeCritic],
            StepKind::CriticCodeArae => {
                let mut g = vec![CodeCritic];
                if last {
                    g.push(Encoder);
                }
                g
            }
            StepKind::CriticJoint => {
                let mut g = vec![JointCritic];
                if last {
                    g.extend([Encoder, Decoder]);
                }
                g
            }
            StepKind::Generator => match kind {
                ModelKind::Iwgan => vec![TextGenerator],
                ModelKind::Aae => vec![Encoder],
                ModelKind::Arae => vec![CodeGenerator],
                ModelKind::SoftGan => vec![Decoder],
                ModelKind::LatextI => vec![Encoder, Decoder],
                ModelKind::LatextII | ModelKind::LatextIII => vec![CodeGenerator, Decoder],
            },
        }
    }

    fn optimizer_for(self, group: Group) -> &'static str {
        match (self, group) {
            (StepKind::Ae, _) => "ae",
            (StepKind::Generator, _) => "gen",
            (_, Group::TextCritic) => "critic_t",
            (_, Group::CodeCritic) => "critic_c",
            (_, Group::JointCritic) => "critic_tc",
            _ => "critic_side",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Randomness a step consumes, drawn before the loss is built so the loss can
/// be re-evaluated exactly.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub x: OneHotBatch,
    pub z: Array2<f64>,
    pub alpha: Array2<f64>,
}

/// A scalar loss together with its named additive terms.
pub struct Loss {
    pub value: Var,
    pub terms: BTreeMap<&'static str, f64>,
}

impl Loss {
    pub fn item(&self) -> f64 {
        self.value.item()
    }
}

fn mean(v: &Var) -> Var {
    v.mean_all()
}

fn constant_steps(x: &OneHotBatch) -> Vec<Var> {
    x.steps().into_iter().map(Var::constant).collect()
}

/// Soft-text `x̃` and code `c` of a real batch, noise-free.
fn real_pair(nets: &Networks, s: &Scope, x: &OneHotBatch) -> (Vec<Var>, Var) {
    let c = nets.ae.encode_graph(s, x);
    let soft = nets.ae.decode_soft_graph(s, &c);
    (soft, c)
}

/// Generated text `x̂`, plus the synthetic code `ĉ` for kinds that have one.
pub fn synth_graph(nets: &Networks, kind: ModelKind, s: &Scope, z: &Var) -> Result<(Vec<Var>, Option<Var>)> {
    match kind {
        ModelKind::Iwgan => {
            check_width("text generator", nets.text_gen.input.input, z.cols())?;
            Ok((nets.text_gen.forward(s, z), None))
        }
        ModelKind::SoftGan | ModelKind::LatextI | ModelKind::Aae => {
            check_width("decoder code", nets.ae.code_dim(), z.cols())?;
            Ok((nets.ae.decode_soft_graph(s, z), None))
        }
        ModelKind::Arae | ModelKind::LatextII | ModelKind::LatextIII => {
            check_width("code generator", nets.code_gen.input.input, z.cols())?;
            let code = nets.code_gen.forward(s, z);
            Ok((nets.ae.decode_soft_graph(s, &code), Some(code)))
        }
    }
}

fn check_width(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what} expects noise width {expected}, got {got}")));
    }
    Ok(())
}

fn terms(pairs: &[(&'static str, &Var)]) -> BTreeMap<&'static str, f64> {
    pairs.iter().map(|(k, v)| (*k, v.item())).collect()
}

/// `−E[f_t(real)] + E[f_t(x̂)] + GP`, real being soft-text (one-hot for IWGAN).
pub fn text_critic_loss(nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    let critic = &nets.text_critic;
    let real = if c.kind == ModelKind::Iwgan {
        constant_steps(&inp.x)
    } else {
        real_pair(nets, s, &inp.x).0
    };
    let (fake, _) = synth_graph(nets, c.kind, s, &Var::constant(inp.z.clone()))?;
    let real_score = mean(&critic.forward(s, &real));
    let fake_score = mean(&critic.forward(s, &fake));
    let gp = gradient_penalty(|p| critic.forward(s, p), &real, &fake, &inp.alpha, c.gp_lambda)?;
    let value = real_score.neg().add(&fake_score).add(&gp);
    Ok(Loss {
        terms: terms(&[("real", &real_score), ("fake", &fake_score), ("penalty", &gp)]),
        value,
    })
}

/// `E[f_c(c)] − E[f_c(z)] + GP`; the prior sample plays the real role.
pub fn code_critic_aae_loss(nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    let critic = &nets.code_critic;
    let code = nets.ae.encode_graph(s, &inp.x);
    let z = Var::constant(inp.z.clone());
    check_width("code critic", nets.ae.code_dim(), z.cols())?;
    let code_score = mean(&critic.forward(s, &code));
    let prior_score = mean(&critic.forward(s, &z));
    let gp = gradient_penalty(|p| critic.forward(s, &p[0]), &[z], &[code], &inp.alpha, c.gp_lambda)?;
    let value = code_score.sub(&prior_score).add(&gp);
    Ok(Loss {
        terms: terms(&[("real", &prior_score), ("fake", &code_score), ("penalty", &gp)]),
        value,
    })
}

/// `−E[f_c(c)] + E[f_c(ĉ)] + GP`.
pub fn code_critic_arae_loss(nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    let critic = &nets.code_critic;
    let code = nets.ae.encode_graph(s, &inp.x);
    check_width("code generator", nets.code_gen.input.input, inp.z.ncols())?;
    let synth = nets.code_gen.forward(s, &Var::constant(inp.z.clone()));
    let real_score = mean(&critic.forward(s, &code));
    let fake_score = mean(&critic.forward(s, &synth));
    let gp = gradient_penalty(|p| critic.forward(s, &p[0]), &[code], &[synth], &inp.alpha, c.gp_lambda)?;
    let value = real_score.neg().add(&fake_score).add(&gp);
    Ok(Loss {
        terms: terms(&[("real", &real_score), ("fake", &fake_score), ("penalty", &gp)]),
        value,
    })
}

/// `−E[f(x̃, c)] + E[f(x̂, ĉ)] + GP` with one `α` per pair.
pub fn joint_critic_loss(nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    let critic = &nets.joint_critic;
    let (soft, code) = real_pair(nets, s, &inp.x);
    let (fake_text, fake_code) = synth_graph(nets, c.kind, s, &Var::constant(inp.z.clone()))?;
    let fake_code = fake_code.ok_or_else(|| Error::Invalid("joint critic needs a code generator".into()))?;
    let real: Vec<Var> = soft.into_iter().chain([code]).collect();
    let fake: Vec<Var> = fake_text.into_iter().chain([fake_code]).collect();
    let real_score = mean(&critic.forward_packed(s, &real));
    let fake_score = mean(&critic.forward_packed(s, &fake));
    let gp = gradient_penalty(|p| critic.forward_packed(s, p), &real, &fake, &inp.alpha, c.gp_lambda)?;
    let value = real_score.neg().add(&fake_score).add(&gp);
    Ok(Loss {
        terms: terms(&[("real", &real_score), ("fake", &fake_score), ("penalty", &gp)]),
        value,
    })
}

/// The kind's generator objective. No penalty terms.
pub fn generator_loss(nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    let z = Var::constant(inp.z.clone());
    let mut parts: Vec<(&'static str, Var)> = Vec::new();

    let text_critic = |steps: &[Var]| mean(&nets.text_critic.forward(s, steps));
    let code_critic = |v: &Var| mean(&nets.code_critic.forward(s, v));

    match c.kind {
        ModelKind::Iwgan => {
            let (fake, _) = synth_graph(nets, c.kind, s, &z)?;
            parts.push(("text_fake", text_critic(&fake).neg()));
            parts.push(("text_real", text_critic(&constant_steps(&inp.x))));
        }
        ModelKind::Aae => {
            check_width("code critic", nets.ae.code_dim(), z.cols())?;
            let code = nets.ae.encode_graph(s, &inp.x);
            parts.push(("code_prior", code_critic(&z)));
            parts.push(("code_real", code_critic(&code).neg()));
        }
        ModelKind::Arae => {
            let code = nets.ae.encode_graph(s, &inp.x);
            check_width("code generator", nets.code_gen.input.input, z.cols())?;
            let synth = nets.code_gen.forward(s, &z);
            parts.push(("code_fake", code_critic(&synth).neg()));
            parts.push(("code_real", code_critic(&code)));
        }
        ModelKind::SoftGan | ModelKind::LatextI | ModelKind::LatextII => {
            let (soft, code) = real_pair(nets, s, &inp.x);
            let (fake, synth) = synth_graph(nets, c.kind, s, &z)?;
            parts.push(("text_fake", text_critic(&fake).neg()));
            parts.push(("text_real", text_critic(&soft)));
            match c.kind {
                ModelKind::LatextI => {
                    parts.push(("code_prior", code_critic(&z)));
                    parts.push(("code_real", code_critic(&code).neg()));
                }
                ModelKind::LatextII => {
                    let synth = synth.expect("code generator output");
                    parts.push(("code_fake", code_critic(&synth).neg()));
                    parts.push(("code_real", code_critic(&code)));
                }
                _ => {}
            }
        }
        ModelKind::LatextIII => {
            let (soft, code) = real_pair(nets, s, &inp.x);
            let (fake, synth) = synth_graph(nets, c.kind, s, &z)?;
            let synth = synth.expect("code generator output");
            parts.push(("joint_fake", mean(&nets.joint_critic.forward(s, &fake, &synth)).neg()));
            parts.push(("joint_real", mean(&nets.joint_critic.forward(s, &soft, &code))));
        }
    }

    let value = parts
        .iter()
        .map(|(_, v)| v.clone())
        .reduce(|a, b| a.add(&b))
        .expect("at least one term");
    Ok(Loss {
        terms: parts.iter().map(|(k, v)| (*k, v.item())).collect(),
        value,
    })
}

/// Builds the loss of `step` for the state's kind.
pub fn step_loss(step: StepKind, nets: &Networks, c: &TrainingConfig, s: &Scope, inp: &StepInputs) -> Result<Loss> {
    match step {
        StepKind::Ae => Ok(Loss {
            value: nets.ae.reconstruction_graph(s, &inp.x, None),
            terms: BTreeMap::new(),
        }),
        StepKind::CriticText => text_critic_loss(nets, c, s, inp),
        StepKind::CriticCodeAae => code_critic_aae_loss(nets, c, s, inp),
        StepKind::CriticCodeArae => code_critic_arae_loss(nets, c, s, inp),
        StepKind::CriticJoint => joint_critic_loss(nets, c, s, inp),
        StepKind::Generator => generator_loss(nets, c, s, inp),
    }
}

/// Losses of one outer iteration. Critic entries hold the last repetition.
#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub ae: Option<f64>,
    pub critics: BTreeMap<&'static str, f64>,
    pub generator: f64,
    #[serde(skip)]
    pub trace: Vec<StepKind>,
}

impl IterationReport {
    pub fn all_finite(&self) -> bool {
        self.ae.is_none_or(f64::is_finite)
            && self.critics.values().all(|v| v.is_finite())
            && self.generator.is_finite()
    }
}

impl ModelState {
    pub fn noise_dim(&self) -> usize {
        self.config.effective_noise_dim()
    }

    /// Draws a real batch, prior noise and interpolation weights from the state's RNG.
    pub fn draw_inputs(&mut self, corpus: &TokenizedCorpus) -> Result<StepInputs> {
        self.check_corpus(corpus)?;
        let b = self.config.batch_size;
        let x = corpus.sample_batch(&mut self.rng, b);
        let (dim, normalize) = (self.noise_dim(), self.config.normalize_noise());
        let z = sample_noise(&mut self.rng, b, dim, normalize).0;
        let alpha = sample_alpha(&mut self.rng, b);
        Ok(StepInputs { x, z, alpha })
    }

    fn check_corpus(&self, corpus: &TokenizedCorpus) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if corpus.vocab_fingerprint != self.vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                expected: self.vocab.fingerprint(),
                found: corpus.vocab_fingerprint.clone(),
            });
        }
        if corpus.max_len != self.config.max_len {
            return Err(Error::Config(format!(
                "corpus max_len {} differs from config max_len {}",
                corpus.max_len, self.config.max_len
            )));
        }
        Ok(())
    }

    /// Reconstruction step with the scheduled code noise.
    pub fn ae_step(&mut self, x: &OneHotBatch) -> Result<f64> {
        let sigma = self.config.noise_std(self.iteration);
        let mut opt = self.optimizers.remove("ae").expect("ae optimizer");
        let out = ae_train_step(&self.nets.ae, &mut self.params, &mut opt, x, sigma, &mut self.rng, self.iteration);
        self.optimizers.insert("ae".into(), opt);
        out
    }

    /// One Adam step of `step` on its declared groups for these inputs.
    pub fn run_step(&mut self, step: StepKind, inp: &StepInputs, last: bool) -> Result<Loss> {
        let groups = step.groups(&self.config, last);
        for g in &groups {
            if !self.kind().owns(*g) {
                return Err(Error::Invalid(format!("{} does not own {g:?}", self.kind())));
            }
        }
        let (loss, grads) = {
            let s = Scope::bind(&self.params, |n| groups.iter().any(|g| g.contains(n)));
            let loss = step_loss(step, &self.nets, &self.config, &s, inp)?;
            if !loss.item().is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{step} loss"),
                    iteration: self.iteration,
                });
            }
            let grads = s.grads(&loss.value);
            // Keep the value but release the graph before parameters are written.
            let loss = Loss {
                value: loss.value.detach(),
                terms: loss.terms,
            };
            (loss, grads)
        };
        let mut by_opt: BTreeMap<&'static str, BTreeMap<String, Array2<f64>>> = BTreeMap::new();
        for (name, g) in grads {
            let group = Group::of(&name).expect("grouped parameter");
            by_opt.entry(step.optimizer_for(group)).or_default().insert(name, g);
        }
        for (opt, grads) in by_opt {
            let mut adam = self.optimizers.remove(opt).expect("optimizer slot");
            adam.step(&mut self.params, &grads);
            self.optimizers.insert(opt.to_owned(), adam);
        }
        Ok(loss)
    }

    pub fn critic_text_step(&mut self, inp: &StepInputs, last: bool) -> Result<Loss> {
        self.require(&[ModelKind::Iwgan, ModelKind::SoftGan, ModelKind::LatextI, ModelKind::LatextII], "text critic")?;
        self.run_step(StepKind::CriticText, inp, last)
    }

    pub fn critic_code_step_aae(&mut self, inp: &StepInputs) -> Result<Loss> {
        self.require(&[ModelKind::Aae, ModelKind::LatextI], "prior-matching code critic")?;
        self.run_step(StepKind::CriticCodeAae, inp, false)
    }

    pub fn critic_code_step_arae(&mut self, inp: &StepInputs, last: bool) -> Result<Loss> {
        self.require(&[ModelKind::Arae, ModelKind::LatextII], "generated-code critic")?;
        self.run_step(StepKind::CriticCodeArae, inp, last)
    }

    pub fn critic_joint_step(&mut self, inp: &StepInputs, last: bool) -> Result<Loss> {
        self.require(&[ModelKind::LatextIII], "joint critic")?;
        self.run_step(StepKind::CriticJoint, inp, last)
    }

    pub fn generator_step(&mut self, inp: &StepInputs) -> Result<Loss> {
        self.run_step(StepKind::Generator, inp, false)
    }

    fn require(&self, kinds: &[ModelKind], what: &str) -> Result<()> {
        if kinds.contains(&self.kind()) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{} has no {what}", self.kind())))
        }
    }

    /// One outer iteration: AE step, `k` repetitions per critic, one generator step.
    pub fn train_iteration(&mut self, corpus: &TokenizedCorpus) -> Result<IterationReport> {
        self.check_corpus(corpus)?;
        let k = self.config.critic_iters;
        let mut trace = Vec::new();
        let mut ae = None;
        if self.kind().has_autoencoder() {
            let x = corpus.sample_batch(&mut self.rng, self.config.batch_size);
            ae = Some(self.ae_step(&x)?);
            trace.push(StepKind::Ae);
        }
        let mut critics = BTreeMap::new();
        for &critic in StepKind::critics_of(self.kind()) {
            for rep in 0..k {
                let inp = self.draw_inputs(corpus)?;
                let loss = self.run_step(critic, &inp, rep + 1 == k)?;
                critics.insert(critic.name(), loss.item());
                trace.push(critic);
            }
        }
        let inp = self.draw_inputs(corpus)?;
        let generator = self.generator_step(&inp)?.item();
        trace.push(StepKind::Generator);
        self.iteration += 1;
        Ok(IterationReport {
            iteration: self.iteration,
            ae,
            critics,
            generator,
            trace,
        })
    }

    /// Generated soft text `x̂` for a noise batch.
    pub fn synth_text(&self, z: &NoiseBatch) -> Result<SoftText> {
        let s = Scope::frozen(&self.params);
        let (steps, _) = synth_graph(&self.nets, self.kind(), &s, &Var::constant(z.0.clone()))?;
        Ok(SoftText::from_vars(&steps))
    }

    /// Hard token ids for a noise batch: greedy decoding, or per-step argmax for IWGAN.
    pub fn generate_ids(&self, z: &NoiseBatch) -> Result<Array2<usize>> {
        let s = Scope::frozen(&self.params);
        match self.kind() {
            ModelKind::Iwgan => Ok(self.synth_text(z)?.argmax_ids()),
            k if k.noise_is_code() => {
                check_width("decoder code", self.nets.ae.code_dim(), z.0.ncols())?;
                Ok(self.nets.ae.decode_greedy_with(&s, &z.0))
            }
            _ => {
                check_width("code generator", self.nets.code_gen.input.input, z.0.ncols())?;
                let code = self.nets.code_gen.forward(&s, &Var::constant(z.0.clone()));
                Ok(self.nets.ae.decode_greedy_with(&s, code.value()))
            }
        }
    }

    /// Exactly `n` sentences from a dedicated RNG, leaving the training RNG untouched.
    pub fn generate_sentences(&self, n: usize, seed: u64) -> Result<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chunk = self.config.batch_size.max(1);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let m = chunk.min(n - out.len());
            let z = sample_noise(&mut rng, m, self.noise_dim(), self.config.normalize_noise());
            let ids = self.generate_ids(&z)?;
            for row in ids.rows() {
                out.push(decode_ids(&self.vocab, &row.to_vec())?);
            }
        }
        Ok(out)
    }
}

/// Where and how [`train`] writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// References for the periodic BLEU check; evaluation is skipped when empty.
    pub references: Vec<Vec<String>>,
    /// Seed of the evaluation sampler, independent of the training RNG.
    pub eval_seed: u64,
    pub log_every: u64,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            references: Vec::new(),
            eval_seed: 0,
            log_every: 1,
        }
    }
}

/// Artifacts produced by a training run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainOutcome {
    pub metric_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
    pub best_bleu4: Option<f64>,
    pub best_iteration: Option<u64>,
}

pub const METRIC_LOG: &str = "metrics.jsonl";

fn append_line(file: &mut File, path: &Path, value: &serde_json::Value) -> Result<()> {
    writeln!(file, "{value}").map_err(|e| Error::io(path, e))
}

/// Runs outer iterations until `config.iterations`, starting from the state's
/// current iteration. Aborts on a non-finite loss after saving `failed.ckpt`.
pub fn train(
    state: &mut ModelState,
    corpus: &TokenizedCorpus,
    opts: &TrainOptions,
    mut on_iteration: impl FnMut(&IterationReport),
) -> Result<TrainOutcome> {
    state.check_corpus(corpus)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let log_path = opts.out_dir.join(METRIC_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut out = TrainOutcome {
        metric_log: log_path.clone(),
        ..TrainOutcome::default()
    };
    let c = state.config.clone();
    while state.iteration < c.iterations {
        let report = match state.train_iteration(corpus) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                let path = opts.out_dir.join("failed.ckpt");
                checkpoint::save(state, &path)?;
                append_line(
                    &mut log,
                    &log_path,
                    &serde_json::json!({"iteration": state.iteration, "error": e.to_string()}),
                )?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let it = report.iteration;
        if opts.log_every > 0 && it % opts.log_every == 0 {
            append_line(&mut log, &log_path, &serde_json::to_value(&report).expect("report serializes"))?;
        }
        on_iteration(&report);

        if c.eval_every > 0 && it % c.eval_every == 0 {
            let samples = state.generate_sentences(c.eval_samples, opts.eval_seed.wrapping_add(it))?;
            let path = opts.out_dir.join(format!("samples_{it:08}.txt"));
            write_lines(&path, &samples)?;
            out.samples.push(path);
            if !opts.references.is_empty() {
                let cand: Vec<Vec<String>> = samples.iter().map(|s| tokenize(s, false)).collect();
                let mut bleu = BTreeMap::new();
                for n in 2..=5 {
                    bleu.insert(format!("bleu{n}"), bleu_n(&cand, &opts.references, n)?);
                }
                let b4 = bleu["bleu4"];
                append_line(&mut log, &log_path, &serde_json::json!({"iteration": it, "eval": bleu}))?;
                if out.best_bleu4.is_none_or(|b| b4 > b) {
                    let path = opts.out_dir.join("best.ckpt");
                    checkpoint::save(state, &path)?;
                    out.best_bleu4 = Some(b4);
                    out.best_iteration = Some(it);
                    out.best_checkpoint = Some(path);
                }
            }
        }
        if c.checkpoint_every > 0 && it % c.checkpoint_every == 0 {
            let path = opts.out_dir.join(format!("ckpt_{it:08}.ckpt"));
            checkpoint::save(state, &path)?;
            out.checkpoints.push(path);
        }
    }
    let last = opts.out_dir.join("last.ckpt");
    checkpoint::save(state, &last)?;
    out.last_checkpoint = Some(last);
    Ok(out)
}

/// One sentence per line, newline-terminated.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
