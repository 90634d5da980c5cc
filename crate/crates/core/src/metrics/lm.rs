//! Recurrent language model used for forward and reverse perplexity.

use autodiff::Var;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::one_hot_rows;
use crate::data::{OneHotBatch, TokenizedCorpus, Vocabulary, PAD, SOS};
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, ParamStore, Scope};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub heldout_fraction: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            patience: 3,
            heldout_fraction: 0.1,
            vocab_size: 10_000,
            max_len: 15,
            seed: 1,
        }
    }
}

impl LmConfig {
    /// Small model for toy corpora.
    pub fn desk() -> Self {
        Self {
            hidden: 64,
            max_epochs: 40,
            vocab_size: 20,
            max_len: 8,
            ..Self::default()
        }
    }
}

/// LSTM next-token model over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub vocab: Vocabulary,
    pub cell: LstmCell,
    pub output: Linear,
    pub params: ParamStore,
    /// Held-out perplexity before training and after each epoch.
    pub heldout_history: Vec<f64>,
}

impl LanguageModel {
    pub fn new(vocab: Vocabulary, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let v = vocab.len();
        let cell = LstmCell::new("lm.lstm", v, hidden);
        let output = Linear::new("lm.out", hidden, v);
        let mut params = ParamStore::new();
        cell.init(&mut params, rng);
        output.init(&mut params, rng);
        Self {
            vocab,
            cell,
            output,
            params,
            heldout_history: Vec::new(),
        }
    }

    /// Assigns probability `1/V` to every token at every step.
    pub fn uniform(vocab: Vocabulary, hidden: usize) -> Self {
        let mut lm = Self::new(vocab, hidden, &mut ChaCha8Rng::seed_from_u64(0));
        for name in ["lm.out.w", "lm.out.b"] {
            lm.params.get_mut(name).expect("output layer").fill(0.0);
        }
        lm
    }

    /// Summed negative log-likelihood of non-pad targets, and their count.
    fn nll_graph(&self, s: &Scope, x: &OneHotBatch) -> (Var, usize) {
        let b = x.batch_size();
        let mut prev = one_hot_rows(b, self.vocab.len(), SOS);
        let (mut h, mut c) = self.cell.zero_state(b);
        let mut total: Option<Var> = None;
        let mut count = 0;
        for t in 0..x.max_len() {
            (h, c) = self.cell.step(s, &Var::constant(prev), (&h, &c));
            let logp = self.output.forward(s, &h).log_softmax_rows();
            let mut target = x.step(t);
            for (mut row, &id) in target.rows_mut().into_iter().zip(x.ids().column(t)) {
                if id == PAD {
                    row.fill(0.0);
                } else {
                    count += 1;
                }
            }
            let picked = logp.mul_const(std::rc::Rc::new(target)).sum_all().neg();
            total = Some(match total {
                Some(acc) => acc.add(&picked),
                None => picked,
            });
            prev = x.step(t);
        }
        (total.unwrap_or_else(|| Var::scalar(0.0)), count)
    }

    fn check_corpus(&self, corpus: &TokenizedCorpus) -> Result<()> {
        if corpus.vocab_fingerprint != self.vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                expected: self.vocab.fingerprint(),
                found: corpus.vocab_fingerprint.clone(),
            });
        }
        Ok(())
    }

    /// Total NLL and token count of a corpus, `<eos>` included and `<pad>` excluded.
    pub fn nll(&self, corpus: &TokenizedCorpus) -> Result<(f64, usize)> {
        self.check_corpus(corpus)?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let s = Scope::frozen(&self.params);
        let idx: Vec<usize> = (0..corpus.len()).collect();
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in idx.chunks(256) {
            let (nll, n) = self.nll_graph(&s, &corpus.batch(chunk));
            sum += nll.item();
            count += n;
        }
        Ok((sum, count))
    }
}

/// `exp` of the mean per-token negative log-likelihood.
pub fn perplexity(lm: &LanguageModel, corpus: &TokenizedCorpus) -> Result<f64> {
    let (sum, count) = lm.nll(corpus)?;
    Ok((sum / count as f64).exp())
}

fn subset(corpus: &TokenizedCorpus, idx: &[usize]) -> TokenizedCorpus {
    TokenizedCorpus {
        sentences: idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
        ..corpus.clone()
    }
}

/// Teacher-forced training with held-out early stopping; returns the best epoch's weights.
pub fn train_lm(corpus: &TokenizedCorpus, vocab: &Vocabulary, cfg: &LmConfig) -> Result<LanguageModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::Config("language model batch_size and hidden must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.heldout_fraction) {
        return Err(Error::Config("heldout_fraction must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lm = LanguageModel::new(vocab.clone(), cfg.hidden, &mut rng);
    lm.check_corpus(corpus)?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_held = ((corpus.len() as f64 * cfg.heldout_fraction).round() as usize).min(corpus.len() - 1);
    let (held_idx, train_idx) = order.split_at(n_held);
    let train = subset(corpus, train_idx);
    // With too little data to split, stop on training perplexity instead.
    let held = if held_idx.is_empty() { train.clone() } else { subset(corpus, held_idx) };

    let mut adam = Adam::new(AdamConfig::new(cfg.lr, 0.9, 0.999));
    let mut best = perplexity(&lm, &held)?;
    let mut best_params = lm.params.clone();
    let mut history = vec![best];
    let mut stale = 0;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.max_epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let grads = {
                let s = Scope::bind(&lm.params, |_| true);
                let (nll, count) = lm.nll_graph(&s, &train.batch(chunk));
                let loss = nll.scale(1.0 / count.max(1) as f64);
                if !loss.item().is_finite() {
                    return Err(Error::NonFinite {
                        what: "language model loss".into(),
                        iteration: history.len() as u64,
                    });
                }
                s.grads(&loss)
            };
            adam.step(&mut lm.params, &grads);
        }
        let ppl = perplexity(&lm, &held)?;
        history.push(ppl);
        if ppl < best {
            best = ppl;
            best_params = lm.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    lm.params = best_params;
    lm.heldout_history = history;
    Ok(lm)
}

/// Trains on raw sentences with a vocabulary induced from them.
pub fn train_lm_on(sentences: &[Vec<String>], cfg: &LmConfig) -> Result<LanguageModel> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocabulary::build(sentences, cfg.vocab_size)?;
    let corpus = TokenizedCorpus::new(&vocab, sentences, cfg.max_len)?;
    train_lm(&corpus, &vocab, cfg)
}

/// Perplexity of raw sentences, out-of-vocabulary tokens mapped to `<unk>`.
pub fn perplexity_of(lm: &LanguageModel, sentences: &[Vec<String>], max_len: usize) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let corpus = TokenizedCorpus::new(&lm.vocab, sentences, max_len)?;
    perplexity(lm, &corpus)
}

/// Forward PPL: an LM trained on real data scoring the samples.
/// Reverse PPL: an LM trained on the samples, with their own vocabulary, scoring real test data.
pub fn forward_reverse_ppl(
    real_train: &[Vec<String>],
    real_test: &[Vec<String>],
    synthetic: &[Vec<String>],
    cfg: &LmConfig,
) -> Result<(f64, f64)> {
    for (what, c) in [("real_train", real_train), ("real_test", real_test), ("synthetic", synthetic)] {
        if c.is_empty() {
            return Err(Error::Invalid(format!("{what} corpus is empty")));
        }
    }
    let real_lm = train_lm_on(real_train, cfg)?;
    let forward = perplexity_of(&real_lm, synthetic, cfg.max_len)?;
    let synth_lm = train_lm_on(synthetic, cfg)?;
    let reverse = perplexity_of(&synth_lm, real_test, cfg.max_len)?;
    Ok((forward, reverse))
}
