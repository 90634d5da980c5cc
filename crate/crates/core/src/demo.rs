//! Two-word language: how separable are real and generated samples for a
//! critic that sees one-hot reals versus one that sees soft-text reals?
//!
//! A tiny autoencoder is fitted to a corpus of the one-word sentences `a` and
//! `b`. Its decoder, fed random unit codes, produces the fake samples. One
//! critic is trained against one-hot reals, another against the decoder's
//! soft reconstructions of the same sentences, each with the gradient
//! penalty. The Wasserstein gap `E f(real) − E f(fake)` is tracked for both.

use autodiff::Var;
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_train_step, Autoencoder};
use crate::data::{OneHotBatch, TokenizedCorpus, Vocabulary};
use crate::error::Result;
use crate::gan::{gradient_penalty, sample_alpha, sample_noise};
use crate::nn::{Linear, ParamStore, Scope};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seeds: Vec<u64>,
    pub critic_steps: usize,
    pub ae_steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub critic_hidden: usize,
    pub gp_lambda: f64,
    pub critic_lr: f64,
    pub eval_batch: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            critic_steps: 500,
            ae_steps: 300,
            batch_size: 64,
            hidden: 8,
            critic_hidden: 32,
            gp_lambda: 10.0,
            critic_lr: 1e-3,
            eval_batch: 512,
        }
    }
}

/// Gap trajectories for one seed, one entry per critic step (measured before the update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub one_hot: Vec<f64>,
    pub soft: Vec<f64>,
    /// Gaps on a held-out batch after the last step.
    pub final_one_hot: f64,
    pub final_soft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub runs: Vec<SeedRun>,
    /// Per-step medians over seeds.
    pub one_hot_median: Vec<f64>,
    pub soft_median: Vec<f64>,
    pub final_one_hot_median: f64,
    pub final_soft_median: f64,
}

impl DemoReport {
    pub fn one_hot_exceeds_soft(&self) -> bool {
        self.final_one_hot_median > self.final_soft_median
    }

    pub fn summary(&self) -> String {
        format!(
            "median final gap over {} seeds after {} critic steps: one-hot {:.6}, soft-text {:.6}, one-hot > soft-text: {}",
            self.runs.len(),
            self.config.critic_steps,
            self.final_one_hot_median,
            self.final_soft_median,
            self.one_hot_exceeds_soft()
        )
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Critic {
    layers: [Linear; 3],
}

impl Critic {
    fn new(name: &str, input: usize, hidden: usize) -> Self {
        Self {
            layers: [
                Linear::new(format!("{name}.fc1"), input, hidden),
                Linear::new(format!("{name}.fc2"), hidden, hidden),
                Linear::new(format!("{name}.fc3"), hidden, 1),
            ],
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    fn forward(&self, s: &Scope, steps: &[Var]) -> Var {
        let x = Var::concat_cols(steps);
        let h = self.layers[0].forward(s, &x).leaky_relu(0.2);
        let h = self.layers[1].forward(s, &h).leaky_relu(0.2);
        self.layers[2].forward(s, &h)
    }

    fn gap(&self, store: &ParamStore, real: &[Array2<f64>], fake: &[Array2<f64>]) -> f64 {
        let s = Scope::frozen(store);
        let f = |x: &[Array2<f64>]| {
            let v: Vec<Var> = x.iter().cloned().map(Var::constant).collect();
            self.forward(&s, &v).mean_all().item()
        };
        f(real) - f(fake)
    }

    /// One WGAN-GP step; returns the gap before the update.
    fn step(
        &self,
        store: &mut ParamStore,
        adam: &mut Adam,
        real: &[Array2<f64>],
        fake: &[Array2<f64>],
        alpha: &Array2<f64>,
        lambda: f64,
    ) -> Result<f64> {
        let (gap, grads) = {
            let s = Scope::bind(store, |_| true);
            let r: Vec<Var> = real.iter().cloned().map(Var::constant).collect();
            let f: Vec<Var> = fake.iter().cloned().map(Var::constant).collect();
            let real_score = self.forward(&s, &r).mean_all();
            let fake_score = self.forward(&s, &f).mean_all();
            let gp = gradient_penalty(|p| self.forward(&s, p), &r, &f, alpha, lambda)?;
            let gap = real_score.item() - fake_score.item();
            let loss = real_score.neg().add(&fake_score).add(&gp);
            (gap, s.grads(&loss))
        };
        adam.step(store, &grads);
        Ok(gap)
    }
}

fn corpus() -> (Vocabulary, TokenizedCorpus) {
    let sents: Vec<Vec<String>> = vec![vec!["a".into()], vec!["b".into()]];
    let vocab = Vocabulary::build(&sents, 6).expect("two-word vocabulary");
    let corpus = TokenizedCorpus::new(&vocab, &sents, 2).expect("two-word corpus");
    (vocab, corpus)
}

fn run_seed(cfg: &DemoConfig, seed: u64) -> Result<SeedRun> {
    let (vocab, corpus) = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ae = Autoencoder::new(vocab.len(), cfg.hidden, corpus.max_len);
    let mut ae_params = ParamStore::new();
    ae.init(&mut ae_params, &mut rng);
    let mut ae_opt = Adam::new(AdamConfig::new(1e-3, 0.9, 0.999));
    for i in 0..cfg.ae_steps {
        let x = corpus.sample_batch(&mut rng, cfg.batch_size);
        ae_train_step(&ae, &mut ae_params, &mut ae_opt, &x, 0.1, &mut rng, i as u64)?;
    }
    let frozen = Scope::frozen(&ae_params);
    let soft_of = |x: &OneHotBatch| -> Vec<Array2<f64>> {
        let code = ae.encode_graph(&frozen, x);
        ae.decode_soft_graph(&frozen, &code).iter().map(|v| v.value().clone()).collect()
    };
    let fake_of = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Array2<f64>> {
        let z = sample_noise(rng, n, cfg.hidden, true);
        ae.decode_soft_graph(&frozen, &Var::constant(z.0)).iter().map(|v| v.value().clone()).collect()
    };

    let input = corpus.max_len * vocab.len();
    let one_hot_critic = Critic::new("demo.one_hot", input, cfg.critic_hidden);
    let soft_critic = Critic::new("demo.soft", input, cfg.critic_hidden);
    let mut store = ParamStore::new();
    one_hot_critic.init(&mut store, &mut rng);
    soft_critic.init(&mut store, &mut rng);
    let gan = AdamConfig::new(cfg.critic_lr, 0.5, 0.9);
    let (mut opt_one_hot, mut opt_soft) = (Adam::new(gan), Adam::new(gan));

    let mut one_hot = Vec::with_capacity(cfg.critic_steps);
    let mut soft = Vec::with_capacity(cfg.critic_steps);
    for _ in 0..cfg.critic_steps {
        // Both critics see the same sentences, fakes and mixing weights.
        let x = corpus.sample_batch(&mut rng, cfg.batch_size);
        let fake = fake_of(&mut rng, cfg.batch_size);
        let alpha = sample_alpha(&mut rng, cfg.batch_size);
        one_hot.push(one_hot_critic.step(&mut store, &mut opt_one_hot, &x.steps(), &fake, &alpha, cfg.gp_lambda)?);
        soft.push(soft_critic.step(&mut store, &mut opt_soft, &soft_of(&x), &fake, &alpha, cfg.gp_lambda)?);
    }
    let x = corpus.sample_batch(&mut rng, cfg.eval_batch);
    let fake = fake_of(&mut rng, cfg.eval_batch);
    Ok(SeedRun {
        seed,
        final_one_hot: one_hot_critic.gap(&store, &x.steps(), &fake),
        final_soft: soft_critic.gap(&store, &soft_of(&x), &fake),
        one_hot,
        soft,
    })
}

pub fn two_word_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    if cfg.seeds.is_empty() || cfg.critic_steps == 0 || cfg.batch_size == 0 || cfg.eval_batch == 0 {
        return Err(crate::Error::Config("demo needs seeds, steps and batch sizes > 0".into()));
    }
    let runs = cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    let per_step = |pick: fn(&SeedRun) -> &Vec<f64>| -> Vec<f64> {
        (0..cfg.critic_steps)
            .map(|i| median(&runs.iter().map(|r| pick(r)[i]).collect::<Vec<_>>()))
            .collect()
    };
    Ok(DemoReport {
        one_hot_median: per_step(|r| &r.one_hot),
        soft_median: per_step(|r| &r.soft),
        final_one_hot_median: median(&runs.iter().map(|r| r.final_one_hot).collect::<Vec<_>>()),
        final_soft_median: median(&runs.iter().map(|r| r.final_soft).collect::<Vec<_>>()),
        config: cfg.clone(),
        runs,
    })
}
