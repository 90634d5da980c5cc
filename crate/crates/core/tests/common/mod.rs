#![allow(dead_code)]

use latext::data::{TokenizedCorpus, Vocabulary};
use latext::{ModelKind, ModelState, TrainingConfig};

/// Networks small enough for finite differences.
pub fn tiny_config(kind: ModelKind) -> TrainingConfig {
    let mut c = TrainingConfig::desk(kind);
    c.hidden = 5;
    c.noise_dim = 3;
    c.channels = 4;
    c.res_blocks = 1;
    c.kernel = 3;
    c.max_len = 4;
    c.code_critic_hidden = 5;
    c.generator_hidden = 5;
    c.batch_size = 3;
    c.critic_iters = 2;
    c
}

pub fn toy_data(n: usize, max_len: usize, seed: u64) -> (Vocabulary, TokenizedCorpus) {
    let sents = latext::toy::tokenized(n, seed);
    let vocab = Vocabulary::build(&sents, 20).unwrap();
    let corpus = TokenizedCorpus::new(&vocab, &sents, max_len).unwrap();
    (vocab, corpus)
}

pub fn tiny_state(kind: ModelKind) -> (ModelState, TokenizedCorpus) {
    let c = tiny_config(kind);
    let (vocab, corpus) = toy_data(50, c.max_len, 3);
    (ModelState::new(c, vocab).unwrap(), corpus)
}

