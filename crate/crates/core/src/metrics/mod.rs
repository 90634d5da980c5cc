//! Quality and diversity metrics for generated text.

pub mod bleu;
pub mod lm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu_n, self_bleu, NGramProfile, RefCap};
pub use lm::{forward_reverse_ppl, perplexity, train_lm, LanguageModel, LmConfig};

/// All metric families for one set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: Option<String>,
    pub iteration: Option<u64>,
    pub candidates: usize,
    pub references: usize,
    pub bleu: BTreeMap<usize, f64>,
    pub self_bleu: BTreeMap<usize, f64>,
    pub forward_ppl: f64,
    pub reverse_ppl: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub orders: Vec<usize>,
    pub self_bleu_cap: Option<RefCap>,
    pub lm: LmConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            orders: vec![2, 3, 4, 5],
            self_bleu_cap: None,
            lm: LmConfig::default(),
        }
    }
}

/// BLEU against the whole test set, self-BLEU of the samples, and forward/reverse perplexity.
pub fn evaluate(
    samples: &[Vec<String>],
    real_train: &[Vec<String>],
    real_test: &[Vec<String>],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if opts.orders.is_empty() {
        return Err(Error::Invalid("no BLEU orders requested".into()));
    }
    let mut bleu = BTreeMap::new();
    let mut self_b = BTreeMap::new();
    for &n in &opts.orders {
        bleu.insert(n, bleu_n(samples, real_test, n)?);
        self_b.insert(n, self_bleu(samples, n, opts.self_bleu_cap)?);
    }
    let (forward_ppl, reverse_ppl) = forward_reverse_ppl(real_train, real_test, samples, &opts.lm)?;
    Ok(MetricsReport {
        kind: None,
        iteration: None,
        candidates: samples.len(),
        references: real_test.len(),
        bleu,
        self_bleu: self_b,
        forward_ppl,
        reverse_ppl,
    })
}
