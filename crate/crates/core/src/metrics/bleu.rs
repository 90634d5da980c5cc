//! Corpus BLEU without brevity penalty, and self-BLEU.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 5;

/// Counts of every k-gram, `k = 1..=max_order`, in one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    counts: Vec<HashMap<Vec<u32>, u32>>,
}

impl NGramProfile {
    pub fn new(tokens: &[u32], max_order: usize) -> Self {
        let counts = (1..=max_order)
            .map(|k| {
                let mut m = HashMap::new();
                for w in tokens.windows(k) {
                    *m.entry(w.to_vec()).or_insert(0) += 1;
                }
                m
            })
            .collect();
        Self { counts }
    }

    pub fn order(&self, k: usize) -> &HashMap<Vec<u32>, u32> {
        &self.counts[k - 1]
    }

    /// Number of k-grams, `max(0, len − k + 1)`.
    pub fn total(&self, k: usize) -> u32 {
        self.order(k).values().sum()
    }
}

/// Maps token strings to dense ids so n-grams hash cheaply.
#[derive(Default)]
struct Interner(HashMap<String, u32>);

impl Interner {
    fn ids(&mut self, s: &[String]) -> Vec<u32> {
        s.iter()
            .map(|t| {
                let next = self.0.len() as u32;
                *self.0.entry(t.clone()).or_insert(next)
            })
            .collect()
    }
}

fn check_order(n: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::Invalid(format!("BLEU order {n} outside 1..={MAX_ORDER}")));
    }
    Ok(())
}

/// Clipped matches and candidate k-gram totals per order, summed over candidates.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    matched: [u64; MAX_ORDER],
    total: [u64; MAX_ORDER],
}

impl Tally {
    fn add(&mut self, cand: &NGramProfile, n: usize, max_ref: impl Fn(usize, &[u32]) -> u32) {
        for k in 1..=n {
            for (g, &c) in cand.order(k) {
                self.matched[k - 1] += u64::from(c.min(max_ref(k, g)));
                self.total[k - 1] += u64::from(c);
            }
        }
    }

    fn score(&self, n: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matched[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matched[k] as f64 / self.total[k] as f64).ln();
        }
        (log_sum / n as f64).exp()
    }
}

/// Geometric mean of clipped k-gram precisions, `k = 1..=n`, over the whole
/// candidate corpus. A candidate k-gram is clipped at its largest count in any
/// single reference. An order with no matches gives 0.
pub fn bleu_n(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> Result<f64> {
    check_order(n)?;
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidate sentences".into()));
    }
    if references.is_empty() {
        return Err(Error::Invalid("no reference sentences".into()));
    }
    let mut interner = Interner::default();
    let mut max_counts: Vec<HashMap<Vec<u32>, u32>> = vec![HashMap::new(); n];
    for r in references {
        let p = NGramProfile::new(&interner.ids(r), n);
        for k in 1..=n {
            for (g, &c) in p.order(k) {
                let e = max_counts[k - 1].entry(g.clone()).or_insert(0);
                *e = (*e).max(c);
            }
        }
    }
    let mut tally = Tally::default();
    for c in candidates {
        let p = NGramProfile::new(&interner.ids(c), n);
        tally.add(&p, n, |k, g| max_counts[k - 1].get(g).copied().unwrap_or(0));
    }
    Ok(tally.score(n))
}

/// Optional random cap on the references used per hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefCap {
    pub max_refs: usize,
    pub seed: u64,
}

/// Largest and second-largest count of an n-gram across sentences.
#[derive(Debug, Clone, Copy)]
struct Top2 {
    best: u32,
    holder: usize,
    second: u32,
}

impl Top2 {
    fn push(&mut self, count: u32, idx: usize) {
        if count > self.best {
            self.second = self.best;
            self.best = count;
            self.holder = idx;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn excluding(&self, idx: usize) -> u32 {
        if self.holder == idx {
            self.second
        } else {
            self.best
        }
    }
}

/// Mean of `bleu_n([s_i], others, n)` over every sentence `s_i`.
pub fn self_bleu(sentences: &[Vec<String>], n: usize, cap: Option<RefCap>) -> Result<f64> {
    check_order(n)?;
    if sentences.len() < 2 {
        return Err(Error::Invalid(format!(
            "self-BLEU needs at least 2 sentences, got {}",
            sentences.len()
        )));
    }
    if let Some(cap) = cap {
        if cap.max_refs == 0 {
            return Err(Error::Invalid("reference cap must be positive".into()));
        }
        if cap.max_refs < sentences.len() - 1 {
            return capped_self_bleu(sentences, n, cap);
        }
    }
    let mut interner = Interner::default();
    let profiles: Vec<NGramProfile> = sentences.iter().map(|s| NGramProfile::new(&interner.ids(s), n)).collect();
    let mut tops: Vec<HashMap<&[u32], Top2>> = vec![HashMap::new(); n];
    for (i, p) in profiles.iter().enumerate() {
        for k in 1..=n {
            for (g, &c) in p.order(k) {
                tops[k - 1]
                    .entry(g.as_slice())
                    .or_insert(Top2 { best: 0, holder: usize::MAX, second: 0 })
                    .push(c, i);
            }
        }
    }
    let sum: f64 = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut t = Tally::default();
            t.add(p, n, |k, g| tops[k - 1][g].excluding(i));
            t.score(n)
        })
        .sum();
    Ok(sum / sentences.len() as f64)
}

fn capped_self_bleu(sentences: &[Vec<String>], n: usize, cap: RefCap) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cap.seed);
    let others = sentences.len() - 1;
    let mut sum = 0.0;
    for (i, h) in sentences.iter().enumerate() {
        let refs: Vec<Vec<String>> = sample(&mut rng, others, cap.max_refs)
            .into_iter()
            .map(|j| sentences[if j >= i { j + 1 } else { j }].clone())
            .collect();
        sum += bleu_n(std::slice::from_ref(h), &refs, n)?;
    }
    Ok(sum / sentences.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn hand_counted_bigram_case() {
        let b = bleu_n(&[s("a b c")], &[s("a b d")], 2).unwrap();
        assert!((b - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let x = vec![s("the dog runs"), s("a cat sleeps today")];
        assert_eq!(bleu_n(&x, &x, 3).unwrap(), 1.0);
        assert_eq!(bleu_n(&[s("x y z")], &x, 1).unwrap(), 0.0);
    }

    #[test]
    fn clipping_uses_single_reference_maximum() {
        // "a" appears once in each reference, so four candidate "a"s clip to one.
        let b = bleu_n(&[s("a a a a")], &[s("a b"), s("b a")], 1).unwrap();
        assert!((b - 0.25).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(bleu_n(&[s("a")], &[], 1).is_err());
        assert!(bleu_n(&[], &[s("a")], 1).is_err());
        assert!(bleu_n(&[s("a")], &[s("a")], 6).is_err());
        assert!(self_bleu(&[s("a")], 1, None).is_err());
    }

    #[test]
    fn self_bleu_copies_and_disjoint() {
        let copies = vec![s("a b c"); 4];
        assert_eq!(self_bleu(&copies, 3, None).unwrap(), 1.0);
        let mut more = copies.clone();
        more.push(s("x y z"));
        assert!(self_bleu(&more, 3, None).unwrap() < 1.0);
        let disjoint = vec![s("a b"), s("c d"), s("e f")];
        assert_eq!(self_bleu(&disjoint, 2, None).unwrap(), 0.0);
    }

    #[test]
    fn cap_at_or_above_population_is_exact() {
        let x = vec![s("a b c"), s("a b d"), s("b c d"), s("a c d")];
        let exact = self_bleu(&x, 2, None).unwrap();
        let capped = self_bleu(&x, 2, Some(RefCap { max_refs: 3, seed: 1 })).unwrap();
        assert_eq!(exact, capped);
        let sub = self_bleu(&x, 2, Some(RefCap { max_refs: 1, seed: 1 })).unwrap();
        assert!((0.0..=1.0).contains(&sub));
    }
}
