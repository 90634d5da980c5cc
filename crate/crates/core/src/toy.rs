//! A small regular grammar for desk-scale runs: `det [adj] noun verb [adv]`.
//!
//! Sixteen words, so with the four specials the vocabulary is exactly 20.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DETERMINERS: &[&str] = &["the", "a"];
const ADJECTIVES: &[&str] = &["big", "small", "red"];
const NOUNS: &[&str] = &["dog", "cat", "bird", "fish"];
const VERBS: &[&str] = &["runs", "sleeps", "jumps", "swims"];
const ADVERBS: &[&str] = &["quickly", "slowly", "today"];

/// Every word the grammar can emit.
pub fn words() -> Vec<&'static str> {
    [DETERMINERS, ADJECTIVES, NOUNS, VERBS, ADVERBS].concat()
}

/// Longest sentence the grammar produces.
pub const MAX_WORDS: usize = 5;

pub fn sentence<R: Rng>(rng: &mut R) -> String {
    let pick = |rng: &mut R, set: &[&'static str]| set[rng.random_range(0..set.len())];
    let mut s = vec![pick(rng, DETERMINERS)];
    if rng.random_bool(0.5) {
        s.push(pick(rng, ADJECTIVES));
    }
    s.push(pick(rng, NOUNS));
    s.push(pick(rng, VERBS));
    if rng.random_bool(0.5) {
        s.push(pick(rng, ADVERBS));
    }
    s.join(" ")
}

/// `corpus` split into tokens.
pub fn tokenized(n: usize, seed: u64) -> Vec<Vec<String>> {
    corpus(n, seed).iter().map(|s| crate::data::tokenize(s, false)).collect()
}

pub fn corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng)).collect()
}

/// Whether `s` is derivable from the grammar.
pub fn is_valid(s: &str) -> bool {
    let w: Vec<&str> = s.split_whitespace().collect();
    let mut i = 0;
    let mut eat = |set: &[&str], optional: bool| -> bool {
        if i < w.len() && set.contains(&w[i]) {
            i += 1;
            true
        } else {
            optional
        }
    };
    eat(DETERMINERS, false)
        && eat(ADJECTIVES, true)
        && eat(NOUNS, false)
        && eat(VERBS, false)
        && eat(ADVERBS, true)
        && i == w.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_sentences_parse() {
        for s in corpus(500, 3) {
            assert!(is_valid(&s), "{s}");
        }
    }

    #[test]
    fn rejects_ungrammatical() {
        assert!(!is_valid(""));
        assert!(!is_valid("dog the runs"));
        assert!(!is_valid("the dog"));
        assert!(!is_valid("the big big dog runs"));
        assert!(!is_valid("the dog runs quickly today"));
        assert!(is_valid("a red fish swims slowly"));
        assert!(is_valid("the cat sleeps"));
    }

    #[test]
    fn sixteen_words() {
        let mut w = words();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 16);
    }
}
