//! Corpus loading, vocabulary, and fixed-length one-hot batches.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Reads one whitespace-tokenized sentence per line, skipping blank lines.
pub fn load_corpus(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    read_tokenized(path.as_ref(), lowercase, false)
}

/// Every line tokenized, blank lines kept as empty sentences.
pub fn load_lines(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    read_tokenized(path.as_ref(), lowercase, true)
}

fn read_tokenized(path: &Path, lowercase: bool, keep_blank: bool) -> Result<Vec<Vec<String>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    let mut sentences = Vec::new();
    if body.is_empty() {
        return Ok(sentences);
    }
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| Error::Utf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let tokens = tokenize(line, lowercase);
        if keep_blank || !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    Ok(sentences)
}

pub fn tokenize(line: &str, lowercase: bool) -> Vec<String> {
    line.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() })
        .collect()
}

/// Bidirectional token/id map. Ids `0..4` are always the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials plus the `max_size − 4` most frequent tokens, ties broken lexicographically.
    pub fn build(sentences: &[Vec<String>], max_size: usize) -> Result<Self> {
        if max_size < 5 {
            return Err(Error::Config(format!(
                "vocabulary size must be at least 5 (4 specials + 1 token), got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in sentences.iter().flatten() {
            if !SPECIALS.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(max_size - SPECIALS.len()).map(|(t, _)| t.to_owned()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Vocabulary from an id-ordered token list; the first four must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Invalid(format!(
                "vocabulary must start with {SPECIALS:?}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self {
            id_to_token: tokens,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// SHA-256 over the id-ordered token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for tok in &self.id_to_token {
            h.update(tok.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

/// Sentence ids with `<eos>` appended, or written over the last slot when
/// the sentence does not fit in `max_len`.
pub fn sentence_ids(vocab: &Vocabulary, tokens: &[String], max_len: usize) -> Vec<usize> {
    let keep = tokens.len().min(max_len - 1);
    let mut ids: Vec<usize> = tokens[..keep].iter().map(|t| vocab.id(t)).collect();
    ids.push(EOS);
    ids
}

/// Id-encoded corpus tied to the vocabulary it was encoded with.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    pub sentences: Vec<Vec<usize>>,
    pub max_len: usize,
    pub vocab_size: usize,
    pub vocab_fingerprint: String,
}

impl TokenizedCorpus {
    pub fn new(vocab: &Vocabulary, sentences: &[Vec<String>], max_len: usize) -> Result<Self> {
        if max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(Self {
            sentences: sentences.iter().map(|s| sentence_ids(vocab, s, max_len)).collect(),
            max_len,
            vocab_size: vocab.len(),
            vocab_fingerprint: vocab.fingerprint(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> OneHotBatch {
        let rows: Vec<&[usize]> = indices.iter().map(|&i| self.sentences[i].as_slice()).collect();
        OneHotBatch::from_ids(&rows, self.max_len, self.vocab_size)
    }

    /// Uniform draw with replacement.
    pub fn sample_batch<R: Rng>(&self, rng: &mut R, batch_size: usize) -> OneHotBatch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx)
    }
}

/// `[batch, max_len, vocab]` one-hot tensor, kept as padded ids and expanded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotBatch {
    ids: Array2<usize>,
    vocab_size: usize,
}

impl OneHotBatch {
    /// Rows are cut at `max_len` and padded with `<pad>`.
    pub fn from_ids(rows: &[&[usize]], max_len: usize, vocab_size: usize) -> Self {
        let ids = Array2::from_shape_fn((rows.len(), max_len), |(b, t)| {
            rows[b].get(t).copied().unwrap_or(PAD)
        });
        Self { ids, vocab_size }
    }

    pub fn batch_size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.ids.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn ids(&self) -> &Array2<usize> {
        &self.ids
    }

    /// One-hot rows of time step `t`, `[batch, vocab]`.
    pub fn step(&self, t: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.batch_size(), self.vocab_size));
        for b in 0..self.batch_size() {
            m[[b, self.ids[[b, t]]]] = 1.0;
        }
        m
    }

    pub fn steps(&self) -> Vec<Array2<f64>> {
        (0..self.max_len()).map(|t| self.step(t)).collect()
    }

    pub fn data(&self) -> Array3<f64> {
        let (b, t) = self.ids.dim();
        let mut d = Array3::zeros((b, t, self.vocab_size));
        for ((i, j), &id) in self.ids.indexed_iter() {
            d[[i, j, id]] = 1.0;
        }
        d
    }
}

pub fn encode_batch(vocab: &Vocabulary, sentences: &[Vec<String>], max_len: usize) -> Result<OneHotBatch> {
    if sentences.is_empty() {
        return Err(Error::Invalid("cannot encode an empty batch".into()));
    }
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| sentence_ids(vocab, s, max_len)).collect();
    let rows: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    Ok(OneHotBatch::from_ids(&rows, max_len, vocab.len()))
}

/// Joins tokens up to the first `<eos>`, dropping `<pad>` and `<sos>`.
pub fn decode_ids(vocab: &Vocabulary, ids: &[usize]) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        let tok = vocab.token(id).ok_or(Error::IdOutOfRange { id, size: vocab.len() })?;
        match id {
            EOS => break,
            PAD | SOS => {}
            _ => words.push(tok),
        }
    }
    Ok(words.join(" "))
}

/// Endless seeded stream of uniformly sampled batches.
pub struct BatchIterator<'a> {
    corpus: &'a TokenizedCorpus,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn batch_iterator(corpus: &TokenizedCorpus, batch_size: usize, seed: u64) -> Result<BatchIterator<'_>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size == 0 || batch_size > corpus.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 1..={}",
            corpus.len()
        )));
    }
    Ok(BatchIterator {
        corpus,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl Iterator for BatchIterator<'_> {
    type Item = OneHotBatch;

    fn next(&mut self) -> Option<OneHotBatch> {
        Some(self.corpus.sample_batch(&mut self.rng, self.batch_size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn load_skips_blank_lines_and_lowercases() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "A dog runs\n\n  \nthe Cat\n").unwrap();
        let s = load_corpus(f.path(), true).unwrap();
        assert_eq!(s, vec![toks("a dog runs"), toks("the cat")]);
        let s = load_corpus(f.path(), false).unwrap();
        assert_eq!(s[0][0], "A");
    }

    #[test]
    fn load_reports_bad_utf8_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"ok line\nbad \xff\xfe\n").unwrap();
        match load_corpus(f.path(), true) {
            Err(Error::Utf8 { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected utf8 error, got {other:?}"),
        }
    }

    #[test]
    fn load_missing_file_is_io_error() {
        assert!(matches!(load_corpus("/nonexistent/corpus.txt", true), Err(Error::Io { .. })));
    }

    #[test]
    fn vocab_keeps_most_frequent_with_lexicographic_ties() {
        let v = Vocabulary::build(&[toks("a a b")], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);

        let v = Vocabulary::build(&[toks("y x")], 5).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
        assert_eq!(v.id("y"), UNK);
    }

    #[test]
    fn vocab_rejects_tiny_size() {
        assert!(matches!(Vocabulary::build(&[toks("a")], 4), Err(Error::Config(_))));
    }

    #[test]
    fn vocab_round_trips_through_file() {
        let v = Vocabulary::build(&[toks("the dog the cat")], 10).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        let back = Vocabulary::load(f.path()).unwrap();
        assert_eq!(v, back);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }

    #[test]
    fn encode_pads_after_eos() {
        let v = Vocabulary::build(&[toks("a")], 5).unwrap();
        let b = encode_batch(&v, &[toks("a")], 3).unwrap();
        assert_eq!(b.ids().row(0).to_vec(), vec![v.id("a"), EOS, PAD]);
        let d = b.data();
        assert_eq!(d[[0, 0, 4]], 1.0);
        assert_eq!(d[[0, 1, EOS]], 1.0);
        assert_eq!(d[[0, 2, PAD]], 1.0);
    }

    #[test]
    fn encode_truncates_with_eos_in_last_slot() {
        let v = Vocabulary::build(&[toks("a b c")], 10).unwrap();
        let b = encode_batch(&v, &[toks("a b c")], 3).unwrap();
        assert_eq!(b.ids().row(0).to_vec(), vec![v.id("a"), v.id("b"), EOS]);
    }

    #[test]
    fn encode_rejects_empty_batch() {
        let v = Vocabulary::build(&[toks("a")], 5).unwrap();
        assert!(encode_batch(&v, &[], 3).is_err());
    }

    #[test]
    fn decode_cuts_at_eos() {
        let v = Vocabulary::build(&[toks("a")], 5).unwrap();
        assert_eq!(decode_ids(&v, &[4, EOS, PAD]).unwrap(), "a");
        assert_eq!(decode_ids(&v, &[PAD, PAD]).unwrap(), "");
        assert_eq!(decode_ids(&v, &[SOS, 4, 4]).unwrap(), "a a");
        assert!(matches!(decode_ids(&v, &[9]), Err(Error::IdOutOfRange { id: 9, size: 5 })));
    }

    #[test]
    fn iterator_is_seeded() {
        let v = Vocabulary::build(&[toks("a b c d")], 10).unwrap();
        let sents: Vec<_> = ["a", "b", "c", "d", "a b"].iter().map(|s| toks(s)).collect();
        let c = TokenizedCorpus::new(&v, &sents, 4).unwrap();
        let a: Vec<_> = batch_iterator(&c, 3, 7).unwrap().take(5).collect();
        let b: Vec<_> = batch_iterator(&c, 3, 7).unwrap().take(5).collect();
        assert_eq!(a, b);
        assert_eq!(a[0].batch_size(), 3);
    }

    #[test]
    fn iterator_errors() {
        let v = Vocabulary::build(&[toks("a")], 5).unwrap();
        let empty = TokenizedCorpus::new(&v, &[], 4).unwrap();
        assert!(matches!(batch_iterator(&empty, 1, 0), Err(Error::EmptyCorpus)));
        let one = TokenizedCorpus::new(&v, &[toks("a")], 4).unwrap();
        assert!(batch_iterator(&one, 2, 0).is_err());
    }
}
