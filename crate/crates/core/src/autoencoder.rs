//! LSTM sequence autoencoder.
//!
//! The encoder's last hidden state, L2-normalized, is the latent code `c`.
//! The decoder is conditioned on `c` at every step by concatenating it to the
//! step input, and in soft mode it feeds its own softmax output back as the
//! next input, which keeps the reconstruction `x̃` (soft-text) differentiable.
//! The same decoder turns noise or synthetic codes into generated text.

use autodiff::Var;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{OneHotBatch, SOS};
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, ParamStore, Scope};
use crate::optim::Adam;

const NORM_EPS: f64 = 1e-12;

/// Encoder output, one row per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Array2<f64>);

/// Per-step softmax rows, `max_len` matrices of `[batch, vocab]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftText {
    pub steps: Vec<Array2<f64>>,
}

impl SoftText {
    pub fn from_vars(steps: &[Var]) -> Self {
        Self {
            steps: steps.iter().map(|v| v.value().clone()).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, |s| s.nrows())
    }

    /// `[batch, max_len, vocab]`
    pub fn data(&self) -> Array3<f64> {
        let views: Vec<_> = self.steps.iter().map(|s| s.view()).collect();
        ndarray::stack(Axis(1), &views).expect("steps share a shape")
    }

    /// Per-step argmax, lowest id on ties.
    pub fn argmax_ids(&self) -> Array2<usize> {
        let mut ids = Array2::zeros((self.batch_size(), self.steps.len()));
        for (t, step) in self.steps.iter().enumerate() {
            for (b, row) in step.rows().into_iter().enumerate() {
                ids[[b, t]] = argmax(row.iter().copied());
            }
        }
        ids
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub vocab_size: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub output: Linear,
}

impl Autoencoder {
    pub fn new(vocab_size: usize, hidden: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            hidden,
            max_len,
            encoder: LstmCell::new("enc.lstm", vocab_size, hidden),
            decoder: LstmCell::new("dec.lstm", vocab_size + hidden, hidden),
            output: Linear::new("dec.out", hidden, vocab_size),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.hidden
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.encoder.init(store, rng);
        self.decoder.init(store, rng);
        self.output.init(store, rng);
    }

    /// Unit-norm code from the last encoder step, before noise.
    pub fn encode_graph(&self, s: &Scope, x: &OneHotBatch) -> Var {
        let (mut h, mut c) = self.encoder.zero_state(x.batch_size());
        for t in 0..x.max_len() {
            let input = Var::constant(x.step(t));
            (h, c) = self.encoder.step(s, &input, (&h, &c));
        }
        l2_normalize_rows(&h)
    }

    /// Soft decoding: each step's softmax is the next step's input.
    pub fn decode_soft_graph(&self, s: &Scope, code: &Var) -> Vec<Var> {
        let batch = code.rows();
        let mut prev = Var::constant(one_hot_rows(batch, self.vocab_size, SOS));
        let (mut h, mut c) = self.decoder.zero_state(batch);
        let mut out = Vec::with_capacity(self.max_len);
        for _ in 0..self.max_len {
            let input = Var::concat_cols(&[prev, code.clone()]);
            (h, c) = self.decoder.step(s, &input, (&h, &c));
            let probs = self.output.forward(s, &h).softmax_rows();
            out.push(probs.clone());
            prev = probs;
        }
        out
    }

    /// Greedy decoding: the one-hot of each step's argmax is fed back.
    pub fn decode_greedy_with(&self, s: &Scope, code: &Array2<f64>) -> Array2<usize> {
        let batch = code.nrows();
        let code = Var::constant(code.clone());
        let mut prev = one_hot_rows(batch, self.vocab_size, SOS);
        let (mut h, mut c) = self.decoder.zero_state(batch);
        let mut ids = Array2::zeros((batch, self.max_len));
        for t in 0..self.max_len {
            let input = Var::concat_cols(&[Var::constant(prev), code.clone()]);
            (h, c) = self.decoder.step(s, &input, (&h, &c));
            let probs = self.output.forward(s, &h).softmax_rows();
            prev = Array2::zeros((batch, self.vocab_size));
            for (b, row) in probs.value().rows().into_iter().enumerate() {
                let id = argmax(row.iter().copied());
                ids[[b, t]] = id;
                prev[[b, id]] = 1.0;
            }
        }
        ids
    }

    /// Mean squared reconstruction error of `x` from its (optionally noised) code.
    pub fn reconstruction_graph(&self, s: &Scope, x: &OneHotBatch, noise: Option<&Array2<f64>>) -> Var {
        let mut code = self.encode_graph(s, x);
        if let Some(n) = noise {
            code = code.add(&Var::constant(n.clone()));
        }
        let soft = self.decode_soft_graph(s, &code);
        let real: Vec<Var> = x.steps().into_iter().map(Var::constant).collect();
        mse_graph(&real, &soft)
    }

    fn check_code(&self, code: &Array2<f64>) -> Result<()> {
        if code.ncols() != self.code_dim() {
            return Err(Error::Shape(format!(
                "decoder expects codes of width {}, got {}",
                self.code_dim(),
                code.ncols()
            )));
        }
        Ok(())
    }

    /// Latent codes with isotropic Gaussian noise added after normalization.
    pub fn encode<R: Rng>(
        &self,
        store: &ParamStore,
        x: &OneHotBatch,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<LatentCode> {
        if !noise_std.is_finite() || noise_std < 0.0 {
            return Err(Error::Invalid(format!("noise std {noise_std} must be finite and ≥ 0")));
        }
        let code = self.encode_graph(&Scope::frozen(store), x).value().clone();
        if !code.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "encoder activation".into(),
                iteration: 0,
            });
        }
        if noise_std == 0.0 {
            return Ok(LatentCode(code));
        }
        let noise = gaussian(rng, code.nrows(), code.ncols()) * noise_std;
        Ok(LatentCode(code + noise))
    }

    pub fn decode_soft(&self, store: &ParamStore, code: &LatentCode) -> Result<SoftText> {
        self.check_code(&code.0)?;
        let steps = self.decode_soft_graph(&Scope::frozen(store), &Var::constant(code.0.clone()));
        Ok(SoftText::from_vars(&steps))
    }

    /// `max_len` ids per row; consumers cut at the first `<eos>`.
    pub fn decode_greedy(&self, store: &ParamStore, code: &LatentCode) -> Result<Array2<usize>> {
        self.check_code(&code.0)?;
        Ok(self.decode_greedy_with(&Scope::frozen(store), &code.0))
    }
}

/// Mean of `(x − x̃)²` over batch × time × vocab.
pub fn reconstruction_loss(x: &OneHotBatch, soft: &SoftText) -> Result<f64> {
    let real = x.data();
    let rec = soft.data();
    if real.dim() != rec.dim() {
        return Err(Error::Shape(format!(
            "reconstruction of shape {:?} against input {:?}",
            rec.dim(),
            real.dim()
        )));
    }
    Ok((&real - &rec).mapv(|d| d * d).mean().unwrap_or(0.0))
}

pub(crate) fn mse_graph(a: &[Var], b: &[Var]) -> Var {
    let n: usize = a.iter().map(|v| v.value().len()).sum();
    let total = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.sub(y).square().sum_all())
        .reduce(|acc, v| acc.add(&v))
        .expect("at least one step");
    total.scale(1.0 / n as f64)
}

pub(crate) fn l2_normalize_rows(x: &Var) -> Var {
    let norm = x.square().sum_cols().add_scalar(NORM_EPS).sqrt();
    x.div_col(&norm)
}

pub(crate) fn one_hot_rows(batch: usize, vocab: usize, id: usize) -> Array2<f64> {
    let mut m = Array2::zeros((batch, vocab));
    m.column_mut(id).fill(1.0);
    m
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// One Adam step on encoder and decoder against the reconstruction loss.
pub fn ae_train_step<R: Rng>(
    ae: &Autoencoder,
    store: &mut ParamStore,
    opt: &mut Adam,
    x: &OneHotBatch,
    noise_std: f64,
    rng: &mut R,
    iteration: u64,
) -> Result<f64> {
    let noise = gaussian(rng, x.batch_size(), ae.code_dim()) * noise_std;
    let (loss, grads) = {
        let s = Scope::bind(store, |n| n.starts_with("enc.") || n.starts_with("dec."));
        let loss = ae.reconstruction_graph(&s, x, Some(&noise));
        (loss.item(), s.grads(&loss))
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "reconstruction loss".into(),
            iteration,
        });
    }
    opt.step(store, &grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_batch, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Autoencoder, ParamStore, Vocabulary) {
        let words: Vec<String> = "a b c d e".split(' ').map(str::to_owned).collect();
        let vocab = Vocabulary::build(&[words], 9).unwrap();
        let ae = Autoencoder::new(vocab.len(), 6, 4);
        let mut store = ParamStore::new();
        ae.init(&mut store, &mut ChaCha8Rng::seed_from_u64(5));
        (ae, store, vocab)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn codes_are_unit_norm_without_noise() {
        let (ae, store, vocab) = setup();
        let x = encode_batch(&vocab, &[toks("a b"), toks("c"), toks("a b")], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ae.encode(&store, &x, 0.0, &mut rng).unwrap();
        for row in c.0.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-5);
        }
        assert_eq!(c.0.row(0), c.0.row(2));
        let again = ae.encode(&store, &x, 0.0, &mut rng).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn soft_rows_on_simplex_even_for_zero_code() {
        let (ae, store, _) = setup();
        let soft = ae.decode_soft(&store, &LatentCode(Array2::zeros((2, 6)))).unwrap();
        assert_eq!(soft.steps.len(), 4);
        for step in &soft.steps {
            for row in step.rows() {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conditioning_on_code_matters() {
        let (ae, store, _) = setup();
        let code = Array2::from_shape_fn((1, 6), |(_, j)| (j as f64 - 2.5) / 3.0);
        let pos = ae.decode_soft(&store, &LatentCode(code.clone())).unwrap();
        let neg = ae.decode_soft(&store, &LatentCode(-code)).unwrap();
        assert_ne!(pos, neg);
    }

    #[test]
    fn code_width_is_checked() {
        let (ae, store, _) = setup();
        assert!(matches!(
            ae.decode_soft(&store, &LatentCode(Array2::zeros((1, 5)))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_values() {
        let (_, _, vocab) = setup();
        let x = encode_batch(&vocab, &[toks("a")], 2).unwrap();
        let same = SoftText { steps: x.steps() };
        assert_eq!(reconstruction_loss(&x, &same).unwrap(), 0.0);

        // vocab 4 (specials only), one-hot vs uniform 0.25 → 0.1875 per position
        let four = OneHotBatch::from_ids(&[&[2, 0]], 2, 4);
        let uniform = SoftText {
            steps: vec![Array2::from_elem((1, 4), 0.25); 2],
        };
        assert!((reconstruction_loss(&four, &uniform).unwrap() - 0.1875).abs() < 1e-15);

        let short = SoftText {
            steps: vec![Array2::from_elem((1, 4), 0.25)],
        };
        assert!(reconstruction_loss(&four, &short).is_err());
    }

    #[test]
    fn greedy_tie_breaks_low() {
        assert_eq!(argmax([0.25, 0.25, 0.5, 0.5].into_iter()), 2);
        assert_eq!(argmax([1.0, 1.0].into_iter()), 0);
    }
}
