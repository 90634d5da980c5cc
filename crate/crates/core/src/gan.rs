//! Critics, generators, interpolation and the WGAN-GP penalty.
//!
//! Critics return one unbounded score per example as a `[batch, 1]` matrix.
//! Text inputs are lists of per-step `[batch, vocab]` matrices; code inputs
//! are `[batch, code_dim]`.

use autodiff::{grad, Var};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{gaussian, SoftText};
use crate::error::{Error, Result};
use crate::nn::{
    flatten_time, time_major, unflatten_time, Conv1d, ConvResBlock, DenseResBlock, Linear, ParamStore, Scope,
};

const LEAK: f64 = 0.2;
/// Keeps the derivative of the norm finite when the input gradient vanishes.
const NORM_EPS: f64 = 1e-20;

/// Prior samples `z`, optionally projected onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch(pub Array2<f64>);

pub fn sample_noise<R: Rng>(rng: &mut R, n: usize, dim: usize, normalize: bool) -> NoiseBatch {
    let mut z = gaussian(rng, n, dim);
    if normalize {
        for mut row in z.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    NoiseBatch(z)
}

pub fn sample_noise_seeded(n: usize, dim: usize, normalize: bool, seed: u64) -> Result<NoiseBatch> {
    if n == 0 || dim == 0 {
        return Err(Error::Invalid("noise batch needs n > 0 and dim > 0".into()));
    }
    Ok(sample_noise(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, normalize))
}

/// Generator output, strictly inside (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCode(pub Array2<f64>);

/// Noise → code: dense residual blocks and a final tanh.
#[derive(Debug, Clone)]
pub struct CodeGenerator {
    pub input: Linear,
    pub blocks: Vec<DenseResBlock>,
    pub output: Linear,
}

impl CodeGenerator {
    pub fn new(noise_dim: usize, width: usize, blocks: usize, code_dim: usize) -> Self {
        Self {
            input: Linear::new("gen.in", noise_dim, width),
            blocks: (0..blocks)
                .map(|i| DenseResBlock::new(&format!("gen.res{i}"), width))
                .collect(),
            output: Linear::new("gen.out", width, code_dim),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.input.init(store, rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
        self.output.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, z: &Var) -> Var {
        let mut h = self.input.forward(s, z);
        for b in &self.blocks {
            h = b.forward(s, &h);
        }
        self.output.forward(s, &h.relu()).tanh()
    }

    pub fn generate(&self, store: &ParamStore, z: &NoiseBatch) -> Result<SyntheticCode> {
        if z.0.ncols() != self.input.input {
            return Err(Error::Shape(format!(
                "code generator expects noise of width {}, got {}",
                self.input.input,
                z.0.ncols()
            )));
        }
        let out = self.forward(&Scope::frozen(store), &Var::constant(z.0.clone()));
        Ok(SyntheticCode(out.value().clone()))
    }
}

/// Convolutional noise → soft-text generator of the IWGAN baseline.
#[derive(Debug, Clone)]
pub struct TextGenerator {
    pub max_len: usize,
    pub input: Linear,
    pub blocks: Vec<ConvResBlock>,
    pub output: Conv1d,
}

impl TextGenerator {
    pub fn new(noise_dim: usize, channels: usize, blocks: usize, kernel: usize, max_len: usize, vocab: usize) -> Self {
        Self {
            max_len,
            input: Linear::new("tgen.in", noise_dim, max_len * channels),
            blocks: (0..blocks)
                .map(|i| ConvResBlock::new(&format!("tgen.res{i}"), channels, kernel))
                .collect(),
            output: Conv1d::new("tgen.out", channels, vocab, 1),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.input.init(store, rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
        self.output.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, z: &Var) -> Vec<Var> {
        let batch = z.rows();
        let mut h = unflatten_time(&self.input.forward(s, z), self.max_len);
        for b in &self.blocks {
            h = b.forward(s, &h, batch);
        }
        let probs = self.output.forward(s, &h, batch).softmax_rows();
        (0..self.max_len).map(|t| probs.slice_rows(t * batch, batch)).collect()
    }
}

/// Convolutional trunk shared by the text and joint critics.
#[derive(Debug, Clone)]
pub struct TextTrunk {
    pub max_len: usize,
    pub vocab: usize,
    pub input: Conv1d,
    pub blocks: Vec<ConvResBlock>,
}

impl TextTrunk {
    fn new(prefix: &str, vocab: usize, channels: usize, blocks: usize, kernel: usize, max_len: usize) -> Self {
        Self {
            max_len,
            vocab,
            input: Conv1d::new(format!("{prefix}.in"), vocab, channels, 1),
            blocks: (0..blocks)
                .map(|i| ConvResBlock::new(&format!("{prefix}.res{i}"), channels, kernel))
                .collect(),
        }
    }

    fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.input.init(store, rng);
        for b in &self.blocks {
            b.init(store, rng);
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.max_len * self.input.output
    }

    /// `[batch, max_len · channels]`
    fn forward(&self, s: &Scope, steps: &[Var]) -> Var {
        let batch = steps[0].rows();
        let mut h = self.input.forward(s, &time_major(steps), batch);
        for b in &self.blocks {
            h = b.forward(s, &h, batch);
        }
        flatten_time(&h, batch)
    }

    fn check(&self, steps: usize, vocab: usize) -> Result<()> {
        if steps != self.max_len || vocab != self.vocab {
            return Err(Error::Shape(format!(
                "text critic expects [{}, {}] per example, got [{steps}, {vocab}]",
                self.max_len, self.vocab
            )));
        }
        Ok(())
    }
}

/// `f_{w_t}`
#[derive(Debug, Clone)]
pub struct TextCritic {
    pub trunk: TextTrunk,
    pub output: Linear,
}

impl TextCritic {
    pub fn new(vocab: usize, channels: usize, blocks: usize, kernel: usize, max_len: usize) -> Self {
        let trunk = TextTrunk::new("crit_t", vocab, channels, blocks, kernel, max_len);
        let output = Linear::new("crit_t.out", trunk.feature_dim(), 1);
        Self { trunk, output }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.trunk.init(store, rng);
        self.output.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, steps: &[Var]) -> Var {
        self.output.forward(s, &self.trunk.forward(s, steps))
    }

    pub fn score(&self, store: &ParamStore, text: &SoftText) -> Result<Vec<f64>> {
        self.trunk.check(text.steps.len(), text.steps.first().map_or(0, |m| m.ncols()))?;
        let steps: Vec<Var> = text.steps.iter().cloned().map(Var::constant).collect();
        Ok(column(&self.forward(&Scope::frozen(store), &steps)))
    }
}

/// `f_{w_c}`: three dense layers with leaky ReLU.
#[derive(Debug, Clone)]
pub struct CodeCritic {
    pub layers: [Linear; 3],
}

impl CodeCritic {
    pub fn new(code_dim: usize, hidden: usize) -> Self {
        Self {
            layers: [
                Linear::new("crit_c.fc1", code_dim, hidden),
                Linear::new("crit_c.fc2", hidden, hidden),
                Linear::new("crit_c.fc3", hidden, 1),
            ],
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    pub fn forward(&self, s: &Scope, v: &Var) -> Var {
        let h = self.layers[0].forward(s, v).leaky_relu(LEAK);
        let h = self.layers[1].forward(s, &h).leaky_relu(LEAK);
        self.layers[2].forward(s, &h)
    }

    pub fn score(&self, store: &ParamStore, v: &Array2<f64>) -> Result<Vec<f64>> {
        if v.ncols() != self.layers[0].input {
            return Err(Error::Shape(format!(
                "code critic expects width {}, got {}",
                self.layers[0].input,
                v.ncols()
            )));
        }
        Ok(column(&self.forward(&Scope::frozen(store), &Var::constant(v.clone()))))
    }
}

/// `f_{w_{t+c}}`: text trunk features concatenated with the code, then a dense head.
#[derive(Debug, Clone)]
pub struct JointCritic {
    pub trunk: TextTrunk,
    pub hidden: Linear,
    pub output: Linear,
}

impl JointCritic {
    pub fn new(vocab: usize, channels: usize, blocks: usize, kernel: usize, max_len: usize, code_dim: usize) -> Self {
        let trunk = TextTrunk::new("crit_tc", vocab, channels, blocks, kernel, max_len);
        let hidden = Linear::new("crit_tc.fc", trunk.feature_dim() + code_dim, channels);
        let output = Linear::new("crit_tc.out", channels, 1);
        Self { trunk, hidden, output }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.trunk.init(store, rng);
        self.hidden.init(store, rng);
        self.output.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, steps: &[Var], code: &Var) -> Var {
        let features = Var::concat_cols(&[self.trunk.forward(s, steps), code.clone()]);
        let h = self.hidden.forward(s, &features).leaky_relu(LEAK);
        self.output.forward(s, &h)
    }

    /// `inputs` is the text steps followed by the code.
    pub fn forward_packed(&self, s: &Scope, inputs: &[Var]) -> Var {
        let (code, steps) = inputs.split_last().expect("text steps and a code");
        self.forward(s, steps, code)
    }

    pub fn score(&self, store: &ParamStore, text: &SoftText, code: &Array2<f64>) -> Result<Vec<f64>> {
        self.trunk.check(text.steps.len(), text.steps.first().map_or(0, |m| m.ncols()))?;
        if code.nrows() != text.batch_size() {
            return Err(Error::Shape(format!(
                "joint critic got {} texts but {} codes",
                text.batch_size(),
                code.nrows()
            )));
        }
        let expected = self.hidden.input - self.trunk.feature_dim();
        if code.ncols() != expected {
            return Err(Error::Shape(format!("joint critic expects codes of width {expected}, got {}", code.ncols())));
        }
        let steps: Vec<Var> = text.steps.iter().cloned().map(Var::constant).collect();
        let out = self.forward(&Scope::frozen(store), &steps, &Var::constant(code.clone()));
        Ok(column(&out))
    }
}

fn column(v: &Var) -> Vec<f64> {
    v.value().column(0).to_vec()
}

/// Per-example mixing weights `α ~ U(0, 1)`, `[batch, 1]`.
pub fn sample_alpha<R: Rng>(rng: &mut R, batch: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((batch, 1), || rng.random::<f64>())
}

/// `α · real + (1 − α) · fake` per example, applied to every part with the same `α`.
pub fn interpolate(real: &[Var], fake: &[Var], alpha: &Array2<f64>) -> Result<Vec<Var>> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!("{} real parts vs {} fake parts", real.len(), fake.len())));
    }
    let a = Var::constant(alpha.clone());
    let one_minus = Var::constant(alpha.mapv(|x| 1.0 - x));
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            if r.shape() != f.shape() || r.rows() != alpha.nrows() {
                return Err(Error::Shape(format!(
                    "cannot mix {:?} with {:?} using {} weights",
                    r.shape(),
                    f.shape(),
                    alpha.nrows()
                )));
            }
            Ok(r.mul_col(&a).add(&f.mul_col(&one_minus)))
        })
        .collect()
}

/// Value-level [`interpolate`] with freshly drawn weights.
pub fn interpolate_seeded(real: &Array2<f64>, fake: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
    let alpha = sample_alpha(&mut ChaCha8Rng::seed_from_u64(seed), real.nrows());
    let mixed = interpolate(&[Var::constant(real.clone())], &[Var::constant(fake.clone())], &alpha)?;
    Ok(mixed[0].value().clone())
}

/// `λ · mean_b (‖∇_{x̄} f(x̄)‖₂ − 1)²` on interpolates of `real` and `fake`.
///
/// The gradient norm of each example is taken jointly over all parts, so a
/// `(text, code)` pair is penalized on the concatenated gradient. The result
/// stays differentiable in the critic parameters and in whatever `real` and
/// `fake` were computed from.
pub fn gradient_penalty<F>(critic: F, real: &[Var], fake: &[Var], alpha: &Array2<f64>, lambda: f64) -> Result<Var>
where
    F: FnOnce(&[Var]) -> Var,
{
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("gradient penalty weight {lambda} must be ≥ 0")));
    }
    let mixed = interpolate(real, fake, alpha)?;
    // Interpolates that depend on nothing trainable still need to be differentiated through.
    let mixed: Vec<Var> = mixed
        .into_iter()
        .map(|m| if m.requires_grad() { m } else { Var::param(m.value().clone()) })
        .collect();
    penalty_at(critic, &mixed, lambda)
}

/// The penalty evaluated at given points, without interpolation.
pub fn penalty_at<F>(critic: F, points: &[Var], lambda: f64) -> Result<Var>
where
    F: FnOnce(&[Var]) -> Var,
{
    let score = critic(points);
    let refs: Vec<&Var> = points.iter().collect();
    let grads = if score.requires_grad() {
        grad(&score.sum_all(), &refs, true)
    } else {
        points.iter().map(|p| Var::zeros(p.rows(), p.cols())).collect()
    };
    if grads.iter().any(|g| !g.value().iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite {
            what: "critic input gradient".into(),
            iteration: 0,
        });
    }
    let sq = grads
        .iter()
        .map(|g| g.square().sum_cols())
        .reduce(|a, b| a.add(&b))
        .expect("at least one input");
    let norm = sq.add_scalar(NORM_EPS).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all().scale(lambda))
}
