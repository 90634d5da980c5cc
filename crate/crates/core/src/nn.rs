//! Parameter storage and the handful of layers the models are built from.
//!
//! Sequences are carried time-major: a `[max_len · batch, channels]` matrix
//! whose row `t · batch + b` holds example `b` at step `t`.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use autodiff::{grad, Var};
use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

/// Named parameter matrices, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Rc<Array2<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.params.insert(name.into(), Rc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name).map(|v| &**v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name).map(Rc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), &**v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count of parameters whose name passes `filter`.
    pub fn count(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.iter().filter(|(n, _)| filter(n)).map(|(_, v)| v.len()).sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns of the selected parameters.
    pub fn digest(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter().filter(|(n, _)| filter(n)) {
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Parameters bound as graph leaves for one forward pass.
pub struct Scope {
    vars: HashMap<String, Var>,
}

impl Scope {
    /// Binds every stored parameter; those passing `trainable` require grad.
    pub fn bind(store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = store
            .params
            .iter()
            .map(|(name, v)| (name.clone(), Var::leaf(Rc::clone(v), trainable(name))))
            .collect();
        Self { vars }
    }

    /// Everything constant.
    pub fn frozen(store: &ParamStore) -> Self {
        Self::bind(store, |_| false)
    }

    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    pub fn trainable(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }

    /// Gradients of `loss` for each trainable parameter.
    pub fn grads(&self, loss: &Var) -> BTreeMap<String, Array2<f64>> {
        let names = self.trainable();
        let vars: Vec<&Var> = names.iter().map(|n| &self.vars[n]).collect();
        let gs = grad(loss, &vars, false);
        names
            .into_iter()
            .zip(gs)
            .map(|(n, g)| (n, g.value().clone()))
            .collect()
    }
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = 1.0 / (self.input as f64).sqrt();
        store.insert(format!("{}.w", self.name), uniform(rng, self.input, self.output, bound));
        store.insert(format!("{}.b", self.name), uniform(rng, 1, self.output, bound));
    }

    pub fn forward(&self, s: &Scope, x: &Var) -> Var {
        let w = s.get(&format!("{}.w", self.name));
        let b = s.get(&format!("{}.b", self.name));
        x.matmul(w).add_row(b)
    }
}

/// LSTM cell with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        let g = 4 * self.hidden;
        store.insert(format!("{}.wx", self.name), uniform(rng, self.input, g, bound));
        store.insert(format!("{}.wh", self.name), uniform(rng, self.hidden, g, bound));
        store.insert(format!("{}.b", self.name), uniform(rng, 1, g, bound));
    }

    pub fn zero_state(&self, batch: usize) -> (Var, Var) {
        (Var::zeros(batch, self.hidden), Var::zeros(batch, self.hidden))
    }

    pub fn step(&self, s: &Scope, x: &Var, (h, c): (&Var, &Var)) -> (Var, Var) {
        let wx = s.get(&format!("{}.wx", self.name));
        let wh = s.get(&format!("{}.wh", self.name));
        let b = s.get(&format!("{}.b", self.name));
        let gates = x.matmul(wx).add(&h.matmul(wh)).add_row(b);
        let n = self.hidden;
        let i = gates.slice_cols(0, n).sigmoid();
        let f = gates.slice_cols(n, n).sigmoid();
        let g = gates.slice_cols(2 * n, n).tanh();
        let o = gates.slice_cols(3 * n, n).sigmoid();
        let c = f.mul(c).add(&i.mul(&g));
        let h = o.mul(&c.tanh());
        (h, c)
    }
}

/// Same-length 1-D convolution over time-major sequences (odd kernel, zero padding).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, input: usize, output: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        Self {
            name: name.into(),
            input,
            output,
            kernel,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let fan_in = self.input * self.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        store.insert(format!("{}.w", self.name), uniform(rng, fan_in, self.output, bound));
        store.insert(format!("{}.b", self.name), uniform(rng, 1, self.output, bound));
    }

    pub fn forward(&self, s: &Scope, x: &Var, batch: usize) -> Var {
        let rows = x.rows();
        let steps = rows / batch;
        let half = (self.kernel / 2) as isize;
        let taps: Vec<Var> = (-half..=half)
            .map(|offset| shift_time(x, batch, steps, offset))
            .collect();
        let stacked = if taps.len() == 1 {
            taps.into_iter().next().unwrap()
        } else {
            Var::concat_cols(&taps)
        };
        let w = s.get(&format!("{}.w", self.name));
        let b = s.get(&format!("{}.b", self.name));
        stacked.matmul(w).add_row(b)
    }
}

/// Row block `t` of the result holds row block `t + offset` of `x`, or zeros.
fn shift_time(x: &Var, batch: usize, steps: usize, offset: isize) -> Var {
    let cols = x.cols();
    let k = offset.unsigned_abs();
    if offset == 0 {
        return x.clone();
    }
    if k >= steps {
        return Var::zeros(steps * batch, cols);
    }
    let kept = (steps - k) * batch;
    let pad = Var::zeros(k * batch, cols);
    if offset > 0 {
        Var::concat_rows(&[x.slice_rows(k * batch, kept), pad])
    } else {
        Var::concat_rows(&[pad, x.slice_rows(0, kept)])
    }
}

/// `x + 0.3 · conv(relu(conv(relu(x))))`
#[derive(Debug, Clone)]
pub struct ConvResBlock {
    pub first: Conv1d,
    pub second: Conv1d,
}

pub const RESIDUAL_SCALE: f64 = 0.3;

impl ConvResBlock {
    pub fn new(name: &str, channels: usize, kernel: usize) -> Self {
        Self {
            first: Conv1d::new(format!("{name}.conv1"), channels, channels, kernel),
            second: Conv1d::new(format!("{name}.conv2"), channels, channels, kernel),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.first.init(store, rng);
        self.second.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, x: &Var, batch: usize) -> Var {
        let h = self.first.forward(s, &x.relu(), batch);
        let h = self.second.forward(s, &h.relu(), batch);
        x.add(&h.scale(RESIDUAL_SCALE))
    }
}

/// Fully connected counterpart of [`ConvResBlock`].
#[derive(Debug, Clone)]
pub struct DenseResBlock {
    pub first: Linear,
    pub second: Linear,
}

impl DenseResBlock {
    pub fn new(name: &str, width: usize) -> Self {
        Self {
            first: Linear::new(format!("{name}.fc1"), width, width),
            second: Linear::new(format!("{name}.fc2"), width, width),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        self.first.init(store, rng);
        self.second.init(store, rng);
    }

    pub fn forward(&self, s: &Scope, x: &Var) -> Var {
        let h = self.first.forward(s, &x.relu());
        let h = self.second.forward(s, &h.relu());
        x.add(&h.scale(RESIDUAL_SCALE))
    }
}

/// Stacks per-step `[batch, c]` matrices into one time-major matrix.
pub fn time_major(steps: &[Var]) -> Var {
    if steps.len() == 1 {
        steps[0].clone()
    } else {
        Var::concat_rows(steps)
    }
}

/// `[T · batch, c] → [batch, T · c]`
pub fn flatten_time(x: &Var, batch: usize) -> Var {
    let steps = x.rows() / batch;
    let parts: Vec<Var> = (0..steps).map(|t| x.slice_rows(t * batch, batch)).collect();
    if parts.len() == 1 {
        parts.into_iter().next().unwrap()
    } else {
        Var::concat_cols(&parts)
    }
}

/// `[batch, T · c] → [T · batch, c]`
pub fn unflatten_time(x: &Var, steps: usize) -> Var {
    let c = x.cols() / steps;
    let parts: Vec<Var> = (0..steps).map(|t| x.slice_cols(t * c, c)).collect();
    time_major(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = Conv1d::new("c", 2, 3, 3);
        conv.init(&mut store, &mut rng);
        let (batch, steps) = (2, 4);
        let x = Array2::from_shape_fn((steps * batch, 2), |(r, c)| (r * 2 + c) as f64 * 0.1 - 0.3);
        let s = Scope::frozen(&store);
        let y = conv.forward(&s, &Var::constant(x.clone()), batch);

        let w = store.get("c.w").unwrap();
        let bias = store.get("c.b").unwrap();
        for t in 0..steps {
            for b in 0..batch {
                for o in 0..3 {
                    let mut acc = bias[[0, o]];
                    for k in 0..3 {
                        let src = t as isize + k as isize - 1;
                        if src < 0 || src >= steps as isize {
                            continue;
                        }
                        for i in 0..2 {
                            acc += x[[src as usize * batch + b, i]] * w[[k * 2 + i, o]];
                        }
                    }
                    let got = y.value()[[t * batch + b, o]];
                    assert!((got - acc).abs() < 1e-12, "t={t} b={b} o={o}");
                }
            }
        }
    }

    #[test]
    fn flatten_round_trips() {
        let x = Var::constant(Array2::from_shape_fn((6, 2), |(r, c)| (r * 10 + c) as f64));
        let flat = flatten_time(&x, 2);
        assert_eq!(flat.shape(), (2, 6));
        // example 1 at step 2 is row 5
        assert_eq!(flat.value()[[1, 4]], 50.0);
        assert_eq!(unflatten_time(&flat, 3).value(), x.value());
    }

    #[test]
    fn digest_tracks_bits() {
        let mut store = ParamStore::new();
        store.insert("a.w", Array2::zeros((2, 2)));
        store.insert("b.w", Array2::zeros((2, 2)));
        let before = store.digest(|n| n.starts_with("a."));
        store.get_mut("b.w").unwrap()[[0, 0]] = 1.0;
        assert_eq!(before, store.digest(|n| n.starts_with("a.")));
        store.get_mut("a.w").unwrap()[[0, 0]] = -0.0;
        assert_ne!(before, store.digest(|n| n.starts_with("a.")));
    }
}
