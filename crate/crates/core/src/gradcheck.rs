//! Loss-level finite-difference checks of the training losses.

use autodiff::check::{central_difference, relative_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::ModelState;
use crate::nn::{ParamStore, Scope};
use crate::training::{step_loss, StepInputs, StepKind};

/// One checked gradient entry.
#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares analytic gradients of a step's loss with central differences at
/// `per_tensor` random entries of every tensor the step trains.
pub fn check_step(state: &ModelState, step: StepKind, last: bool, inp: &StepInputs, per_tensor: usize, seed: u64) -> Vec<Probe> {
    let groups = step.groups(&state.config, last);
    let loss_at = |store: &ParamStore| {
        let s = Scope::frozen(store);
        step_loss(step, &state.nets, &state.config, &s, inp).expect("loss builds").item()
    };
    let analytic = {
        let s = Scope::bind(&state.params, |n| groups.iter().any(|g| g.contains(n)));
        let loss = step_loss(step, &state.nets, &state.config, &s, inp).expect("loss builds");
        s.grads(&loss.value)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for (name, g) in &analytic {
        let x = state.params.get(name).expect("bound parameter").clone();
        let idx: Vec<usize> = (0..per_tensor).map(|_| rng.random_range(0..x.len())).collect();
        let fd = central_difference(&x, &idx, 1e-5, |p| {
            let mut store = state.params.clone();
            *store.get_mut(name).expect("bound parameter") = p.clone();
            loss_at(&store)
        });
        for (&i, numeric) in idx.iter().zip(fd) {
            let a = g.as_slice().expect("standard layout")[i];
            probes.push(Probe {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                relative_error: relative_error(a, numeric, 1e-6),
            });
        }
    }
    probes
}

pub fn max_error(probes: &[Probe]) -> f64 {
    probes.iter().map(|p| p.relative_error).fold(0.0, f64::max)
}
