use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
}

/// Adam with per-parameter step counts, so one instance can serve
/// parameters that are updated at different rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for (name, g) in grads {
            let param = store
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name:?}"));
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Array2::zeros(g.dim()),
                v: Array2::zeros(g.dim()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            Zip::from(param)
                .and(&mut st.m)
                .and(&mut st.v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}
