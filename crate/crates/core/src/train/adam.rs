//! Adam with per-parameter step counts, keyed by parameter name so state
//! survives checkpointing and parameters joining late (stage 2).

use std::collections::BTreeMap;

use crate::tensor::{Parameters, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, state: BTreeMap::new() }
    }
}

impl Adam {
    /// Updates every parameter that holds a gradient, replacing it with a
    /// fresh leaf. Returns the number of tensors updated.
    pub fn step(&mut self, params: &mut dyn Parameters, prefix: &str, lr: f64) -> usize {
        let mut updated = 0;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let state = &mut self.state;
        params.visit_mut(prefix, &mut |name, t| {
            if !t.requires_grad() {
                return;
            }
            let Some(g) = t.grad() else { return };
            let st = state.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                step: 0,
            });
            st.step += 1;
            let c1 = 1.0 - b1.powi(st.step as i32);
            let c2 = 1.0 - b2.powi(st.step as i32);
            let mut data = t.to_vec();
            for i in 0..data.len() {
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            *t = Tensor::param(t.shape(), data).expect("shape preserved");
            updated += 1;
        });
        updated
    }
}
