//! Adaptive moments with decoupled weight decay.
//!
//! Frozen tensors are skipped entirely (no moment updates, bitwise
//! constant parameters); decay applies only to tensors registered with
//! `decay = true`, which excludes gains, biases, normalization parameters
//! and embeddings.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::encoders::TensorDef;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(
        &mut self,
        defs: &[TensorDef],
        data: &mut [f64],
        grads: &[f64],
        lr: f64,
        frozen: &HashSet<usize>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, def) in defs.iter().enumerate() {
            if frozen.contains(&id) {
                continue;
            }
            let wd = if def.decay { self.weight_decay } else { 0.0 };
            for i in def.offset..def.offset + def.len {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * data[i]);
            }
        }
    }
}
