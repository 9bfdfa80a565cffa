//! Flat parameter storage with named tensor views.
//!
//! All trainable tensors of both towers (plus the classifier heads and the
//! pooling exponent) live in one `Vec<f64>`; gradients and optimizer
//! moments reuse the same layout. Checkpoints serialize the store as a
//! name -> (shape, data) map.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

/// How a tensor initializes and whether weight decay applies to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// N(0, scale).
    Normal(f64),
    Zeros,
    Ones,
    /// A fixed scalar fill (used for the pooling exponent).
    Const(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Decoupled weight decay applies only to true weight matrices, never
    /// to gains, biases or embeddings-like vectors of normalization.
    pub decay: bool,
    pub init: Init,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    pub defs: Vec<TensorDef>,
    index: HashMap<String, usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn builder() -> ParamStoreBuilder {
        ParamStoreBuilder { defs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn def(&self, id: usize) -> &TensorDef {
        &self.defs[id]
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor {name:?}"))
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn slice(&self, id: usize) -> &[f64] {
        let d = &self.defs[id];
        &self.data[d.offset..d.offset + d.len]
    }

    pub fn slice_mut(&mut self, id: usize) -> &mut [f64] {
        let d = &self.defs[id];
        &mut self.data[d.offset..d.offset + d.len]
    }

    /// View of `id` inside an external buffer with the store's layout
    /// (gradients, moments).
    pub fn slice_of<'a>(&self, buf: &'a [f64], id: usize) -> &'a [f64] {
        let d = &self.defs[id];
        &buf[d.offset..d.offset + d.len]
    }

    pub fn slice_of_mut<'a>(&self, buf: &'a mut [f64], id: usize) -> &'a mut [f64] {
        let d = &self.defs[id];
        &mut buf[d.offset..d.offset + d.len]
    }

    /// Disjoint mutable views of several tensors inside one buffer, in the
    /// requested order. Panics if ids repeat.
    pub fn views_mut<'a, const N: usize>(
        &self,
        buf: &'a mut [f64],
        ids: [usize; N],
    ) -> [&'a mut [f64]; N] {
        let mut order: Vec<usize> = (0..N).collect();
        order.sort_by_key(|&i| self.defs[ids[i]].offset);
        let mut out: [Option<&'a mut [f64]>; N] = std::array::from_fn(|_| None);
        let mut rest = buf;
        let mut consumed = 0usize;
        for &slot in &order {
            let d = &self.defs[ids[slot]];
            assert!(d.offset >= consumed, "overlapping tensor views requested");
            let (_, tail) = rest.split_at_mut(d.offset - consumed);
            let (view, tail) = tail.split_at_mut(d.len);
            out[slot] = Some(view);
            rest = tail;
            consumed = d.offset + d.len;
        }
        out.map(|v| v.expect("all views assigned"))
    }

    /// Reset every tensor from its init spec; tensor values depend only on
    /// (seed, tensor name), not on registration order.
    pub fn initialize(&mut self, seed: u64) {
        for d in &self.defs {
            let mut rng = rng_for(seed, "init", &[crate::rng::fnv1a64(d.name.as_bytes())]);
            let out = &mut self.data[d.offset..d.offset + d.len];
            match d.init {
                Init::Normal(scale) => {
                    for v in out.iter_mut() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        *v = scale * n;
                    }
                }
                Init::Zeros => out.fill(0.0),
                Init::Ones => out.fill(1.0),
                Init::Const(c) => out.fill(c),
            }
        }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

pub struct ParamStoreBuilder {
    defs: Vec<TensorDef>,
}

impl ParamStoreBuilder {
    pub fn tensor(&mut self, name: impl Into<String>, shape: &[usize], decay: bool, init: Init) -> usize {
        let name = name.into();
        let len: usize = shape.iter().product();
        let offset = self.defs.last().map(|d| d.offset + d.len).unwrap_or(0);
        self.defs.push(TensorDef {
            name,
            shape: shape.to_vec(),
            offset,
            len,
            decay,
            init,
        });
        self.defs.len() - 1
    }

    pub fn build(self, seed: u64) -> ParamStore {
        let total: usize = self.defs.iter().map(|d| d.len).sum();
        let index = self
            .defs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), i))
            .collect();
        let mut store = ParamStore {
            defs: self.defs,
            index,
            data: vec![0.0; total],
        };
        store.initialize(seed);
        store
    }
}
