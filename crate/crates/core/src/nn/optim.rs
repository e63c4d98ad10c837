//! Named parameter storage with Adam state, plus tape binding helpers.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// A parameter tensor with its Adam moment estimates.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

/// Ordered, name-addressable parameter set. Iteration follows insertion
/// order everywhere so gradient reduction and serialization stay
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    lookup: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.lookup.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name '{name}'")));
        }
        let m = Tensor::zeros_like(&value);
        let v = Tensor::zeros_like(&value);
        self.lookup.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            adam_m: m,
            adam_v: v,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index_of(name)?;
        Ok(&mut self.entries[i].value)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown parameter '{name}'")))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn set_adam_state(&mut self, name: &str, m: Tensor, v: Tensor) -> Result<()> {
        let i = self.index_of(name)?;
        self.entries[i].adam_m = m;
        self.entries[i].adam_v = v;
        Ok(())
    }
}

/// Tape leaves for every parameter of a store, in entry order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps already-created leaves (the order must match the store).
    pub fn from_vars(vars: Vec<Var>) -> Binding {
        Binding { vars }
    }

    pub fn bind_all(tape: &mut Tape, store: &ParamStore) -> Binding {
        let vars = store
            .entries()
            .iter()
            .map(|e| tape.leaf(e.value.clone()))
            .collect();
        Binding { vars }
    }

    pub fn var(&self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.vars[store.index_of(name)?])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Dense gradients aligned with a store's entry order.
#[derive(Clone, Debug)]
pub struct FlatGrads {
    per_entry: Vec<Tensor>,
}

impl FlatGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        FlatGrads {
            per_entry: store
                .entries()
                .iter()
                .map(|e| Tensor::zeros_like(&e.value))
                .collect(),
        }
    }

    /// Adds the leaf gradients of one backward pass.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients) {
        for (slot, var) in self.per_entry.iter_mut().zip(binding.vars()) {
            if let Some(g) = grads.get(*var) {
                for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Adds another gradient set (deterministic batch reduction).
    pub fn add(&mut self, other: &FlatGrads) {
        for (a, b) in self.per_entry.iter_mut().zip(&other.per_entry) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.per_entry {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Result<&Tensor> {
        Ok(&self.per_entry[store.index_of(name)?])
    }

    pub fn per_entry(&self) -> &[Tensor] {
        &self.per_entry
    }

    pub fn l2_norm(&self) -> f64 {
        self.per_entry
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.per_entry
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter in the store.
pub fn adam_step(store: &mut ParamStore, grads: &FlatGrads, hp: &AdamParams) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (entry, grad) in store.entries.iter_mut().zip(grads.per_entry.iter()) {
        let g = grad.data();
        let m = entry.adam_m.data_mut();
        let v = entry.adam_v.data_mut();
        let p = entry.value.data_mut();
        for i in 0..g.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::vector(vec![1.0, -2.0, 3.0]))
            .unwrap();
        let grads = FlatGrads::zeros_like(&store);
        adam_step(&mut store, &grads, &AdamParams::default());
        assert_eq!(store.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With constant gradient 1, bias correction makes m_hat = 1 and
        // v_hat = 1, so the first step is lr / (1 + eps).
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(5.0)).unwrap();
        let mut grads = FlatGrads::zeros_like(&store);
        grads.per_entry[0].data_mut()[0] = 1.0;
        let hp = AdamParams {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut store, &grads, &hp);
        let x = store.get("x").unwrap().item().unwrap();
        assert!((x - 4.9).abs() < 1e-6, "x = {x}");
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0)).unwrap();
        let hp = AdamParams {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..200 {
            let x = store.get("x").unwrap().item().unwrap();
            let mut grads = FlatGrads::zeros_like(&store);
            grads.per_entry[0].data_mut()[0] = 2.0 * x;
            adam_step(&mut store, &grads, &hp);
        }
        let x = store.get("x").unwrap().item().unwrap();
        assert!(x.abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        assert!(store.insert("w", Tensor::scalar(1.0)).is_err());
    }
}
