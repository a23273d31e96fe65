//! Named parameter storage with persistent gradients.
//!
//! Parameters live outside any tape. Each training sample binds them onto a
//! fresh tape as leaves, runs forward/backward there, and scatters the leaf
//! gradients back here, so gradients accumulate across a batch the same way
//! they would with a single long tape.

use crate::scalar::Scalar;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name:?}"
        );
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self.entries[self.expect_slot(name)].value
    }

    pub fn grad_of(&self, name: &str) -> &Tensor<S> {
        &self.entries[self.expect_slot(name)].grad
    }

    /// Replace a parameter value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<S>) {
        let slot = self.expect_slot(name);
        assert_eq!(
            self.entries[slot].value.shape(),
            value.shape(),
            "set {name:?}: shape change"
        );
        self.entries[slot].value = value;
    }

    fn expect_slot(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order (deterministic).
    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<S>> {
        self.entries.iter()
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry<S> {
        &self.entries[slot]
    }

    pub fn entry_mut(&mut self, slot: usize) -> &mut ParamEntry<S> {
        &mut self.entries[slot]
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = S::zero();
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        let f = S::of(factor);
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = *g * f;
            }
        }
    }

    /// Euclidean norm of the concatenation of all gradients, accumulated in
    /// `f64` regardless of the stored scalar type.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| {
                let g = g.to_f64_lossy();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute gradient entry, for NaN/explosion diagnostics.
    pub fn max_abs_grad(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| g.abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }
}

/// Map from parameter names to their leaf [`Var`]s on one tape.
pub struct TapeBinding {
    vars: HashMap<String, Var>,
    slots: Vec<(usize, Var)>,
}

impl TapeBinding {
    /// Record every parameter as a leaf on `tape`.
    pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ParamStore<S>) -> Self {
        let mut vars = HashMap::new();
        let mut slots = Vec::with_capacity(params.len());
        for (slot, entry) in params.iter().enumerate() {
            let var = tape.leaf(entry.value.clone());
            vars.insert(entry.name.clone(), var);
            slots.push((slot, var));
        }
        TapeBinding { vars, slots }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("no bound parameter {name:?}"))
    }

    /// Add this tape's leaf gradients into the store's persistent gradients.
    pub fn scatter_grads<S: Scalar>(&self, tape: &Tape<S>, params: &mut ParamStore<S>) {
        for &(slot, var) in &self.slots {
            let src = tape.grad(var);
            let dst = params.entry_mut(slot).grad.data_mut();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_forward_scatter_roundtrip() {
        let mut params = ParamStore::<f64>::new();
        params.insert("w", Tensor::row(vec![2.0, -1.0]));

        // Two samples, each on its own tape: loss = sum(w ⊙ x).
        for x in [vec![1.0, 1.0], vec![3.0, 5.0]] {
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &params);
            let xs = tape.leaf(Tensor::row(x));
            let w = binding.var("w");
            let prod = tape.mul(w, xs);
            let loss = tape.sum(prod);
            tape.backward(loss).unwrap();
            binding.scatter_grads(&tape, &mut params);
        }
        // Gradients add across samples: [1+3, 1+5].
        assert_eq!(params.grad_of("w").data(), &[4.0, 6.0]);
        params.zero_grad();
        assert_eq!(params.grad_of("w").data(), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut params = ParamStore::<f64>::new();
        params.insert("w", Tensor::zeros(1, 1));
        params.insert("w", Tensor::zeros(1, 1));
    }
}
