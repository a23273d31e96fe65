//! Adam optimizer with bias-corrected moment estimates.

use crate::scalar::Scalar;
use crate::tensor::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far (bias correction uses step + 1).
    pub step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, params: &ParamStore<S>) -> Self {
        let m = params
            .iter()
            .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
            .collect();
        let v = params
            .iter()
            .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    /// Apply one update from the gradients currently held in `params`.
    pub fn apply(&mut self, params: &mut ParamStore<S>) {
        self.step += 1;
        let b1 = S::of(self.beta1);
        let b2 = S::of(self.beta2);
        let one = S::one();
        let lr = S::of(self.lr);
        let eps = S::of(self.eps);
        let corr1 = S::of(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = S::of(1.0 - self.beta2.powi(self.step as i32));
        for slot in 0..params.len() {
            let entry = params.entry_mut(slot);
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let g = entry.grad.data();
            let p = entry.value.data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// First/second moment tensors by slot, for checkpointing.
    pub fn moments(&self, slot: usize) -> (&Tensor<S>, &Tensor<S>) {
        (&self.m[slot], &self.v[slot])
    }

    pub fn set_moments(&mut self, slot: usize, m: Tensor<S>, v: Tensor<S>) {
        assert_eq!(self.m[slot].shape(), m.shape(), "adam m shape");
        assert_eq!(self.v[slot].shape(), v.shape(), "adam v shape");
        self.m[slot] = m;
        self.v[slot] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One hand-computed Adam step on a single weight.
    #[test]
    fn first_step_matches_hand_calculation() {
        let mut params = ParamStore::<f64>::new();
        params.insert("w", Tensor::scalar(1.0));
        // Pretend backward produced gradient 0.5.
        params.entry_mut(0).grad = Tensor::scalar(0.5);

        let mut adam = Adam::new(0.1, &params);
        adam.apply(&mut params);

        // m = 0.1·0.5 = 0.05, v = 0.001·0.25 = 2.5e-4
        // m̂ = 0.05/0.1 = 0.5, v̂ = 2.5e-4/0.001 = 0.25
        // w = 1 − 0.1·0.5/(0.5 + 1e-8)
        let expected = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8);
        let got = params.get("w").data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn descends_a_quadratic() {
        use crate::tensor::params::TapeBinding;
        use crate::tensor::tape::Tape;

        let mut params = ParamStore::<f64>::new();
        params.insert("x", Tensor::scalar(4.0));
        let mut adam = Adam::new(0.05, &params);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            params.zero_grad();
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &params);
            let x = binding.var("x");
            let sq = tape.mul(x, x);
            let loss = tape.sum(sq);
            tape.backward(loss).unwrap();
            binding.scatter_grads(&tape, &mut params);
            adam.apply(&mut params);
            last = tape.data(loss)[0];
        }
        assert!(last < 1e-2, "quadratic did not descend: {last}");
    }
}
