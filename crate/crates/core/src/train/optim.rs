//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// Default hyperparameters: `lr = 1e-3, β₁ = 0.9, β₂ = 0.999, ε = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the stored gradients. Every gradient is
    /// checked before any value changes.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.grad().iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::invalid("adam", "parameter set changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        // folds both bias corrections into the step size
        let alpha = T::lit(self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t)));
        let eps = T::lit(self.eps * (1.0 - self.beta2.powi(t)).sqrt());
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (value, grad) = p.value_grad_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + c1 * g;
                v[i] = b2 * v[i] + c2 * g * g;
                value[i] -= alpha * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}
