use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::real::Real;

/// Adam hyper-parameters and the per-epoch exponential learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.0005,
            decay: 0.96,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `base_lr * decay^epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub step: u64,
    pub epoch: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, model: &Mlp<T>) -> Self {
        let n = model.n_params();
        Self {
            config,
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
            step: 0,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr(self.epoch)
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the model
/// and the state untouched.
pub fn adam_step<T: Real>(
    model: &mut Mlp<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    if state.first.len() != model.n_params() {
        return Err(Error::ShapeMismatch("optimizer state does not match the model".into()));
    }
    state.step += 1;
    let c = &state.config;
    let t = state.step as i32;
    let lr = T::from_f64(c.lr(state.epoch));
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let one = T::one();
    let correct1 = T::from_f64(1.0 - c.beta1.powi(t));
    let correct2 = T::from_f64(1.0 - c.beta2.powi(t));
    let eps = T::from_f64(c.eps);
    let (first, second) = (&mut state.first, &mut state.second);
    model.zip_params_mut(grads, |i, p, g| {
        first[i] = b1 * first[i] + (one - b1) * g;
        second[i] = b2 * second[i] + (one - b2) * g * g;
        let m_hat = first[i] / correct1;
        let v_hat = second[i] / correct2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
    Ok(())
}
