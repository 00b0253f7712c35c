use serde::{Deserialize, Serialize};

use super::network::{LayerParams, ModelState};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// First/second moment accumulators, one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<LayerParams<S>>,
    pub v: Vec<LayerParams<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub(crate) fn new(params: &[LayerParams<S>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(LayerParams::zeros_like).collect(),
            v: params.iter().map(LayerParams::zeros_like).collect(),
        }
    }
}

impl<S: Scalar> ModelState<S> {
    /// One bias-corrected Adam update of every unfrozen layer, then clears the
    /// gradient slots. Frozen layers keep their parameters and moments untouched.
    pub fn adam_step(&mut self, config: &OptimizerConfig) {
        let (spec, params, grads, opt) = self.parts_mut();
        opt.step += 1;
        let t = opt.step as i32;
        let b1 = S::of(config.beta1);
        let b2 = S::of(config.beta2);
        let lr = S::of(config.learning_rate);
        let eps = S::of(config.epsilon);
        let one = S::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for i in spec.frozen_prefix..spec.layers.len() {
            let update = |p: &mut [S], g: &mut [S], m: &mut [S], v: &mut [S]| {
                for (((p, g), m), v) in p.iter_mut().zip(g.iter_mut()).zip(m).zip(v) {
                    *m = b1 * *m + (one - b1) * *g;
                    *v = b2 * *v + (one - b2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    *g = S::zero();
                }
            };
            let (p, g) = (&mut params[i], &mut grads[i]);
            let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
            update(&mut p.weight, &mut g.weight, &mut m.weight, &mut v.weight);
            update(&mut p.bias, &mut g.bias, &mut m.bias, &mut v.bias);
        }
        for g in grads[..spec.frozen_prefix].iter_mut() {
            g.fill_zero();
        }
    }

    /// Multiplies every accumulated gradient by `factor` (minibatch averaging).
    pub fn scale_grads(&mut self, factor: S) {
        let (_, _, grads, _) = self.parts_mut();
        for g in grads.iter_mut() {
            g.weight.iter_mut().for_each(|v| *v = *v * factor);
            g.bias.iter_mut().for_each(|v| *v = *v * factor);
        }
    }
}
