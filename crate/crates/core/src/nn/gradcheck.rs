//! Central-difference verification of the analytic backward pass.
//!
//! Both sides are evaluated on an `f64` copy of the model so that the check
//! measures the backprop algebra, not single-precision roundoff. Inside one
//! activation region every parameter enters the output affinely and the loss is
//! quadratic, so central differences are exact there; when a ±h probe would
//! flip the sign of some leaky pre-activation the step is shrunk tenfold until
//! both probes stay in the base region.

use super::loss::mse_loss;
use super::network::{ModelState, NetworkSpec};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

const MAX_SHRINKS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Number of trainable scalar parameters compared.
    pub checked: usize,
    /// Parameters whose probe step had to be reduced to avoid a kink.
    pub shrunk: usize,
    /// `(layer, flat index)` of the worst parameter.
    pub worst: Option<(usize, usize)>,
}

/// Checks a freshly initialised network built from `spec` with `seed`.
pub fn gradient_check(
    spec: &NetworkSpec,
    input: &Tensor2D,
    target: &[f32],
    epsilon: f32,
    seed: u64,
) -> Result<GradCheckReport> {
    let model = ModelState::<f32>::init(spec.clone(), seed)?;
    gradient_check_model(&model, input, target, epsilon)
}

pub fn gradient_check_model(
    model: &ModelState<f32>,
    input: &Tensor2D,
    target: &[f32],
    epsilon: f32,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Precondition(format!(
            "finite-difference step must be positive, got {epsilon}"
        )));
    }
    let mut m: ModelState<f64> = model.cast();
    let x: Tensor2D<f64> = input.cast();
    let t: Vec<f64> = target.iter().map(|&v| v as f64).collect();

    let out = m.forward(&x)?;
    let (_, g) = mse_loss(&out, &t)?;
    m.backward(&g)?;
    let analytic: Vec<Vec<f64>> = m
        .grads()
        .iter()
        .map(|p| p.iter().copied().collect())
        .collect();
    m.zero_grad();
    let base = m.activation_pattern(&x)?;

    let loss_at = |m: &ModelState<f64>| -> Result<(f64, Vec<bool>)> {
        let out = m.infer(&x)?;
        let (l, _) = mse_loss(&out, &t)?;
        Ok((l, m.activation_pattern(&x)?))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        shrunk: 0,
        worst: None,
    };
    for layer in m.frozen_prefix()..m.spec().layers.len() {
        for idx in 0..m.params()[layer].len() {
            let orig = *m.params_mut()[layer].get_flat_mut(idx);
            let mut h = epsilon as f64;
            let mut shrinks = 0;
            let numeric = loop {
                *m.params_mut()[layer].get_flat_mut(idx) = orig + h;
                let (lp, pp) = loss_at(&m)?;
                *m.params_mut()[layer].get_flat_mut(idx) = orig - h;
                let (lm, pm) = loss_at(&m)?;
                *m.params_mut()[layer].get_flat_mut(idx) = orig;
                if (pp == base && pm == base) || shrinks == MAX_SHRINKS {
                    break (lp - lm) / (2.0 * h);
                }
                h /= 10.0;
                shrinks += 1;
            };
            if shrinks > 0 {
                report.shrunk += 1;
            }
            let a = analytic[layer][idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = Some((layer, idx));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
