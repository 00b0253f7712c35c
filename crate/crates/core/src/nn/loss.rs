use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Mean squared error and its gradient `2(pred − target)/n`.
pub fn mse_loss<S: Scalar>(pred: &[S], target: &[S]) -> Result<(S, Vec<S>)> {
    if pred.len() != target.len() {
        return Err(Error::dim(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::dim("mse over zero values"));
    }
    let n = S::from_usize(pred.len()).unwrap();
    let two = S::of(2.0);
    let mut loss = S::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
