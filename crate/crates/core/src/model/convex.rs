//! L2-regularized multinomial logistic regression: `logits = W·x`.

use super::{softmax, Batch, ConvexConfig, Input};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub(super) const WEIGHT: &str = "W";

fn features(input: &Input, dim: usize) -> Result<&[f64]> {
    match input {
        Input::Vector(x) if x.len() == dim => Ok(x),
        Input::Vector(x) => Err(Error::contract(format!(
            "feature vector of length {} for a model with feature_dim {dim}",
            x.len()
        ))),
        Input::Tokens(_) => Err(Error::contract("convex model needs vector inputs")),
    }
}

/// Returns the loss and per-sample class probabilities.
pub(super) fn forward(w: &Matrix, cfg: &ConvexConfig, batch: &Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    for s in batch.samples() {
        let x = features(&s.input, cfg.feature_dim)?;
        let z = w.mul_vec(x);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite activation in layer W"));
        }
        let (p, log_p) = softmax(&z);
        total -= log_p[s.label];
        probs.push(p);
    }
    let data_loss = total / batch.len() as f64;
    let reg = 0.5 * cfg.l2_lambda * w.frobenius_dot(w);
    Ok((data_loss + reg, probs))
}

pub(super) fn backward(w: &Matrix, cfg: &ConvexConfig, batch: &Batch<'_>, probs: &[Vec<f64>]) -> Result<Matrix> {
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = w.scaled(cfg.l2_lambda);
    for (s, p) in batch.samples().iter().zip(probs) {
        let x = features(&s.input, cfg.feature_dim)?;
        for c in 0..cfg.num_classes {
            let coef = (p[c] - if c == s.label { 1.0 } else { 0.0 }) * inv_b;
            if coef == 0.0 {
                continue;
            }
            for (g, &xv) in grad.row_mut(c).iter_mut().zip(x) {
                *g += coef * xv;
            }
        }
    }
    Ok(grad)
}

pub(super) fn logits(w: &Matrix, cfg: &ConvexConfig, input: &Input) -> Result<Vec<f64>> {
    Ok(w.mul_vec(features(input, cfg.feature_dim)?))
}
