//! Gradient-free functional versions of the probability ops.

use super::kernels;
use super::{Float, Tensor};
use crate::error::{ensure, Result};

fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (outer, len, inner)
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    ensure!(
        axis < logits.shape().len(),
        "softmax axis {axis} is out of range for shape {:?}",
        logits.shape()
    );
    let (outer, len, inner) = lanes(logits.shape(), axis);
    let x = logits.values();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            kernels::softmax_lane(x, &mut out, o * len * inner + i, inner, len);
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub fn log_softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    ensure!(
        axis < logits.shape().len(),
        "log_softmax axis {axis} is out of range for shape {:?}",
        logits.shape()
    );
    let (outer, len, inner) = lanes(logits.shape(), axis);
    let x = logits.values();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            kernels::log_softmax_lane(x, &mut out, o * len * inner + i, inner, len);
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean negative log-likelihood of `gold_ids` under row-wise log-probabilities.
pub fn cross_entropy(log_probs: &Tensor, gold_ids: &[usize]) -> Result<Float> {
    let vocab = log_probs.cols();
    ensure!(
        log_probs.rows() == gold_ids.len(),
        "{} distribution rows for {} gold ids",
        log_probs.rows(),
        gold_ids.len()
    );
    ensure!(
        !gold_ids.is_empty(),
        "cross_entropy needs at least one position"
    );
    let mut total = 0.0;
    for (t, &gold) in gold_ids.iter().enumerate() {
        ensure!(
            gold < vocab,
            "gold id {gold} outside vocabulary of size {vocab}"
        );
        total -= log_probs.at(t, gold);
    }
    Ok((total / gold_ids.len() as Float).max(0.0))
}
