use super::tape::masked_softmax;
use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

/// Added inside the logarithm of [`cross_entropy`].
pub const CE_EPSILON: f64 = 1e-12;

/// Softmax of a rank-1 tensor, optionally restricted to the `true` entries of
/// `mask`. Masked positions come out exactly zero.
pub fn softmax<F: Real>(logits: &Tensor<F>, mask: Option<&[bool]>) -> Result<Tensor<F>> {
    if logits.rank() != 1 {
        return invalid("softmax expects a rank-1 tensor");
    }
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return invalid(format!(
                "mask has {} entries, logits {}",
                m.len(),
                logits.len()
            ));
        }
        if !m.iter().any(|&b| b) {
            return invalid("mask selects no entries");
        }
    }
    Ok(Tensor::vector(masked_softmax(logits.data(), mask)))
}

/// `-ln(probs[target] + 1e-12)`.
pub fn cross_entropy<F: Real>(probs: &Tensor<F>, target: usize) -> Result<F> {
    if target >= probs.len() {
        return invalid(format!(
            "target {target} out of range for {} classes",
            probs.len()
        ));
    }
    Ok(-(probs.data()[target] + F::lit(CE_EPSILON)).ln())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// [`argmax`] over the entries allowed by `mask`.
pub fn masked_argmax<F: Real>(values: &[F], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask[i] && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
