use crate::error::{Error, Result};

/// Softmax over the kept positions of `logits`; every other position is 0.
///
/// `keep` is treated as a set. The max over kept logits is subtracted before
/// exponentiation and terms are summed in ascending index order.
pub fn softmax_masked_row(logits: &[f64], keep: &[usize]) -> Result<Vec<f64>> {
    if keep.is_empty() {
        return Err(Error::EmptyKeepSet);
    }
    let mut idx = keep.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&last) = idx.last() {
        if last >= logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "keep index {last} outside row of length {}",
                logits.len()
            )));
        }
    }
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!(
            "logit {bad} is {}",
            logits[bad]
        )));
    }

    let max = idx
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; logits.len()];
    let mut denom = 0.0;
    for &i in &idx {
        let e = (logits[i] - max).exp();
        out[i] = e;
        denom += e;
    }
    for &i in &idx {
        out[i] /= denom;
    }
    Ok(out)
}

/// Softmax over every position.
pub fn softmax_row(logits: &[f64]) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..logits.len()).collect();
    softmax_masked_row(logits, &all)
}
