use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn squeeze_predictions<T: Element>(pred: &Tensor<T>, target_len: usize) -> Result<()> {
    let ok = match pred.shape() {
        [n] => *n == target_len,
        [n, 1] => *n == target_len,
        _ => false,
    };
    if !ok {
        return Err(Error::shape(
            "mae_loss",
            format!("predictions {:?} incompatible with {} targets", pred.shape(), target_len),
        ));
    }
    Ok(())
}

/// `(1/N) Σ |pred_i - target_i|`
pub fn mae_forward<T: Element>(pred: &Tensor<T>, target: &[T]) -> Result<T> {
    if target.is_empty() {
        return Err(Error::invalid("mae_loss", "empty batch"));
    }
    squeeze_predictions(pred, target.len())?;
    let total = pred
        .data()
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t).abs());
    Ok(total / T::from_f64(target.len() as f64))
}

/// Subgradient `sign(pred - target) / N`, zero at exact ties.
pub fn mae_backward<T: Element>(pred: &[T], target: &[T], upstream: T) -> Vec<T> {
    let scale = upstream / T::from_f64(target.len() as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
///
/// Returns the loss and the softmax probabilities.
pub fn cross_entropy_forward<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let (n, classes) = match logits.shape() {
        [n, c] => (*n, *c),
        s => {
            return Err(Error::shape("softmax_cross_entropy", format!("logits must be [N,C], got {s:?}")));
        }
    };
    if n == 0 {
        return Err(Error::invalid("softmax_cross_entropy", "empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("label {bad} outside 0..{classes}"),
        ));
    }
    let mut probs = Vec::with_capacity(n * classes);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
        let log_sum = sum.ln();
        total = total + (log_sum - (row[label] - max));
        probs.extend(row.iter().map(|&v| ((v - max).exp()) / sum));
    }
    Ok((total / T::from_f64(n as f64), probs))
}

/// `(softmax - onehot) / N`
pub fn cross_entropy_backward<T: Element>(probs: &[T], labels: &[usize], upstream: T) -> Vec<T> {
    let n = labels.len();
    let classes = probs.len() / n;
    let scale = upstream / T::from_f64(n as f64);
    let mut grad: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (i, &l) in labels.iter().enumerate() {
        grad[i * classes + l] = grad[i * classes + l] - scale;
    }
    grad
}
