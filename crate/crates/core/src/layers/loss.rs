use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Mean softmax cross-entropy over the batch and its gradient `(softmax - onehot) / B`.
///
/// `logits` must be (B, classes, 1, 1).
pub fn softmax_xent(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let s = logits.shape();
    if s.height != 1 || s.width != 1 {
        return Err(Error::Shape(format!("logits must be Bx Cx1x1, got {s}")));
    }
    if labels.len() != s.batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.batch
        )));
    }
    let classes = s.channels;
    let batch = s.batch as f64;
    let mut grad = Tensor4::zeros(s);
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let z = logits.image(b);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[label];
        let g = grad.image_mut(b);
        for (gc, zc) in g.iter_mut().zip(z) {
            *gc = (zc - log_sum).exp() / batch;
        }
        g[label] -= 1.0 / batch;
    }
    let loss = loss / batch;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy evaluated to {loss}")));
    }
    Ok((loss, grad))
}

/// Index of the largest logit per image; ties go to the lowest class index.
pub fn argmax_classes(logits: &Tensor4) -> Vec<usize> {
    (0..logits.shape().batch)
        .map(|b| {
            let z = logits.image(b);
            let mut best = 0;
            for (i, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
