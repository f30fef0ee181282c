use super::Tensor;
use crate::error::ensure;
use crate::Result;

const ROW_SUM_TOL: f64 = 1e-9;

/// Row-wise softmax with max-shift.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean soft-target cross-entropy and its gradient w.r.t. the logits.
///
/// Each target row must be a probability vector. The gradient is
/// `(softmax(logits) - targets) / n`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    ensure!(
        logits.shape() == targets.shape() && logits.shape().len() == 2,
        Shape,
        "logits {:?} vs targets {:?}",
        logits.shape(),
        targets.shape()
    );
    let (n, c) = (logits.rows(), logits.cols());
    ensure!(n >= 1, Shape, "empty batch");
    for (i, row) in targets.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        ensure!(
            row.iter().all(|&t| (0.0..=1.0).contains(&t)) && (sum - 1.0).abs() <= ROW_SUM_TOL,
            Contract,
            "target row {} is not a probability vector (sum {})",
            i,
            sum
        );
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (z, t) in logits.iter_rows().zip(targets.iter_rows()) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (&zv, &tv) in z.iter().zip(t) {
            let log_p = zv - lse;
            if tv > 0.0 {
                loss -= tv * log_p;
            }
            grad.push((log_p.exp() - tv) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::matrix(n, c, grad)?))
}
