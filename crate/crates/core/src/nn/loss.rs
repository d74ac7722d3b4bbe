use crate::linalg::Matrix;
use crate::Real;

/// `log softmax` of one row via log-sum-exp.
pub fn log_softmax_row<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

/// Per-sample losses and the logits gradient of the batch-mean loss.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy<T> {
    pub per_sample: Vec<T>,
    pub mean: T,
    /// `∂ mean / ∂ logits = (softmax − onehot) / N`.
    pub grad: Matrix<T>,
}

/// Categorical cross-entropy on raw logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> CrossEntropy<T> {
    let (n, k) = logits.shape();
    debug_assert_eq!(labels.len(), n);
    let mut grad = Matrix::zeros(n, k);
    let mut per_sample = Vec::with_capacity(n);
    let inv_n = T::one() / T::from_usize(n.max(1)).unwrap();
    let mut logp = vec![T::zero(); k];
    for (r, &y) in labels.iter().enumerate() {
        log_softmax_row(logits.row(r), &mut logp);
        per_sample.push(-logp[y]);
        for (g, &lp) in grad.row_mut(r).iter_mut().zip(&logp) {
            *g = lp.exp() * inv_n;
        }
        grad[(r, y)] -= inv_n;
    }
    let mean = per_sample.iter().copied().sum::<T>() * inv_n;
    CrossEntropy { per_sample, mean, grad }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Matrix::<f64>::zeros(3, 10);
        let ce = softmax_cross_entropy(&logits, &[0, 4, 9]);
        assert!((ce.mean - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stable_for_large_logits() {
        let logits = Matrix::<f64>::from_rows(&[[1e3, -1e3, 0.0], [-1e3, -1e3, 1e3]]).unwrap();
        let ce = softmax_cross_entropy(&logits, &[1, 2]);
        assert!(ce.mean.is_finite());
        assert!((ce.per_sample[0] - 2e3).abs() < 1e-9);
        assert!(ce.per_sample[1].abs() < 1e-12);
        assert!(ce.grad.is_finite());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [0.0, 0.1, -0.1]]).unwrap();
        let ce = softmax_cross_entropy(&logits, &[2, 0]);
        for r in 0..2 {
            assert!(ce.grad.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
