use alloc::vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits, `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    let batch = logits.rows();
    let (loss_sum, mut grad) = per_example(logits, labels)?;
    let inv = T::one() / T::from_f64(batch as f64);
    grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    Ok((loss_sum * inv, grad))
}

/// Summed loss and the *unscaled* per-example gradients `softmax - onehot`.
pub(crate) fn per_example<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), logits.shape().last().copied().unwrap_or(0)],
            actual: logits.shape().to_vec(),
        });
    }
    let classes = logits.cols();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::IndexOutOfRange { index: label, len: classes });
        }
        let row = logits.row(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = grad.row_mut(b);
        let mut z = T::zero();
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            z += *gi;
        }
        total += z.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi /= z;
        }
        g[label] -= T::one();
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_ten() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let data: alloc::vec::Vec<f32> = (0..40).map(|i| ((i * 37) % 11) as f32 * 0.7 - 3.0).collect();
        let logits = Tensor::from_vec(&[4, 10], data).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[1, 2, 3, 9]).unwrap();
        for b in 0..4 {
            let s: f32 = grad.row(b).iter().sum();
            assert!(s.abs() < 1e-6, "row {b} sums to {s}");
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor::<f32>::zeros(&[1, 10]);
        assert!(softmax_cross_entropy(&logits, &[10]).is_err());
    }
}
