use alloc::vec::Vec;

use super::{sign, softmax_cross_entropy, BnnModel, Quantization, BN_EPS};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{matmul, Tensor, Trans};

/// Loss change from negating a single binarized weight, on a fixed batch.
///
/// The model is borrowed immutably: a flip only ever exists inside one
/// evaluation, so nothing needs restoring afterwards.
pub struct FlipProbe<'a, T> {
    model: &'a BnnModel<T>,
    labels: Vec<u8>,
    inputs: Vec<Tensor<T>>,
    pres: Vec<Tensor<T>>,
    base_loss: T,
}

impl<'a, T: Real> FlipProbe<'a, T> {
    pub fn new(model: &'a BnnModel<T>, x: &Tensor<T>, labels: &[u8]) -> Result<Self> {
        let cache = model.forward_frozen(x)?;
        let (base_loss, _) = softmax_cross_entropy(cache.logits(), labels)?;
        let (inputs, pres) = cache.layers.into_iter().map(|c| (c.input, c.pre)).unzip();
        Ok(FlipProbe {
            model,
            labels: labels.to_vec(),
            inputs,
            pres,
            base_loss,
        })
    }

    pub fn base_loss(&self) -> T {
        self.base_loss
    }

    /// `L(W^b with entry (row, col) of layer negated) - L(W^b)`.
    pub fn delta_loss(&self, layer: usize, row: usize, col: usize) -> Result<T> {
        let layers = self.model.layers();
        let lyr = layers.get(layer).ok_or(Error::IndexOutOfRange {
            index: layer,
            len: layers.len(),
        })?;
        if row >= lyr.fan_out() {
            return Err(Error::IndexOutOfRange { index: row, len: lyr.fan_out() });
        }
        if col >= lyr.fan_in() {
            return Err(Error::IndexOutOfRange { index: col, len: lyr.fan_in() });
        }
        let h = lyr.hidden.data()[row * lyr.fan_in() + col];
        let w = match self.model.quantization() {
            Quantization::Binary => sign(h),
            Quantization::Surrogate => h,
        };
        let two_w = w + w;
        let input = &self.inputs[layer];
        let mut pre = self.pres[layer].clone();
        let out_dim = lyr.fan_out();
        for b in 0..pre.rows() {
            pre.data_mut()[b * out_dim + row] -= two_w * input.row(b)[col];
        }
        let logits = self.continue_from(layer, pre)?;
        let (loss, _) = softmax_cross_entropy(&logits, &self.labels)?;
        Ok(loss - self.base_loss)
    }

    /// Eval-mode forward from the pre-activation of `layer` onwards.
    fn continue_from(&self, layer: usize, mut pre: Tensor<T>) -> Result<Tensor<T>> {
        let eps = T::from_f64(BN_EPS);
        let layers = self.model.layers();
        let q = self.model.quantization();
        for l in layer..layers.len() {
            let lyr = &layers[l];
            let out_dim = lyr.fan_out();
            let (g, bt) = (lyr.gamma.data(), lyr.beta.data());
            let (rm, rv) = (lyr.running_mean.data(), lyr.running_var.data());
            let last = l + 1 == layers.len();
            let inv_std: Vec<T> = rv.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            for b in 0..pre.rows() {
                let r = pre.row_mut(b);
                for j in 0..out_dim {
                    let y = g[j] * ((r[j] - rm[j]) * inv_std[j]) + bt[j];
                    r[j] = if last {
                        y
                    } else {
                        match q {
                            Quantization::Binary => sign(y),
                            Quantization::Surrogate => y.max(-T::one()).min(T::one()),
                        }
                    };
                }
            }
            if last {
                return Ok(pre);
            }
            let next = &layers[l + 1];
            let w = match q {
                Quantization::Binary => next.hidden.map(sign),
                Quantization::Surrogate => next.hidden.clone(),
            };
            pre = matmul(&pre, Trans::N, &w, Trans::T)?;
        }
        Ok(pre)
    }
}
