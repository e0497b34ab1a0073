//! Metaplastic consolidation of hidden weights.
//!
//! An update that pushes a hidden weight toward zero (and so toward flipping
//! its binarized value) is scaled by `f_meta(m, W^h) = 1 - tanh²(m W^h)`;
//! updates that grow `|W^h|` are applied unchanged. With `m = 0` the rule is
//! exactly the plain update.

use alloc::vec::Vec;

use crate::bnn::{AdamState, BnnModel, Mode};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Consolidation strength `m` and learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaConfig<T> {
    m: T,
    lr: T,
}

impl<T: Real> MetaConfig<T> {
    pub fn new(m: T, lr: T) -> Result<Self> {
        if !m.is_finite() || m < T::zero() {
            return Err(Error::InvalidArgument("consolidation strength m must be finite and >= 0"));
        }
        if !lr.is_finite() || lr <= T::zero() {
            return Err(Error::InvalidArgument("learning rate must be finite and > 0"));
        }
        Ok(MetaConfig { m, lr })
    }

    /// `m = 0`: no consolidation.
    pub fn plain(lr: T) -> Result<Self> {
        Self::new(T::zero(), lr)
    }

    pub fn m(&self) -> T {
        self.m
    }

    pub fn lr(&self) -> T {
        self.lr
    }
}

/// `tanh'(m w) = 1 - tanh²(m w)`, in `(0, 1]`.
///
/// Evaluated as `4e / (1 + e)²` with `e = exp(-2|m w|)`, which stays positive
/// far past the point where `1 - tanh²` cancels to zero.
#[inline]
pub fn f_meta<T: Real>(m: T, w: T) -> T {
    let x = (m * w).abs();
    let e = (-(x + x)).exp();
    let four = T::from_f64(4.0);
    four * e / ((T::one() + e) * (T::one() + e))
}

/// Applies `-lr * update` to `hidden`, attenuating the elements where
/// `update * hidden > 0` by `f_meta(m, hidden)` evaluated before the update.
pub fn metaplastic_step<T: Real>(hidden: &mut Tensor<T>, update: &Tensor<T>, cfg: &MetaConfig<T>) -> Result<()> {
    hidden.same_shape(update)?;
    hidden.check_finite()?;
    update.check_finite()?;
    let (m, lr) = (cfg.m, cfg.lr);
    for (w, &u) in hidden.data_mut().iter_mut().zip(update.data()) {
        let step = lr * u;
        if u * *w > T::zero() {
            *w -= step * f_meta(m, *w);
        } else {
            *w -= step;
        }
    }
    Ok(())
}

/// `param -= lr * update`, for parameters outside the consolidation rule.
pub fn plain_step<T: Real>(param: &mut Tensor<T>, update: &Tensor<T>, lr: T) -> Result<()> {
    param.same_shape(update)?;
    for (p, &u) in param.data_mut().iter_mut().zip(update.data()) {
        *p -= lr * u;
    }
    Ok(())
}

/// Extra gradient on hidden weights, added before the optimizer sees it.
pub trait WeightGradHook<T> {
    fn add_weight_grad(&self, layer: usize, hidden: &Tensor<T>, grad: &mut Tensor<T>) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdam<T> {
    pub weight: AdamState<T>,
    pub gamma: AdamState<T>,
    pub beta: AdamState<T>,
}

/// Adam state for every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub layers: Vec<LayerAdam<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(model: &BnnModel<T>) -> Self {
        Optimizer {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerAdam {
                    weight: AdamState::new(l.hidden.shape()),
                    gamma: AdamState::new(l.gamma.shape()),
                    beta: AdamState::new(l.beta.shape()),
                })
                .collect(),
        }
    }
}

/// One minibatch step: forward, backward, Adam directions, metaplastic
/// update of every hidden weight and plain update of BN parameters.
/// Returns the batch loss.
pub fn train_step<T: Real>(
    model: &mut BnnModel<T>,
    opt: &mut Optimizer<T>,
    batch: &Tensor<T>,
    labels: &[u8],
    cfg: &MetaConfig<T>,
    hook: Option<&dyn WeightGradHook<T>>,
) -> Result<T> {
    if opt.layers.len() != model.layers().len() {
        return Err(Error::InvalidArgument("optimizer does not match model"));
    }
    let cache = model.forward(batch, Mode::Train)?;
    let grads = model.backward(&cache, labels)?;
    if !grads.loss.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    for (l, (mut g, (layer, adam))) in grads
        .layers
        .into_iter()
        .zip(model.layers_mut().iter_mut().zip(opt.layers.iter_mut()))
        .enumerate()
    {
        if let Some(h) = hook {
            h.add_weight_grad(l, &layer.hidden, &mut g.weight)?;
        }
        let u = adam.weight.direction(&g.weight)?;
        metaplastic_step(&mut layer.hidden, &u, cfg)?;
        let u = adam.gamma.direction(&g.gamma)?;
        plain_step(&mut layer.gamma, &u, cfg.lr)?;
        let u = adam.beta.direction(&g.beta)?;
        plain_step(&mut layer.beta, &u, cfg.lr)?;
    }
    Ok(grads.loss)
}
