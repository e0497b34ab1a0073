//! Binarized multilayer perceptron.
//!
//! Each layer is `BN(sign(W^h) x)`; hidden layers follow it with a sign
//! activation, the output layer emits the normalized value as logits.
//! Gradients use the straight-through estimator: the gradient w.r.t. the
//! binarized weight is applied to the hidden weight unchanged, and the sign
//! activation passes gradient only where the BN output lies in `[-1, 1]`.

mod adam;
mod flip;
pub(crate) mod loss;

pub use adam::{adam_direction, AdamState};
pub use flip::FlipProbe;
pub use loss::softmax_cross_entropy;

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, Purpose};
use crate::tensor::{matmul, Tensor, Trans};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// Elementwise `sign` of a finite tensor, onto `{-1, +1}`.
pub fn binarize<T: Real>(w: &Tensor<T>) -> Result<Tensor<T>> {
    w.check_finite()?;
    Ok(w.map(sign))
}

/// How the binary nonlinearities are realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quantization {
    /// `W^b = sign(W^h)`, hidden activations `sign(z)`.
    #[default]
    Binary,
    /// Weights used as-is and hidden activations `hardtanh(z)`: the smooth
    /// network whose exact gradient is what the straight-through estimator
    /// computes. Used for finite-difference checks.
    Surrogate,
}

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is cached for backward.
    Eval,
    /// Running statistics, with a gradient cache. Examples are independent.
    Frozen,
}

/// One binarized linear map followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLinear<T> {
    /// `[fan_out x fan_in]`, unbounded, never clipped.
    pub hidden: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BinaryLinear<T> {
    /// Layer with the given hidden weights and identity normalization.
    pub fn from_hidden(hidden: Tensor<T>) -> Result<Self> {
        if hidden.shape().len() != 2 {
            return Err(Error::InvalidArgument("hidden weights must be 2-D"));
        }
        let out = hidden.rows();
        Ok(BinaryLinear {
            hidden,
            gamma: Tensor::full(&[out], T::one()),
            beta: Tensor::zeros(&[out]),
            running_mean: Tensor::zeros(&[out]),
            running_var: Tensor::full(&[out], T::one()),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.hidden.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.hidden.rows()
    }

    fn effective_weight(&self, q: Quantization) -> Result<Tensor<T>> {
        match q {
            Quantization::Binary => binarize(&self.hidden),
            Quantization::Surrogate => Ok(self.hidden.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    pub(crate) input: Tensor<T>,
    pub(crate) weight: Tensor<T>,
    pub(crate) pre: Tensor<T>,
    pub(crate) xhat: Tensor<T>,
    pub(crate) inv_std: Vec<T>,
    pub(crate) out: Tensor<T>,
}

/// Intermediates of a forward pass, consumed by [`BnnModel::backward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    mode: Mode,
    logits: Tensor<T>,
    pub(crate) layers: Vec<LayerCache<T>>,
}

impl<T: Real> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn into_logits(self) -> Tensor<T> {
        self.logits
    }

    /// `W^b x` of layer `l`, before normalization.
    pub fn pre_activation(&self, l: usize) -> Option<&Tensor<T>> {
        self.layers.get(l).map(|c| &c.pre)
    }

    /// Batch-norm output of layer `l`.
    pub fn bn_output(&self, l: usize) -> Option<&Tensor<T>> {
        self.layers.get(l).map(|c| &c.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// Mean cross-entropy of the batch.
    pub loss: T,
    pub layers: Vec<LayerGrad<T>>,
}

pub(crate) struct PreGrad<T> {
    pub(crate) dpre: Tensor<T>,
    pub(crate) dgamma: Tensor<T>,
    pub(crate) dbeta: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnnModel<T> {
    layers: Vec<BinaryLinear<T>>,
    quantization: Quantization,
}

impl<T: Real> BnnModel<T> {
    /// Fresh model for `sizes = [input, hidden.., output]`, hidden weights
    /// drawn from `U(±√(6 / (fan_in + fan_out)))`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument("need at least two non-zero layer sizes"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
                let dist = Uniform::new_inclusive(-bound, bound);
                let mut rng = rng::stream(seed, Purpose::Init, l as u64);
                let data = (0..fan_in * fan_out)
                    .map(|_| T::from_f64(dist.sample(&mut rng)))
                    .collect();
                BinaryLinear::from_hidden(Tensor::from_vec(&[fan_out, fan_in], data)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BnnModel {
            layers,
            quantization: Quantization::Binary,
        })
    }

    pub fn from_layers(layers: Vec<BinaryLinear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::ShapeMismatch {
                    expected: vec![pair[0].fan_out()],
                    actual: vec![pair[1].fan_in()],
                });
            }
        }
        for l in &layers {
            let out = [l.fan_out()];
            l.gamma.expect_shape(&out)?;
            l.beta.expect_shape(&out)?;
            l.running_mean.expect_shape(&out)?;
            l.running_var.expect_shape(&out)?;
        }
        Ok(BnnModel {
            layers,
            quantization: Quantization::Binary,
        })
    }

    pub fn with_quantization(mut self, q: Quantization) -> Self {
        self.quantization = q;
        self
    }

    pub fn quantization(&self) -> Quantization {
        self.quantization
    }

    pub fn layers(&self) -> &[BinaryLinear<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [BinaryLinear<T>] {
        &mut self.layers
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(|l| l.fan_out()));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Snapshot of every hidden-weight tensor.
    pub fn hidden_weights(&self) -> Vec<Tensor<T>> {
        self.layers.iter().map(|l| l.hidden.clone()).collect()
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_size() || x.rows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![x.shape().first().copied().unwrap_or(0).max(1), self.input_size()],
                actual: x.shape().to_vec(),
            });
        }
        x.check_finite()
    }

    /// Forward pass; `Mode::Train` also folds the batch statistics into the
    /// running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Cache<T>> {
        let (cache, stats) = self.propagate(x, mode)?;
        if mode == Mode::Train {
            let mom = T::from_f64(BN_MOMENTUM);
            let b = x.rows();
            let unbias = if b > 1 {
                T::from_f64(b as f64 / (b as f64 - 1.0))
            } else {
                T::one()
            };
            for (layer, (mean, var)) in self.layers.iter_mut().zip(stats) {
                for ((rm, rv), (m, v)) in layer
                    .running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(layer.running_var.data_mut())
                    .zip(mean.iter().zip(&var))
                {
                    *rm = (T::one() - mom) * *rm + mom * *m;
                    *rv = (T::one() - mom) * *rv + mom * *v * unbias;
                }
            }
        }
        Ok(cache)
    }

    /// Forward with running statistics and a gradient cache, without
    /// touching the model.
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Result<Cache<T>> {
        Ok(self.propagate(x, Mode::Frozen)?.0)
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.propagate(x, Mode::Eval)?.0.logits)
    }

    /// Eval-mode mean cross-entropy.
    pub fn eval_loss(&self, x: &Tensor<T>, labels: &[u8]) -> Result<T> {
        let logits = self.predict(x)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Number of eval-mode predictions that match `labels`.
    pub fn count_correct(&self, x: &Tensor<T>, labels: &[u8]) -> Result<usize> {
        let logits = self.predict(x)?;
        if labels.len() != logits.rows() {
            return Err(Error::ShapeMismatch {
                expected: vec![logits.rows()],
                actual: vec![labels.len()],
            });
        }
        Ok(labels
            .iter()
            .enumerate()
            .filter(|(b, &y)| argmax(logits.row(*b)) == y as usize)
            .count())
    }

    #[allow(clippy::type_complexity)]
    fn propagate(&self, x: &Tensor<T>, mode: Mode) -> Result<(Cache<T>, Vec<(Vec<T>, Vec<T>)>)> {
        self.check_batch(x)?;
        let record = mode != Mode::Eval;
        let eps = T::from_f64(BN_EPS);
        let n_layers = self.layers.len();
        let batch = x.rows();
        let mut caches = Vec::with_capacity(if record { n_layers } else { 0 });
        let mut stats = Vec::new();
        let mut input = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let weight = layer.effective_weight(self.quantization)?;
            let pre = matmul(&input, Trans::N, &weight, Trans::T)?;
            let out_dim = layer.fan_out();
            let (mean, var) = if mode == Mode::Train {
                let (m, v) = batch_moments(&pre);
                (m, v)
            } else {
                (layer.running_mean.data().to_vec(), layer.running_var.data().to_vec())
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = Tensor::zeros(&[batch, out_dim]);
            let mut out = Tensor::zeros(&[batch, out_dim]);
            let gamma = layer.gamma.data();
            let beta = layer.beta.data();
            {
                let (pd, xd, od) = (pre.data(), xhat.data_mut(), out.data_mut());
                for b in 0..batch {
                    for j in 0..out_dim {
                        let k = b * out_dim + j;
                        let xh = (pd[k] - mean[j]) * inv_std[j];
                        xd[k] = xh;
                        od[k] = gamma[j] * xh + beta[j];
                    }
                }
            }
            let next = if l + 1 < n_layers {
                Some(match self.quantization {
                    Quantization::Binary => out.map(sign),
                    Quantization::Surrogate => out.map(|v| v.max(-T::one()).min(T::one())),
                })
            } else {
                None
            };
            if mode == Mode::Train {
                stats.push((mean, var));
            }
            let logits_or_next = match next {
                Some(a) => a,
                None => out.clone(),
            };
            if record {
                caches.push(LayerCache {
                    input,
                    weight,
                    pre,
                    xhat,
                    inv_std,
                    out,
                });
            }
            input = logits_or_next;
        }
        Ok((
            Cache {
                mode,
                logits: input,
                layers: caches,
            },
            stats,
        ))
    }

    /// Mean cross-entropy gradients w.r.t. hidden weights (straight-through)
    /// and batch-norm parameters.
    pub fn backward(&self, cache: &Cache<T>, labels: &[u8]) -> Result<Gradients<T>> {
        if cache.mode == Mode::Eval {
            return Err(Error::EvalCache);
        }
        let (loss, dlogits) = softmax_cross_entropy(&cache.logits, labels)?;
        let pre = self.pre_activation_grads(cache, dlogits)?;
        let layers = pre
            .into_iter()
            .zip(&cache.layers)
            .map(|(g, lc)| {
                Ok(LayerGrad {
                    weight: matmul(&g.dpre, Trans::T, &lc.input, Trans::N)?,
                    gamma: g.dgamma,
                    beta: g.dbeta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { loss, layers })
    }

    /// Backpropagates `dlogits` to the gradient of every layer's
    /// pre-normalization activation.
    pub(crate) fn pre_activation_grads(&self, cache: &Cache<T>, dlogits: Tensor<T>) -> Result<Vec<PreGrad<T>>> {
        if cache.mode == Mode::Eval {
            return Err(Error::EvalCache);
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("cache does not belong to this model"));
        }
        dlogits.expect_shape(cache.logits.shape())?;
        let batch = dlogits.rows();
        let bt = T::from_f64(batch as f64);
        let mut grads: Vec<PreGrad<T>> = Vec::with_capacity(self.layers.len());
        let mut dy = dlogits;
        for l in (0..self.layers.len()).rev() {
            let lc = &cache.layers[l];
            let layer = &self.layers[l];
            let out_dim = layer.fan_out();
            let gamma = layer.gamma.data();
            let mut dgamma = Tensor::zeros(&[out_dim]);
            let mut dbeta = Tensor::zeros(&[out_dim]);
            {
                let (dg, db) = (dgamma.data_mut(), dbeta.data_mut());
                for b in 0..batch {
                    let (dyr, xh) = (dy.row(b), lc.xhat.row(b));
                    for j in 0..out_dim {
                        dg[j] += dyr[j] * xh[j];
                        db[j] += dyr[j];
                    }
                }
            }
            // dxhat = dy * gamma, reusing the dy buffer.
            let mut dpre = dy;
            for b in 0..batch {
                let r = dpre.row_mut(b);
                for j in 0..out_dim {
                    r[j] *= gamma[j];
                }
            }
            match cache.mode {
                Mode::Train => {
                    let mut sum_d = vec![T::zero(); out_dim];
                    let mut sum_dx = vec![T::zero(); out_dim];
                    for b in 0..batch {
                        let (d, xh) = (dpre.row(b), lc.xhat.row(b));
                        for j in 0..out_dim {
                            sum_d[j] += d[j];
                            sum_dx[j] += d[j] * xh[j];
                        }
                    }
                    let (xd, dd) = (lc.xhat.data(), dpre.data_mut());
                    for b in 0..batch {
                        for j in 0..out_dim {
                            let k = b * out_dim + j;
                            dd[k] = lc.inv_std[j] / bt * (bt * dd[k] - sum_d[j] - xd[k] * sum_dx[j]);
                        }
                    }
                }
                _ => {
                    for b in 0..batch {
                        for (d, s) in dpre.row_mut(b).iter_mut().zip(lc.inv_std.iter()) {
                            *d *= *s;
                        }
                    }
                }
            }
            dy = if l > 0 {
                let mut dx = matmul(&dpre, Trans::N, &lc.weight, Trans::N)?;
                let prev_out = &cache.layers[l - 1].out;
                for (g, &z) in dx.data_mut().iter_mut().zip(prev_out.data()) {
                    if z.abs() > T::one() {
                        *g = T::zero();
                    }
                }
                dx
            } else {
                Tensor::zeros(&[0, 0])
            };
            grads.push(PreGrad { dpre, dgamma, dbeta });
        }
        grads.reverse();
        Ok(grads)
    }
}

fn batch_moments<T: Real>(pre: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = (pre.rows(), pre.cols());
    let n = T::from_f64(rows as f64);
    let mut mean = vec![T::zero(); cols];
    for b in 0..rows {
        for (m, &v) in mean.iter_mut().zip(pre.row(b)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); cols];
    for b in 0..rows {
        for ((s, &v), &m) in var.iter_mut().zip(pre.row(b)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Index of the largest entry (first one on ties).
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
