//! Elastic weight consolidation for binarized networks.
//!
//! Importance is the empirical Fisher diagonal of the per-example
//! cross-entropy, with gradients taken through `sign(W^h)` and batch norm
//! fixed to its running statistics. The quadratic penalty anchors the hidden
//! weights themselves.

use alloc::vec::Vec;

use crate::bnn::{loss, BnnModel};
use crate::data::TaskView;
use crate::error::{Error, Result};
use crate::meta::WeightGradHook;
use crate::real::Real;
use crate::rng::{self, Purpose};
use crate::tensor::{matmul, Tensor, Trans};

pub const DEFAULT_FISHER_SAMPLES: usize = 2000;

const FISHER_CHUNK: usize = 500;

/// Hidden weights and their importance at the end of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAnchor<T> {
    pub anchor: Vec<Tensor<T>>,
    pub fisher: Vec<Tensor<T>>,
}

/// Fisher diagonal over exactly the examples at `positions` of `view`.
///
/// Frozen batch norm makes every example independent, so the per-example
/// weight gradient is the outer product `dpre_b x_b^T` and the sum of its
/// squares over a chunk is `(dpre^2)^T (x^2)`.
pub fn fisher_for_examples<T: Real>(model: &BnnModel<T>, view: &TaskView<'_>, positions: &[u32]) -> Result<Vec<Tensor<T>>> {
    if positions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&p) = positions.iter().find(|&&p| p as usize >= view.len()) {
        return Err(Error::IndexOutOfRange { index: p as usize, len: view.len() });
    }
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    let mut fisher: Vec<Tensor<T>> = model.layers().iter().map(|l| Tensor::zeros(l.hidden.shape())).collect();
    for chunk in sorted.chunks(FISHER_CHUNK) {
        let (x, labels) = view.gather::<T>(chunk);
        let cache = model.forward_frozen(&x)?;
        let (_, dlogits) = loss::per_example(cache.logits(), &labels)?;
        let grads = model.pre_activation_grads(&cache, dlogits)?;
        for ((f, g), lc) in fisher.iter_mut().zip(&grads).zip(&cache.layers) {
            let d2 = g.dpre.map(|v| v * v);
            let x2 = lc.input.map(|v| v * v);
            let part = matmul(&d2, Trans::T, &x2, Trans::N)?;
            for (a, &b) in f.data_mut().iter_mut().zip(part.data()) {
                *a += b;
            }
        }
    }
    let n = T::from_f64(sorted.len() as f64);
    for f in &mut fisher {
        f.data_mut().iter_mut().for_each(|v| *v /= n);
        f.check_finite()?;
    }
    Ok(fisher)
}

/// Empirical Fisher diagonal from `n_samples` examples of `view` drawn
/// without replacement (all of them if the view is smaller).
pub fn fisher_diagonal<T: Real>(model: &BnnModel<T>, view: &TaskView<'_>, n_samples: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1"));
    }
    let n = n_samples.min(view.len());
    let picks: Vec<u32> = rng::sample_indices(seed, Purpose::FisherSample, view.task_index() as u64, view.len(), n)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    fisher_for_examples(model, view, &picks)
}

fn check_anchor<T: Real>(hidden: &Tensor<T>, anchor: &TaskAnchor<T>, layer: usize) -> Result<()> {
    let (a, f) = match (anchor.anchor.get(layer), anchor.fisher.get(layer)) {
        (Some(a), Some(f)) => (a, f),
        _ => {
            return Err(Error::IndexOutOfRange {
                index: layer,
                len: anchor.anchor.len().min(anchor.fisher.len()),
            })
        }
    };
    a.expect_shape(hidden.shape())?;
    f.expect_shape(hidden.shape())
}

/// `lambda * sum_k F_k * (W^h - a_k)` for one layer.
pub fn ewc_penalty_grad<T: Real>(hidden: &Tensor<T>, anchors: &[TaskAnchor<T>], layer: usize, lambda: T) -> Result<Tensor<T>> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::InvalidArgument("lambda must be >= 0"));
    }
    let mut grad = Tensor::zeros(hidden.shape());
    for a in anchors {
        check_anchor(hidden, a, layer)?;
        let (anc, fis) = (a.anchor[layer].data(), a.fisher[layer].data());
        for (((g, &w), &c), &f) in grad.data_mut().iter_mut().zip(hidden.data()).zip(anc).zip(fis) {
            *g += f * (w - c);
        }
    }
    grad.data_mut().iter_mut().for_each(|g| *g *= lambda);
    Ok(grad)
}

/// `lambda / 2 * sum_k sum_layers F_k * (W^h - a_k)^2`.
pub fn ewc_penalty<T: Real>(hidden: &[Tensor<T>], anchors: &[TaskAnchor<T>], lambda: T) -> Result<T> {
    let mut total = T::zero();
    for a in anchors {
        for (l, h) in hidden.iter().enumerate() {
            check_anchor(h, a, l)?;
            for ((&w, &c), &f) in h.data().iter().zip(a.anchor[l].data()).zip(a.fisher[l].data()) {
                let d = w - c;
                total += f * d * d;
            }
        }
    }
    Ok(lambda * total / T::from_f64(2.0))
}

/// Snapshots the hidden weights and their Fisher diagonal onto `anchors`.
pub fn consolidate_task<T: Real>(
    model: &BnnModel<T>,
    view: &TaskView<'_>,
    n_samples: usize,
    seed: u64,
    anchors: &mut Vec<TaskAnchor<T>>,
) -> Result<()> {
    let fisher = fisher_diagonal(model, view, n_samples, seed)?;
    anchors.push(TaskAnchor {
        anchor: model.hidden_weights(),
        fisher,
    });
    Ok(())
}

/// Penalty hook for [`crate::meta::train_step`].
pub struct EwcPenalty<'a, T> {
    pub anchors: &'a [TaskAnchor<T>],
    pub lambda: T,
}

impl<T: Real> WeightGradHook<T> for EwcPenalty<'_, T> {
    fn add_weight_grad(&self, layer: usize, hidden: &Tensor<T>, grad: &mut Tensor<T>) -> Result<()> {
        if self.anchors.is_empty() || self.lambda == T::zero() {
            return Ok(());
        }
        let p = ewc_penalty_grad(hidden, self.anchors, layer, self.lambda)?;
        for (g, &v) in grad.data_mut().iter_mut().zip(p.data()) {
            *g += v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_permuted_task, LabeledDataset, PIXELS};
    use crate::meta::{train_step, MetaConfig, Optimizer};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, seed: u64) -> LabeledDataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let pixels = (0..n * PIXELS)
            .map(|i| {
                let class = labels[i / PIXELS] as usize;
                if (i % PIXELS) % 10 == class {
                    200 + r.gen_range(0..50)
                } else {
                    r.gen_range(0..60)
                }
            })
            .collect();
        LabeledDataset::new("synthetic", pixels, labels).unwrap()
    }

    fn trained_model(ds: &LabeledDataset) -> BnnModel<f64> {
        let mut model = BnnModel::<f64>::new(&[PIXELS, 16, 10], 3).unwrap();
        let mut opt = Optimizer::new(&model);
        let cfg = MetaConfig::plain(0.01).unwrap();
        let view = make_permuted_task(ds, 1, 0);
        for c in view.chunks(20).collect::<Vec<_>>() {
            let (x, y) = view.gather(&c);
            train_step(&mut model, &mut opt, &x, &y, &cfg, None).unwrap();
        }
        model
    }

    /// Per-example oracle: a single-example frozen forward and backward
    /// through the public surface, squared and averaged.
    fn fisher_oracle(model: &BnnModel<f64>, view: &TaskView<'_>, positions: &[u32]) -> Vec<Tensor<f64>> {
        let mut acc: Vec<Tensor<f64>> = model.layers().iter().map(|l| Tensor::zeros(l.hidden.shape())).collect();
        for &p in positions {
            let (x, y) = view.gather::<f64>(&[p]);
            let cache = model.forward_frozen(&x).unwrap();
            let g = model.backward(&cache, &y).unwrap();
            for (a, lg) in acc.iter_mut().zip(&g.layers) {
                for (s, &v) in a.data_mut().iter_mut().zip(lg.weight.data()) {
                    *s += v * v;
                }
            }
        }
        for a in &mut acc {
            a.data_mut().iter_mut().for_each(|v| *v /= positions.len() as f64);
        }
        acc
    }

    #[test]
    fn batch_fisher_matches_per_example_oracle() {
        let ds = synthetic(60, 1);
        let model = trained_model(&ds);
        let view = make_permuted_task(&ds, 9, 2);
        let picks: Vec<u32> = (0..60).step_by(3).collect();
        let fast = fisher_for_examples(&model, &view, &picks).unwrap();
        let slow = fisher_oracle(&model, &view, &picks);
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
        assert!(fast.iter().all(|f| f.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn single_sample_is_squared_gradient() {
        let ds = synthetic(20, 2);
        let model = trained_model(&ds);
        let view = make_permuted_task(&ds, 0, 0);
        let f = fisher_for_examples(&model, &view, &[7]).unwrap();
        let (x, y) = view.gather::<f64>(&[7]);
        let g = model.backward(&model.forward_frozen(&x).unwrap(), &y).unwrap();
        for (fl, gl) in f.iter().zip(&g.layers) {
            for (a, b) in fl.data().iter().zip(gl.weight.data()) {
                assert!((a - b * b).abs() <= 1e-15 * (1.0 + b * b));
            }
        }
    }

    #[test]
    fn saturated_outputs_give_zero_fisher() {
        let ds = synthetic(10, 3);
        let mut model = BnnModel::<f64>::new(&[PIXELS, 8, 10], 1).unwrap();
        // Output pinned by beta alone: logit of class 0 dominates for every
        // input, and every label is 0.
        let last = model.layers_mut().last_mut().unwrap();
        last.gamma = Tensor::zeros(&[10]);
        last.beta = Tensor::from_vec(&[10], {
            let mut b = vec![-800.0; 10];
            b[0] = 800.0;
            b
        })
        .unwrap();
        let labels = vec![0u8; 10];
        let pixels = (0..10).flat_map(|i| ds.image(i).to_vec()).collect();
        let zeroed = LabeledDataset::new("zero", pixels, labels).unwrap();
        let view = make_permuted_task(&zeroed, 0, 0);
        let f = fisher_diagonal(&model, &view, 10, 0).unwrap();
        assert!(f.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn order_invariant_and_deterministic() {
        let ds = synthetic(40, 4);
        let model = trained_model(&ds);
        let view = make_permuted_task(&ds, 5, 1);
        let a = fisher_for_examples(&model, &view, &[3, 17, 25, 9]).unwrap();
        let b = fisher_for_examples(&model, &view, &[25, 9, 3, 17]).unwrap();
        assert_eq!(a, b);
        let c = fisher_diagonal(&model, &view, 12, 8).unwrap();
        let d = fisher_diagonal(&model, &view, 12, 8).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn empty_view_is_an_error() {
        let ds = synthetic(10, 5);
        let model = BnnModel::<f64>::new(&[PIXELS, 4, 10], 0).unwrap();
        let view = make_permuted_task(&ds, 0, 0).with_subset(vec![]);
        assert_eq!(fisher_diagonal(&model, &view, 5, 0), Err(Error::EmptyDataset));
    }

    fn one_anchor(f: f64, a: f64) -> TaskAnchor<f64> {
        TaskAnchor {
            anchor: vec![Tensor::full(&[1, 1], a)],
            fisher: vec![Tensor::full(&[1, 1], f)],
        }
    }

    #[test]
    fn penalty_gradient_closed_form() {
        let h = Tensor::full(&[1, 1], 0.35);
        let g = ewc_penalty_grad(&h, &[one_anchor(2.0, 0.25)], 0, 5e-3).unwrap();
        assert!((g.data()[0] - 0.001).abs() < 1e-15);
        let z = ewc_penalty_grad(&h, &[one_anchor(2.0, 0.25)], 0, 0.0).unwrap();
        assert_eq!(z.data()[0], 0.0);
        let at = ewc_penalty_grad(&h, &[one_anchor(2.0, 0.35), one_anchor(7.0, 0.35)], 0, 1.0).unwrap();
        assert_eq!(at.data()[0], 0.0);
        assert!(ewc_penalty_grad(&Tensor::full(&[2, 1], 0.0), &[one_anchor(1.0, 0.0)], 0, 1.0).is_err());
        assert!(ewc_penalty_grad(&h, &[one_anchor(1.0, 0.0)], 0, -1.0).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let shapes = [[3usize, 4], [2, 3]];
        let rand_t = |r: &mut ChaCha8Rng, s: &[usize], lo: f64, hi: f64| {
            Tensor::from_vec(s, (0..s[0] * s[1]).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
        };
        let anchors: Vec<TaskAnchor<f64>> = (0..3)
            .map(|_| TaskAnchor {
                anchor: shapes.iter().map(|s| rand_t(&mut r, s, -1.0, 1.0)).collect(),
                fisher: shapes.iter().map(|s| rand_t(&mut r, s, 0.0, 2.0)).collect(),
            })
            .collect();
        let mut hidden: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_t(&mut r, s, -1.0, 1.0)).collect();
        let lambda = 0.7;
        assert!(ewc_penalty(&hidden, &anchors, lambda).unwrap() >= 0.0);
        let h = 1e-6;
        for l in 0..hidden.len() {
            let analytic = ewc_penalty_grad(&hidden[l], &anchors, l, lambda).unwrap();
            for i in 0..hidden[l].len() {
                let orig = hidden[l].data()[i];
                hidden[l].data_mut()[i] = orig + h;
                let up = ewc_penalty(&hidden, &anchors, lambda).unwrap();
                hidden[l].data_mut()[i] = orig - h;
                let down = ewc_penalty(&hidden, &anchors, lambda).unwrap();
                hidden[l].data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic.data()[i];
                assert!((fd - a).abs() <= 1e-6 * a.abs().max(1e-3), "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn consolidation_appends_immutable_snapshots() {
        let ds = synthetic(40, 6);
        let mut model = trained_model(&ds);
        let view = make_permuted_task(&ds, 2, 0);
        let mut anchors = Vec::new();
        consolidate_task(&model, &view, 20, 1, &mut anchors).unwrap();
        consolidate_task(&model, &view, 20, 1, &mut anchors).unwrap();
        assert_eq!(anchors.len(), 2);
        assert_eq!(anchors[0], anchors[1]);
        let snapshot = anchors[0].clone();

        let mut opt = Optimizer::new(&model);
        let cfg = MetaConfig::plain(0.05).unwrap();
        let (x, y) = view.gather(&(0..20).collect::<Vec<_>>());
        let hook = EwcPenalty { anchors: &anchors, lambda: 5e-3 };
        train_step(&mut model, &mut opt, &x, &y, &cfg, Some(&hook)).unwrap();
        assert_ne!(model.hidden_weights(), snapshot.anchor);
        assert_eq!(anchors[0], snapshot);

        consolidate_task(&model, &view, 20, 1, &mut anchors).unwrap();
        assert_eq!(anchors.len(), 3);
    }
}
