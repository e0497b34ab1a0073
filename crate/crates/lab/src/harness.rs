//! Continual-learning runs: permuted tasks and class-balanced streams.
//!
//! All methods share the model init, data order and evaluation path. They
//! differ only in `m` (metaplastic update) and in the EWC gradient hook.

use std::time::Instant;

use log::info;
use metabnn_core::bnn::BnnModel;
use metabnn_core::data::{epoch_order, make_permuted_task, make_stream_splits, TaskView};
use metabnn_core::ewc::{consolidate_task, EwcPenalty, TaskAnchor};
use metabnn_core::meta::{train_step, MetaConfig, Optimizer};
use serde_json::json;

use crate::config::{ExperimentConfig, Method};
use crate::datasets::Splits;
use crate::error::Result;
use crate::metrics::{MetricsRecord, RunOutput};

pub const EVAL_CHUNK: usize = 1000;

pub const EWC_ANCHOR_NOTE: &str = "EWC anchors the hidden weights W^h; its Fisher importance is computed through the binarized weights sign(W^h). Which weights the original comparison anchored is an interpretation.";

/// Model, optimizer state and consolidation anchors of one run.
pub struct Learner {
    pub model: BnnModel<f32>,
    opt: Optimizer<f32>,
    meta: MetaConfig<f32>,
    lambda: f32,
    pub anchors: Vec<TaskAnchor<f32>>,
}

impl Learner {
    /// Does not validate the method constraints, so `m = 0` is allowed.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let model = BnnModel::<f32>::new(&cfg.layer_sizes(), cfg.seed)?;
        let opt = Optimizer::new(&model);
        Ok(Learner {
            meta: MetaConfig::new(cfg.m as f32, cfg.lr as f32)?,
            lambda: cfg.lambda as f32,
            model,
            opt,
            anchors: Vec::new(),
        })
    }

    /// `epochs` shuffled passes over `view`; epoch `e` uses order stream
    /// `stream_base + e`. Returns the mean batch loss of the last epoch.
    pub fn train(&mut self, view: &TaskView<'_>, epochs: usize, batch: usize, seed: u64, stream_base: u64) -> Result<f64> {
        let mut last = 0.0;
        for e in 0..epochs {
            let order = epoch_order(view.len(), seed, stream_base + e as u64);
            let (mut total, mut n) = (0.0f64, 0usize);
            for chunk in order.chunks(batch) {
                let (x, y) = view.gather::<f32>(chunk);
                let hook = EwcPenalty {
                    anchors: &self.anchors,
                    lambda: self.lambda,
                };
                let loss = train_step(&mut self.model, &mut self.opt, &x, &y, &self.meta, Some(&hook))?;
                total += loss as f64;
                n += 1;
            }
            last = total / n.max(1) as f64;
        }
        Ok(last)
    }

    pub fn consolidate(&mut self, view: &TaskView<'_>, n_samples: usize, seed: u64) -> Result<()> {
        consolidate_task(&self.model, view, n_samples, seed, &mut self.anchors)?;
        Ok(())
    }
}

/// Eval-mode accuracy on every example of `view`.
pub fn accuracy(model: &BnnModel<f32>, view: &TaskView<'_>) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in view.chunks(EVAL_CHUNK) {
        let (x, y) = view.gather::<f32>(&chunk);
        correct += model.count_correct(&x, &y)?;
    }
    Ok(correct as f64 / view.len().max(1) as f64)
}

fn record(run_id: &str, cfg: &ExperimentConfig, task_index: usize, eval_task: usize, acc: f64, start: &Instant) -> MetricsRecord {
    MetricsRecord {
        run_id: run_id.to_string(),
        seed: cfg.seed,
        method: cfg.method.to_string(),
        m: cfg.m,
        lambda: cfg.lambda,
        task_index,
        eval_task,
        accuracy: acc,
        wall_clock_s: start.elapsed().as_secs_f64(),
    }
}

fn notes(cfg: &ExperimentConfig) -> Vec<&'static str> {
    if cfg.method == Method::Ewc {
        vec![EWC_ANCHOR_NOTE]
    } else {
        Vec::new()
    }
}

/// Validates `cfg`, then trains the permuted-task sequence.
pub fn run_permuted(cfg: &ExperimentConfig, data: &Splits) -> Result<RunOutput> {
    run_permuted_unvalidated(&cfg.clone().validated()?, data)
}

/// Same as [`run_permuted`] without the method checks; lets `meta` run with
/// `m = 0` to compare against `plain`.
pub fn run_permuted_unvalidated(cfg: &ExperimentConfig, data: &Splits) -> Result<RunOutput> {
    let start = Instant::now();
    let run_id = format!("permuted-{}-h{}-s{}", cfg.method, cfg.hidden_size, cfg.seed);
    let mut learner = Learner::new(cfg)?;
    let mut records = Vec::new();
    let mut averages = Vec::new();
    for k in 0..cfg.n_tasks {
        let view = make_permuted_task(&data.train, cfg.seed, k);
        let loss = learner.train(&view, cfg.epochs_per_task, cfg.batch_size, cfg.seed, (k * cfg.epochs_per_task) as u64)?;
        if cfg.method == Method::Ewc {
            learner.consolidate(&view, cfg.fisher_samples, cfg.seed)?;
        }
        let mut accs = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let acc = accuracy(&learner.model, &make_permuted_task(&data.test, cfg.seed, j))?;
            accs.push(acc);
            records.push(record(&run_id, cfg, k + 1, j + 1, acc, &start));
        }
        let avg = accs.iter().sum::<f64>() / accs.len() as f64;
        info!("{run_id}: task {} loss {loss:.4} average accuracy {avg:.4}", k + 1);
        averages.push(avg);
    }
    let summary = json!({
        "run_id": run_id,
        "kind": "permuted",
        "config": cfg,
        "average_accuracy": averages,
        "final_accuracies": records.iter().filter(|r| r.task_index == cfg.n_tasks).map(|r| r.accuracy).collect::<Vec<_>>(),
        "notes": notes(cfg),
    });
    Ok(RunOutput { run_id, records, summary })
}

/// Trains the `k_splits` class-balanced subsets of the training set in
/// sequence and records full test accuracy after each.
fn stream_records(cfg: &ExperimentConfig, data: &Splits, run_id: &str) -> Result<Vec<MetricsRecord>> {
    let start = Instant::now();
    let split = make_stream_splits(data.train.labels(), cfg.k_splits, cfg.seed)?;
    let whole = TaskView::whole(&data.train);
    let test = TaskView::whole(&data.test);
    let mut learner = Learner::new(cfg)?;
    let mut records = Vec::new();
    for (s, subset) in split.subsets.iter().enumerate() {
        let view = whole.with_subset(subset.clone());
        learner.train(&view, cfg.epochs_per_task, cfg.batch_size, cfg.seed, (s * cfg.epochs_per_task) as u64)?;
        if cfg.method == Method::Ewc {
            learner.consolidate(&view, cfg.fisher_samples, cfg.seed)?;
        }
        let acc = accuracy(&learner.model, &test)?;
        info!("{run_id}: split {} accuracy {acc:.4}", s + 1);
        records.push(record(run_id, cfg, s + 1, 0, acc, &start));
    }
    Ok(records)
}

/// The reference for a stream run: the plain method on the whole training
/// set (a single split) for `epochs_per_task` epochs, i.e. the same number
/// of examples seen as the stream.
pub fn stream_baseline_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        method: Method::Plain,
        m: 0.0,
        lambda: 0.0,
        k_splits: 1,
        ..cfg.clone()
    }
}

/// Full-dataset baseline accuracy for [`run_stream`].
pub fn stream_baseline(cfg: &ExperimentConfig, data: &Splits) -> Result<f64> {
    let base = stream_baseline_config(&cfg.clone().validated()?);
    let run_id = format!("stream-baseline-h{}-s{}", base.hidden_size, base.seed);
    let recs = stream_records(&base, data, &run_id)?;
    Ok(recs.last().map_or(0.0, |r| r.accuracy))
}

/// Stream run plus the full-dataset baseline; `baseline` skips recomputing
/// it when already known for this seed and budget.
pub fn run_stream(cfg: &ExperimentConfig, data: &Splits, baseline: Option<f64>) -> Result<RunOutput> {
    let cfg = cfg.clone().validated()?;
    let run_id = format!("stream-{}-k{}-h{}-s{}", cfg.method, cfg.k_splits, cfg.hidden_size, cfg.seed);
    let records = stream_records(&cfg, data, &run_id)?;
    let baseline = match baseline {
        Some(b) => b,
        None => stream_baseline(&cfg, data)?,
    };
    let summary = json!({
        "run_id": run_id,
        "kind": "stream",
        "config": cfg,
        "accuracy_after_split": records.iter().map(|r| r.accuracy).collect::<Vec<_>>(),
        "final_accuracy": records.last().map(|r| r.accuracy),
        "baseline_accuracy": baseline,
        "baseline": "plain method, whole training set, epochs_per_task epochs",
        "notes": notes(&cfg),
    });
    Ok(RunOutput { run_id, records, summary })
}
