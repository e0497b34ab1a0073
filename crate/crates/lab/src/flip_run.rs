//! Loss increase from flipping single binarized weights of a trained
//! network, against the magnitude of their hidden weights.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use metabnn_core::bnn::{BinaryLinear, BnnModel, FlipProbe};
use metabnn_core::data::{make_permuted_task, TaskView};
use metabnn_core::rng::{sample_indices, Purpose};
use metabnn_core::stats;
use metabnn_core::toy::bin_means;
use metabnn_core::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::datasets::Splits;
use crate::error::{LabError, Result};
use crate::harness::{accuracy, Learner};
use crate::metrics::write_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerState {
    shape: Vec<usize>,
    hidden: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
}

/// JSON model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    layers: Vec<LayerState>,
}

impl Checkpoint {
    pub fn of(model: &BnnModel<f32>) -> Self {
        Checkpoint {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerState {
                    shape: l.hidden.shape().to_vec(),
                    hidden: l.hidden.data().to_vec(),
                    gamma: l.gamma.data().to_vec(),
                    beta: l.beta.data().to_vec(),
                    running_mean: l.running_mean.data().to_vec(),
                    running_var: l.running_var.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<BnnModel<f32>> {
        let layers = self
            .layers
            .into_iter()
            .map(|s| {
                let out = s.shape.first().copied().unwrap_or(0);
                let mut l = BinaryLinear::from_hidden(Tensor::from_vec(&s.shape, s.hidden)?)?;
                l.gamma = Tensor::from_vec(&[out], s.gamma)?;
                l.beta = Tensor::from_vec(&[out], s.beta)?;
                l.running_mean = Tensor::from_vec(&[out], s.running_mean)?;
                l.running_var = Tensor::from_vec(&[out], s.running_var)?;
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BnnModel::from_layers(layers)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipRow {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub wh_abs: f64,
    pub wh_norm: f64,
    #[serde(rename = "delta_L")]
    pub delta_l: f64,
}

#[derive(Debug, Clone)]
pub struct FlipOutput {
    pub rows: Vec<FlipRow>,
    pub bins: Vec<metabnn_core::toy::Bin>,
    /// Spearman over sampled weights of `|W^h|` and `delta_L`.
    pub spearman_weights: Option<f64>,
    /// Spearman over non-empty bins of bin centre and mean `delta_L`.
    pub spearman_bins: Option<f64>,
    pub base_loss: f64,
    pub test_accuracy: f64,
    /// Eval logits on the batch were bitwise unchanged by the probes.
    pub restored: bool,
    pub model: BnnModel<f32>,
}

/// Trains on the unpermuted training set for `epochs_per_task` epochs.
pub fn train_reference_model(cfg: &ExperimentConfig, data: &Splits) -> Result<BnnModel<f32>> {
    let cfg = cfg.clone().validated()?;
    let mut learner = Learner::new(&cfg)?;
    let view = make_permuted_task(&data.train, cfg.seed, 0);
    learner.train(&view, cfg.epochs_per_task, cfg.batch_size, cfg.seed, 0)?;
    Ok(learner.model)
}

/// Samples `n_weights` hidden weights, an equal share from each layer, and
/// measures the loss change of flipping each one on the first `eval_batch`
/// test examples.
pub fn run_flip_importance(cfg: &ExperimentConfig, data: &Splits, model: BnnModel<f32>) -> Result<FlipOutput> {
    let cfg = cfg.clone().validated()?;
    let test = TaskView::whole(&data.test);
    let n_eval = cfg.eval_batch.min(test.len());
    let positions: Vec<u32> = (0..n_eval as u32).collect();
    let (x, y) = test.gather::<f32>(&positions);
    let before = model.predict(&x)?;
    let n_layers = model.layers().len();
    let mut rows = Vec::with_capacity(cfg.n_weights);
    let base_loss;
    {
        let probe = FlipProbe::new(&model, &x, &y)?;
        base_loss = probe.base_loss() as f64;
        for (l, layer) in model.layers().iter().enumerate() {
            let share = cfg.n_weights / n_layers + usize::from(l < cfg.n_weights % n_layers);
            let hidden = layer.hidden.data();
            let max_abs = hidden.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
            let fan_in = layer.fan_in();
            for idx in sample_indices(cfg.seed, Purpose::FlipSample, l as u64, hidden.len(), share) {
                let (row, col) = (idx / fan_in, idx % fan_in);
                let wh_abs = hidden[idx].abs() as f64;
                rows.push(FlipRow {
                    layer: l,
                    row,
                    col,
                    wh_abs,
                    wh_norm: if max_abs > 0.0 { wh_abs / max_abs } else { 0.0 },
                    delta_l: probe.delta_loss(l, row, col)? as f64,
                });
            }
            info!("flip: layer {l} probed {share} weights");
        }
    }
    let restored = model.predict(&x)?.data() == before.data();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.wh_norm, r.delta_l)).collect();
    let bins = bin_means(&pairs, cfg.bins);
    let (centres, means): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| b.mean_delta_l.map(|m| ((b.lo + b.hi) / 2.0, m)))
        .unzip();
    let abs: Vec<f64> = rows.iter().map(|r| r.wh_abs).collect();
    let dl: Vec<f64> = rows.iter().map(|r| r.delta_l).collect();
    Ok(FlipOutput {
        spearman_weights: stats::spearman(&abs, &dl),
        spearman_bins: stats::spearman(&centres, &means),
        test_accuracy: accuracy(&model, &test)?,
        rows,
        bins,
        base_loss,
        restored,
        model,
    })
}

/// Writes `flip_rows.csv`, `flip_bins.csv` and `flip_summary.json`.
pub fn write_flip(dir: &Path, cfg: &ExperimentConfig, out: &FlipOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let rows_path = dir.join("flip_rows.csv");
    let mut w = csv::Writer::from_path(&rows_path)?;
    for r in &out.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(&rows_path, e))?;
    let bins_path = dir.join("flip_bins.csv");
    let mut w = csv::Writer::from_path(&bins_path)?;
    w.write_record(["lo", "hi", "count", "mean_delta_L"])?;
    for b in &out.bins {
        let mean = b.mean_delta_l.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), mean])?;
    }
    w.flush().map_err(|e| LabError::io(&bins_path, e))?;
    let summary_path = dir.join("flip_summary.json");
    write_json(
        &summary_path,
        &json!({
            "kind": "flip-importance",
            "config": cfg,
            "base_loss": out.base_loss,
            "test_accuracy": out.test_accuracy,
            "spearman_weights": out.spearman_weights,
            "spearman_bins": out.spearman_bins,
            "restored": out.restored,
        }),
    )?;
    Ok(vec![rows_path, bins_path, summary_path])
}
