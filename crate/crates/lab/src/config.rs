use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Meta,
    Ewc,
    Plain,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Meta => "meta",
            Method::Ewc => "ewc",
            Method::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Fmnist,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
        }
    }
}

/// Every knob of every run. Serialized verbatim into run summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub m: f64,
    pub lambda: f64,
    pub lr: f64,
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub n_tasks: usize,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset: DatasetName,
    pub k_splits: usize,
    pub fisher_samples: usize,
    pub output: PathBuf,
    pub toy_dim: usize,
    pub toy_problems: usize,
    pub toy_eta: f64,
    /// `None` means `20 d / eta`.
    pub toy_steps: Option<usize>,
    pub toy_target_range: f64,
    pub bins: usize,
    pub n_weights: usize,
    pub eval_batch: usize,
    /// Trained model to probe; trained from scratch when absent.
    pub model: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Meta,
            m: 1.35,
            lambda: 5e-3,
            lr: 1e-3,
            hidden_size: 512,
            hidden_layers: 2,
            n_tasks: 5,
            epochs_per_task: 5,
            batch_size: 100,
            seed: 0,
            dataset: DatasetName::Mnist,
            k_splits: 6,
            fisher_samples: metabnn_core::ewc::DEFAULT_FISHER_SAMPLES,
            output: PathBuf::from("runs"),
            toy_dim: 12,
            toy_problems: 20,
            toy_eta: 0.1,
            toy_steps: None,
            toy_target_range: metabnn_core::toy::DEFAULT_TARGET_RANGE,
            bins: 10,
            n_weights: 2000,
            eval_batch: 1000,
            model: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the method constraints and pins the unused coefficients:
    /// meta needs `m > 0`, ewc needs `lambda > 0`, and a run never carries
    /// both (plain carries neither).
    pub fn validated(mut self) -> Result<Self> {
        let bad = |msg: &str| Err(LabError::Config(msg.to_string()));
        match self.method {
            Method::Meta => {
                if !(self.m > 0.0 && self.m.is_finite()) {
                    return bad("method meta requires m > 0");
                }
                self.lambda = 0.0;
            }
            Method::Ewc => {
                if !(self.lambda > 0.0 && self.lambda.is_finite()) {
                    return bad("method ewc requires lambda > 0");
                }
                self.m = 0.0;
            }
            Method::Plain => {
                self.m = 0.0;
                self.lambda = 0.0;
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        let counts = [
            (self.hidden_size, "hidden-size"),
            (self.hidden_layers, "hidden-layers"),
            (self.n_tasks, "n-tasks"),
            (self.epochs_per_task, "epochs-per-task"),
            (self.batch_size, "batch-size"),
            (self.k_splits, "k-splits"),
            (self.fisher_samples, "fisher-samples"),
            (self.toy_dim, "toy-dim"),
            (self.toy_problems, "toy-problems"),
            (self.bins, "bins"),
            (self.n_weights, "n-weights"),
            (self.eval_batch, "eval-batch"),
        ];
        if let Some((_, name)) = counts.iter().find(|(v, _)| *v == 0) {
            return Err(LabError::Config(format!("{name} must be >= 1")));
        }
        if self.toy_dim > metabnn_core::toy::MAX_BRUTE_FORCE_DIM {
            return Err(LabError::Config(format!(
                "toy-dim must be <= {}",
                metabnn_core::toy::MAX_BRUTE_FORCE_DIM
            )));
        }
        if !(self.toy_eta.is_finite() && self.toy_eta > 0.0) || self.toy_target_range.is_nan() || self.toy_target_range <= 0.0 {
            return bad("toy-eta and toy-target-range must be > 0");
        }
        Ok(self)
    }

    /// Layer widths `784, h, ..., h, 10`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![metabnn_core::data::PIXELS];
        s.extend(std::iter::repeat_n(self.hidden_size, self.hidden_layers));
        s.push(metabnn_core::data::CLASSES);
        s
    }

    pub fn toy_steps(&self) -> usize {
        self.toy_steps.unwrap_or_else(|| metabnn_core::toy::default_steps(self.toy_dim, self.toy_eta))
    }
}

/// Command-line mirror of [`ExperimentConfig`]; set flags override the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with ExperimentConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub n_tasks: Option<usize>,
    #[arg(long)]
    pub epochs_per_task: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetName>,
    #[arg(long)]
    pub k_splits: Option<usize>,
    #[arg(long)]
    pub fisher_samples: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub toy_dim: Option<usize>,
    #[arg(long)]
    pub toy_problems: Option<usize>,
    #[arg(long)]
    pub toy_eta: Option<f64>,
    #[arg(long)]
    pub toy_steps: Option<usize>,
    #[arg(long)]
    pub toy_target_range: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub n_weights: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl ConfigArgs {
    /// Defaults, then the `--config` file, then explicit flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => {
                $(if let Some(v) = &self.$f { c.$f = v.clone(); })*
            };
        }
        overlay!(
            method,
            m,
            lambda,
            lr,
            hidden_size,
            hidden_layers,
            n_tasks,
            epochs_per_task,
            batch_size,
            seed,
            dataset,
            k_splits,
            fisher_samples,
            output,
            toy_dim,
            toy_problems,
            toy_eta,
            toy_target_range,
            bins,
            n_weights,
            eval_batch
        );
        if self.toy_steps.is_some() {
            c.toy_steps = self.toy_steps;
        }
        if self.model.is_some() {
            c.model = self.model.clone();
        }
        Ok(c)
    }
}
