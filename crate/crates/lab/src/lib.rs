//! Experiment harness for metaplastic binarized networks: dataset
//! fetching, continual-learning runs, toy-problem and flip-importance
//! reports, and their CSV/JSON outputs.

pub mod config;
pub mod datasets;
pub mod error;
pub mod fetch;
pub mod flip_run;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod toy_run;

pub use config::{ConfigArgs, DatasetName, ExperimentConfig, Method};
pub use error::{LabError, Result};
