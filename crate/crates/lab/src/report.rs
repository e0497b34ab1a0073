//! Aggregates metrics CSVs into per-method average-accuracy curves.
//!
//! For each run the accuracy after `k` tasks is first averaged over the
//! evaluated tasks; those per-run values are then averaged over seeds, with
//! the min/max across seeds as the band.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::{LabError, Result};
use crate::harness::EWC_ANCHOR_NOTE;
use crate::metrics::{read_metrics_csv, write_json, MetricsRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub task_index: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: usize,
}

type PerRun<'a> = BTreeMap<(&'a str, u64), Vec<f64>>;

/// Curves keyed by method.
pub fn aggregate(records: &[MetricsRecord]) -> BTreeMap<String, Vec<CurvePoint>> {
    // method -> task_index -> (run_id, seed) -> accuracies
    let mut grouped: BTreeMap<&str, BTreeMap<usize, PerRun<'_>>> = BTreeMap::new();
    for r in records {
        grouped
            .entry(&r.method)
            .or_default()
            .entry(r.task_index)
            .or_default()
            .entry((&r.run_id, r.seed))
            .or_default()
            .push(r.accuracy);
    }
    grouped
        .into_iter()
        .map(|(method, by_task)| {
            let curve = by_task
                .into_iter()
                .map(|(task_index, runs)| {
                    let per_run: Vec<f64> = runs.values().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect();
                    CurvePoint {
                        task_index,
                        mean: per_run.iter().sum::<f64>() / per_run.len() as f64,
                        min: per_run.iter().copied().fold(f64::INFINITY, f64::min),
                        max: per_run.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        seeds: per_run.len(),
                    }
                })
                .collect();
            (method.to_string(), curve)
        })
        .collect()
}

/// Reads `inputs`, aggregates them and writes the JSON to `output`. Nothing
/// is written when the inputs hold no records.
pub fn emit_report(inputs: &[PathBuf], output: &Path) -> Result<serde_json::Value> {
    let mut records = Vec::new();
    for p in inputs {
        records.extend(read_metrics_csv(p)?);
    }
    if records.is_empty() {
        return Err(LabError::Data("no metrics records in the inputs".into()));
    }
    let curves = aggregate(&records);
    let mut notes = vec!["accuracy after k tasks is averaged over evaluated tasks, then over seeds; band is min/max over seeds"];
    if curves.contains_key("ewc") {
        notes.push(EWC_ANCHOR_NOTE);
    }
    let value = json!({
        "inputs": inputs,
        "curves": curves,
        "notes": notes,
    });
    write_json(output, &value)?;
    Ok(value)
}
