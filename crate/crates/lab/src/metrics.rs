use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "seed",
    "method",
    "m",
    "lambda",
    "task_index",
    "eval_task",
    "accuracy",
    "wall_clock_s",
];

/// One accuracy measurement. `task_index` counts tasks (or stream splits)
/// trained so far, from 1; `eval_task` is the 1-based task evaluated, or 0
/// for the full test set of a stream run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub m: f64,
    pub lambda: f64,
    pub task_index: usize,
    pub eval_task: usize,
    pub accuracy: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: String,
    pub records: Vec<MetricsRecord>,
    pub summary: serde_json::Value,
}

impl RunOutput {
    /// Records with the wall-clock column blanked, for reproducibility
    /// comparisons.
    pub fn timeless(&self) -> Vec<(usize, usize, u64)> {
        self.records
            .iter()
            .map(|r| (r.task_index, r.eval_task, r.accuracy.to_bits()))
            .collect()
    }

    /// Mean accuracy over the eval tasks measured after `task_index` tasks.
    pub fn average_after(&self, task_index: usize) -> Option<f64> {
        let accs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.task_index == task_index)
            .map(|r| r.accuracy)
            .collect();
        metabnn_core::stats::mean(&accs)
    }

    pub fn accuracy(&self, task_index: usize, eval_task: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.task_index == task_index && r.eval_task == eval_task)
            .map(|r| r.accuracy)
    }

    pub fn last_task(&self) -> usize {
        self.records.iter().map(|r| r.task_index).max().unwrap_or(0)
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
}

/// Writes `<dir>/<run_id>.csv` and `<dir>/<run_id>.json`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", run.run_id));
    let json_path = dir.join(format!("{}.json", run.run_id));
    write_metrics_csv(&csv_path, &run.records)?;
    write_json(&json_path, &run.summary)?;
    Ok((csv_path, json_path))
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, line: u64) -> Result<T> {
    value.trim().parse().map_err(|_| LabError::Schema {
        column: column.to_string(),
        reason: format!("line {line}: cannot parse `{value}`"),
    })
}

/// Reads a metrics CSV, checking the header and every value.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    for (i, want) in METRICS_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(LabError::Schema {
                    column: want.to_string(),
                    reason: format!("expected at position {i}, found `{got}`"),
                })
            }
            None => {
                return Err(LabError::Schema {
                    column: want.to_string(),
                    reason: "missing".into(),
                })
            }
        }
    }
    if header.len() > METRICS_HEADER.len() {
        return Err(LabError::Schema {
            column: header[METRICS_HEADER.len()].to_string(),
            reason: "unexpected column".into(),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let rec = MetricsRecord {
            run_id: row[0].to_string(),
            seed: parse_field(&row[1], "seed", line)?,
            method: row[2].to_string(),
            m: parse_field(&row[3], "m", line)?,
            lambda: parse_field(&row[4], "lambda", line)?,
            task_index: parse_field(&row[5], "task_index", line)?,
            eval_task: parse_field(&row[6], "eval_task", line)?,
            accuracy: parse_field(&row[7], "accuracy", line)?,
            wall_clock_s: parse_field(&row[8], "wall_clock_s", line)?,
        };
        if !(0.0..=1.0).contains(&rec.accuracy) {
            return Err(LabError::Schema {
                column: "accuracy".into(),
                reason: format!("line {line}: {} outside [0, 1]", rec.accuracy),
            });
        }
        if rec.eval_task > rec.task_index {
            return Err(LabError::Schema {
                column: "eval_task".into(),
                reason: format!("line {line}: eval_task {} > task_index {}", rec.eval_task, rec.task_index),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(task_index: usize, eval_task: usize, accuracy: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: "r".into(),
            seed: 1,
            method: "plain".into(),
            m: 0.0,
            lambda: 0.0,
            task_index,
            eval_task,
            accuracy,
            wall_clock_s: 0.5,
        }
    }

    #[test]
    fn csv_round_trip_with_frozen_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![rec(1, 1, 0.9), rec(2, 1, 0.7), rec(2, 2, 0.95)];
        write_metrics_csv(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(read_metrics_csv(&path).unwrap(), records);
    }

    #[test]
    fn schema_errors_name_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "run_id,seed,method,m,lambda,task_index,eval_task,acc,wall_clock_s\n").unwrap();
        match read_metrics_csv(&path).unwrap_err() {
            LabError::Schema { column, .. } => assert_eq!(column, "accuracy"),
            other => panic!("{other:?}"),
        }
        fs::write(&path, format!("{}\nr,1,plain,0,0,1,1,1.5,0\n", METRICS_HEADER.join(","))).unwrap();
        match read_metrics_csv(&path).unwrap_err() {
            LabError::Schema { column, .. } => assert_eq!(column, "accuracy"),
            other => panic!("{other:?}"),
        }
        fs::write(&path, format!("{}\nr,x,plain,0,0,1,1,0.5,0\n", METRICS_HEADER.join(","))).unwrap();
        match read_metrics_csv(&path).unwrap_err() {
            LabError::Schema { column, .. } => assert_eq!(column, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn averages() {
        let run = RunOutput {
            run_id: "r".into(),
            records: vec![rec(1, 1, 0.9), rec(2, 1, 0.7), rec(2, 2, 0.95)],
            summary: serde_json::Value::Null,
        };
        assert!((run.average_after(2).unwrap() - 0.825).abs() < 1e-12);
        assert_eq!(run.accuracy(2, 1), Some(0.7));
        assert_eq!(run.last_task(), 2);
    }
}
