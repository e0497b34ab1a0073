use std::fs;
use std::path::{Path, PathBuf};

use metabnn_core::stats;
use metabnn_core::toy::{bin_means, divergence_importance_report, random_start, ImportanceReport, QuadraticProblem};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::metrics::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub problem_id: usize,
    pub i: usize,
    #[serde(rename = "delta_L")]
    pub delta_l: f64,
    pub wh_abs: f64,
    pub wh_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyDetailRow {
    pub problem_id: usize,
    pub i: usize,
    #[serde(rename = "delta_L_visited")]
    pub delta_l_visited: f64,
    pub growth_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyBinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(rename = "mean_delta_L")]
    pub mean_delta_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToySpearmanRow {
    pub problem_id: usize,
    pub spearman: Option<f64>,
    pub spearman_visited: Option<f64>,
    pub optimum_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutput {
    pub rows: Vec<ToyRow>,
    pub details: Vec<ToyDetailRow>,
    pub bins: Vec<ToyBinRow>,
    pub spearman: Vec<ToySpearmanRow>,
    pub reports: Vec<ImportanceReport>,
}

impl ToyOutput {
    pub fn median_spearman(&self) -> Option<f64> {
        let v: Vec<f64> = self.spearman.iter().filter_map(|r| r.spearman).collect();
        stats::median(&v)
    }
}

/// Report for each of `toy_problems` seeded problems; problem `p` uses
/// problem and start streams `(seed, p)`.
pub fn run_toy(cfg: &ExperimentConfig) -> Result<ToyOutput> {
    let cfg = cfg.clone().validated()?;
    let d = cfg.toy_dim;
    let steps = cfg.toy_steps();
    let mut out = ToyOutput {
        rows: Vec::new(),
        details: Vec::new(),
        bins: Vec::new(),
        spearman: Vec::new(),
        reports: Vec::new(),
    };
    for p in 0..cfg.toy_problems {
        let problem = QuadraticProblem::random(d, cfg.seed, p as u64, cfg.toy_target_range)?;
        let w0 = random_start(d, cfg.seed, p as u64);
        let rep = divergence_importance_report(&problem, cfg.toy_eta, steps, &w0, cfg.bins)?;
        for r in &rep.rows {
            out.rows.push(ToyRow {
                problem_id: p,
                i: r.i,
                delta_l: r.delta_l,
                wh_abs: r.wh_abs,
                wh_norm: r.wh_norm,
            });
            out.details.push(ToyDetailRow {
                problem_id: p,
                i: r.i,
                delta_l_visited: r.delta_l_visited,
                growth_rate: r.growth_rate,
            });
        }
        out.spearman.push(ToySpearmanRow {
            problem_id: p,
            spearman: rep.spearman,
            spearman_visited: rep.spearman_visited,
            optimum_loss: rep.optimum_loss,
        });
        out.reports.push(rep);
    }
    let pairs: Vec<(f64, f64)> = out.rows.iter().map(|r| (r.wh_norm, r.delta_l)).collect();
    out.bins = bin_means(&pairs, cfg.bins)
        .into_iter()
        .map(|b| ToyBinRow {
            lo: b.lo,
            hi: b.hi,
            count: b.count,
            mean_delta_l: b.mean_delta_l,
        })
        .collect();
    Ok(out)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes `toy_rows.csv`, `toy_detail.csv`, `toy_bins.csv`,
/// `toy_spearman.csv` and `toy_summary.json` under `dir`.
pub fn write_toy(dir: &Path, cfg: &ExperimentConfig, out: &ToyOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let paths: Vec<PathBuf> = ["toy_rows.csv", "toy_detail.csv", "toy_bins.csv", "toy_spearman.csv", "toy_summary.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_csv(&paths[0], &out.rows)?;
    write_csv(&paths[1], &out.details)?;
    write_csv(&paths[2], &out.bins)?;
    write_csv(&paths[3], &out.spearman)?;
    write_json(
        &paths[4],
        &json!({
            "kind": "toy",
            "config": cfg,
            "steps": cfg.toy_steps(),
            "median_spearman": out.median_spearman(),
            "bins": out.bins,
        }),
    )?;
    Ok(paths)
}
