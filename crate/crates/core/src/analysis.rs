//! Offline run diagnostics: entropy change by initial-entropy percentile and
//! learning-curve comparison across runs.
//!
//! Both analyses read run directories and emit plain data tables (TSV with a
//! one-line header); plotting is external.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AdvantageRecord, Batch};
use crate::policy::{FactoredStepPolicy, PolicyError};
use crate::trainer::IterationMetrics;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("iteration grids differ between runs: {0} vs {1}")]
    MismatchedGrids(String, String),
    #[error("need at least 2 runs to compare, got {0}")]
    TooFewRuns(usize),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("run {0}: {1}")]
    BadRun(PathBuf, String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

/// One 5%-wide percentile bin of initial step entropies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_entropy_change: f64,
    pub count: usize,
}

/// Bins the recorded steps by the percentile of their rollout-time entropy
/// and reports the mean entropy change (H under `post_policy` minus the
/// recorded H) per bin. Percentiles come from the deduplicated value grid,
/// so duplicating steps does not move bin boundaries.
pub fn entropy_change_by_percentile(
    records: &[AdvantageRecord],
    batch: &Batch,
    post_policy: &FactoredStepPolicy,
) -> Result<Vec<PercentileBin>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyLedger);
    }

    let mut uniques: Vec<f64> = records.iter().map(|r| r.h_step).collect();
    uniques.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniques.dedup();
    let percentile = |v: f64| -> f64 {
        if uniques.len() == 1 {
            return 0.0;
        }
        let idx = uniques
            .binary_search_by(|u| u.partial_cmp(&v).unwrap())
            .expect("value came from the ledger");
        100.0 * idx as f64 / (uniques.len() - 1) as f64
    };

    let mut sums = [0.0f64; 20];
    let mut counts = [0usize; 20];
    for r in records {
        let step = &batch.trajectories[r.traj_index].steps[r.step_index];
        let h_after = post_policy.step_entropy(step.state)?;
        let change = h_after - r.h_step;
        let bin = ((percentile(r.h_step) / 5.0) as usize).min(19);
        sums[bin] += change;
        counts[bin] += 1;
    }

    Ok((0..20)
        .map(|b| PercentileBin {
            lower: 5.0 * b as f64,
            upper: 5.0 * (b + 1) as f64,
            mean_entropy_change: if counts[b] > 0 {
                sums[b] / counts[b] as f64
            } else {
                0.0
            },
            count: counts[b],
        })
        .collect())
}

/// A run to compare: a display label and its directory.
#[derive(Debug, Clone)]
pub struct RunRef {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub label: String,
    pub seed: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalWindowMean {
    pub label: String,
    pub seed: u64,
    pub mean: f64,
}

/// Long-format curve table plus per-run means over the last 10% of
/// iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTable {
    pub metric: String,
    pub rows: Vec<CurveRow>,
    pub final_window_means: Vec<FinalWindowMean>,
}

pub const METRIC_KEYS: [&str; 5] = [
    "success_rate",
    "mean_step_entropy",
    "mean_abs_a_final",
    "kl_to_previous",
    "dropped_groups",
];

pub fn metric_value(m: &IterationMetrics, key: &str) -> Option<f64> {
    match key {
        "success_rate" => Some(m.success_rate),
        "mean_step_entropy" => Some(m.mean_step_entropy),
        "mean_abs_a_final" => Some(m.mean_abs_a_final),
        "kl_to_previous" => Some(m.kl_to_previous),
        "dropped_groups" => Some(m.dropped_groups as f64),
        _ => None,
    }
}

fn run_seed(dir: &Path) -> Result<u64, AnalysisError> {
    let echo = std::fs::read_to_string(dir.join("config.echo"))?;
    let cfg = crate::config::parse_config(&echo)
        .map_err(|e| AnalysisError::BadRun(dir.to_path_buf(), e.to_string()))?;
    Ok(cfg.seed_list[0])
}

/// Mean of the last max(1, n/10) values.
pub fn final_window_mean(values: &[f64]) -> f64 {
    let window = (values.len() / 10).max(1).min(values.len());
    let tail = &values[values.len() - window..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Aligns completed runs on a common iteration grid and emits a long-format
/// table of (iteration, label, seed, value) plus final-window means. Output
/// ordering is (iteration, label, seed), independent of input order.
pub fn compare_runs(runs: &[RunRef], metric: &str) -> Result<CurveTable, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns(runs.len()));
    }
    if !METRIC_KEYS.contains(&metric) {
        return Err(AnalysisError::UnknownMetric(metric.to_string()));
    }

    let mut grid: Option<(String, Vec<usize>)> = None;
    let mut rows = Vec::new();
    let mut final_means = Vec::new();
    for run in runs {
        let metrics = crate::trainer::load_metrics(&run.dir)
            .map_err(|e| AnalysisError::BadRun(run.dir.clone(), e.to_string()))?;
        let seed = run_seed(&run.dir)?;
        let iterations: Vec<usize> = metrics.iter().map(|m| m.iteration).collect();
        match &grid {
            None => grid = Some((run.label.clone(), iterations)),
            Some((first, expect)) => {
                if *expect != iterations {
                    return Err(AnalysisError::MismatchedGrids(
                        first.clone(),
                        run.label.clone(),
                    ));
                }
            }
        }
        let values: Vec<f64> = metrics
            .iter()
            .map(|m| metric_value(m, metric).expect("validated key"))
            .collect();
        final_means.push(FinalWindowMean {
            label: run.label.clone(),
            seed,
            mean: final_window_mean(&values),
        });
        for (m, v) in metrics.iter().zip(values) {
            rows.push(CurveRow {
                iteration: m.iteration,
                label: run.label.clone(),
                seed,
                value: v,
            });
        }
    }
    rows.sort_by(|a, b| (a.iteration, &a.label, a.seed).cmp(&(b.iteration, &b.label, b.seed)));
    final_means.sort_by(|a, b| (&a.label, a.seed).cmp(&(&b.label, b.seed)));
    Ok(CurveTable {
        metric: metric.to_string(),
        rows,
        final_window_means: final_means,
    })
}

/// TSV with a one-line header.
pub fn curve_table_tsv(table: &CurveTable) -> String {
    let mut out = String::from("iteration\tlabel\tseed\tvalue\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.iteration, r.label, r.seed, r.value
        ));
    }
    out
}

/// TSV with a one-line header.
pub fn percentile_bins_tsv(bins: &[PercentileBin]) -> String {
    let mut out = String::from("lower\tupper\tmean_entropy_change\tcount\n");
    for b in bins {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            b.lower, b.upper, b.mean_entropy_change, b.count
        ));
    }
    out
}

/// Groups final-window means by label: (label, per-seed means).
pub fn final_means_by_label(table: &CurveTable) -> BTreeMap<String, Vec<(u64, f64)>> {
    let mut by_label: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for m in &table.final_window_means {
        by_label
            .entry(m.label.clone())
            .or_default()
            .push((m.seed, m.mean));
    }
    by_label
}
