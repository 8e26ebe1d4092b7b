//! File emitters: one pretty-printed JSON report per run plus the
//! plot-ready CSV tables. All CSVs carry a header row and RFC 4180
//! quoting.

use std::path::Path;

use crate::experiments::{PositionBiasRow, RatingDistReport};
use crate::runner::{EvalError, RunReport};

fn io_error(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io { path: path.to_path_buf(), source }
}

fn csv_error(path: &Path, source: csv::Error) -> EvalError {
    EvalError::Config(format!("writing {}: {source}", path.display()))
}

/// Writes the run report as stable, pretty-printed JSON. Identical inputs
/// produce byte-identical files.
pub fn write_report_json(path: &Path, report: &RunReport) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| EvalError::Config(format!("serializing report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// The ablation table: one row per preset, metric means over runs.
pub fn write_table1_csv(path: &Path, reports: &[RunReport]) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record([
            "preset",
            "ndcg_at_5",
            "ndcg_at_10",
            "hr_at_3",
            "users",
            "runs",
            "failures",
            "invalid",
        ])
        .map_err(|e| csv_error(path, e))?;
    for report in reports {
        let failures: usize = report.per_run.iter().map(|r| r.failures).sum();
        writer
            .write_record([
                report.preset.clone(),
                report.metrics.ndcg_at_5.to_string(),
                report.metrics.ndcg_at_10.to_string(),
                report.metrics.hr_at_3.to_string(),
                report.user_count.to_string(),
                report.runs.to_string(),
                failures.to_string(),
                report.invalid.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

/// Five probability bins per source (simulated vs dataset), long format.
pub fn write_rating_dist_csv(path: &Path, report: &RatingDistReport) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["source", "rating", "probability"])
        .map_err(|e| csv_error(path, e))?;
    for (source, dist) in [("simulated", &report.simulated), ("dataset", &report.dataset)] {
        for (i, p) in dist.probabilities.iter().enumerate() {
            writer
                .write_record([source.to_string(), (i + 1).to_string(), p.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    writer.flush().map_err(|e| io_error(path, e))
}

/// One row per (prompting condition, pinned ground-truth position).
pub fn write_position_bias_csv(path: &Path, rows: &[PositionBiasRow]) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["direct_prompting", "position", "hit_rate", "ndcg_at_10", "users"])
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer
            .write_record([
                row.direct_prompting.to_string(),
                row.position.to_string(),
                row.hit_rate.to_string(),
                row.ndcg_at_10.to_string(),
                row.users.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

/// One row per swept value; `param` names the first column
/// (`history_len` or `icl_k`).
pub fn write_sweep_csv(
    path: &Path,
    param: &str,
    rows: &[(usize, RunReport)],
) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record([param, "ndcg_at_5", "ndcg_at_10", "hr_at_3"])
        .map_err(|e| csv_error(path, e))?;
    for (value, report) in rows {
        writer
            .write_record([
                value.to_string(),
                report.metrics.ndcg_at_5.to_string(),
                report.metrics.ndcg_at_10.to_string(),
                report.metrics.hr_at_3.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}
