//! Evaluation reports, aggregation across repeats and result tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::AlarmSummary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AUC of each held-out fold, where defined.
    pub fold_aucs: Vec<Option<f64>>,
    /// One AUC per run (validation windows of all folds concatenated).
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Sample standard deviation of `aucs`; zero for a single run.
    pub sd_auc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub alarms: Vec<AlarmSummary>,
}

impl EvalReport {
    pub fn single(auc: f64, fold_aucs: Vec<Option<f64>>, roc_points: Vec<(f64, f64)>, alarms: Vec<AlarmSummary>) -> Self {
        Self {
            fold_aucs,
            aucs: vec![auc],
            mean_auc: auc,
            sd_auc: 0.0,
            roc_points,
            alarms,
        }
    }
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pools runs in the given order. ROC points come from the first run; fold
/// AUCs and alarm summaries are concatenated.
pub fn aggregate(runs: &[EvalReport]) -> Result<EvalReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Argument("aggregate needs at least one run".into()))?;
    let aucs: Vec<f64> = runs.iter().flat_map(|r| r.aucs.iter().copied()).collect();
    let (mean_auc, sd_auc) = mean_sd(&aucs);
    Ok(EvalReport {
        fold_aucs: runs.iter().flat_map(|r| r.fold_aucs.iter().copied()).collect(),
        aucs,
        mean_auc,
        sd_auc,
        roc_points: first.roc_points.clone(),
        alarms: runs.iter().flat_map(|r| r.alarms.iter().cloned()).collect(),
    })
}

/// Plain-text table of mean AUC (percent) per patient and column, followed by
/// an `Average` row over patients. Missing cells print as `-`.
pub fn format_auc_table(columns: &[&str], rows: &BTreeMap<String, BTreeMap<String, (f64, f64)>>) -> String {
    let width = columns.iter().map(|c| c.len()).max().unwrap_or(0).max(14);
    let mut out = String::new();
    write!(out, "{:<10}", "Patient").unwrap();
    for c in columns {
        write!(out, " {c:>width$}").unwrap();
    }
    out.push('\n');
    let mut sums = vec![(0.0, 0usize); columns.len()];
    for (patient, cells) in rows {
        write!(out, "{patient:<10}").unwrap();
        for (k, c) in columns.iter().enumerate() {
            match cells.get(*c) {
                Some((m, sd)) => {
                    sums[k].0 += m;
                    sums[k].1 += 1;
                    let cell = format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd);
                    write!(out, " {cell:>width$}").unwrap();
                }
                None => write!(out, " {:>width$}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "{:<10}", "Average").unwrap();
    for (sum, n) in sums {
        if n == 0 {
            write!(out, " {:>width$}", "-").unwrap();
        } else {
            write!(out, " {:>width$.2}", 100.0 * sum / n as f64).unwrap();
        }
    }
    out.push('\n');
    out
}
