use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use szgan_core::eval::format_auc_table;

use super::ScenarioReport;
use crate::config::{ExperimentConfig, Scenario};
use crate::data::{read_json, write_if_changed, write_json};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub columns: Vec<String>,
    /// Patient -> column -> (mean AUC, sd AUC).
    pub rows: BTreeMap<String, BTreeMap<String, (f64, f64)>>,
    pub average: BTreeMap<String, f64>,
    pub table: String,
}

/// Collects the evaluated scenarios into one table, columns in fixed order.
pub fn report(cfg: &ExperimentConfig) -> CliResult<Summary> {
    let mut columns = Vec::new();
    let mut rows: BTreeMap<String, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    let mut average = BTreeMap::new();
    for s in Scenario::ALL {
        let path = cfg.scenario_dir(s).join("report.json");
        if !path.exists() {
            continue;
        }
        let r: ScenarioReport = read_json(&path)?;
        columns.push(s.column().to_string());
        for p in &r.patients {
            rows.entry(p.id.clone())
                .or_default()
                .insert(s.column().to_string(), (p.report.mean_auc, p.report.sd_auc));
        }
        if let Some(a) = r.average_auc {
            average.insert(s.column().to_string(), a);
        }
    }
    if columns.is_empty() {
        return Err(CliError::MissingArtifact(format!(
            "no evaluated scenario under {} (run `szgan evaluate` first)",
            cfg.out_dir().display()
        )));
    }
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let table = format_auc_table(&cols, &rows);
    write_if_changed(&cfg.out_dir().join("report.txt"), table.as_bytes())?;
    let summary = Summary { columns, rows, average, table };
    write_json(&cfg.out_dir().join("summary.json"), &summary)?;
    Ok(summary)
}
