use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use szgan_core::classifier::{predict_batch, predict_features};
use szgan_core::eval::{aggregate, format_auc_table, roc_auc, simulate_alarms, CvPlan, EvalReport};
use szgan_core::gan::FeatureExtractor;
use szgan_core::preprocess::{WindowLabel, WindowPlan, WINDOW_S};
use szgan_core::tensor::{CheckpointRole, Model};

use super::train::SkippedPatient;
use super::{
    fold_name, fold_windows, gan_key, load_checkpoint, load_cohort, parallel_map, FeatureMap, ScenarioPaths, WindowMap,
};
use crate::config::{ExperimentConfig, Scenario};
use crate::data::{read_json, write_if_changed, write_json, PatientData};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientReport {
    pub id: String,
    /// Windows scored per repeat, over all folds.
    pub n_validation_windows: usize,
    /// Pooled over repeats: one AUC per repeat, their mean and sd.
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub column: String,
    pub patients: Vec<PatientReport>,
    pub skipped: Vec<SkippedPatient>,
    /// Mean over patients of the per-patient mean AUC.
    pub average_auc: Option<f64>,
}

struct PatientEval<'a> {
    patient: &'a PatientData,
    validation: Vec<Vec<WindowPlan>>,
    windows: WindowMap,
    features: Option<FeatureMap>,
}

struct Job {
    patient: usize,
    repeat: usize,
    fold: usize,
}

fn score_fold(paths: &ScenarioPaths, pe: &PatientEval, job: &Job) -> CliResult<Vec<f64>> {
    let pid = &pe.patient.id;
    let what = format!("patient {pid} fold {}", fold_name(job.repeat, job.fold));
    let plans = &pe.validation[job.fold];
    if plans.is_empty() {
        return Ok(Vec::new());
    }
    let head_ck = load_checkpoint(&paths.head(pid, job.repeat, job.fold), CheckpointRole::Head, &what)?;
    let head = Model::new(head_ck.network, head_ck.params)?;
    let scores = match &pe.features {
        Some(features) => predict_features(&head, &features.gather(pid, plans)?.features)?,
        None => {
            let ck = load_checkpoint(&paths.fold_trunk(pid, job.repeat, job.fold), CheckpointRole::Trunk, &what)?;
            let trunk = FeatureExtractor::from_parts(ck.network, ck.params)?;
            predict_batch(&trunk, &head, &pe.windows.windows(plans))?
        }
    };
    Ok(scores)
}

fn csv_label(l: WindowLabel) -> &'static str {
    match l {
        WindowLabel::Preictal => "preictal",
        WindowLabel::Interictal => "interictal",
        WindowLabel::Unlabeled => "unlabeled",
    }
}

/// Scores every validation window with the head (and trunk) of the fold that
/// held it out, then reports AUC per repeat, ROC curves and alarm summaries.
pub fn evaluate(cfg: &ExperimentConfig, jobs: usize) -> CliResult<ScenarioReport> {
    cfg.validate()?;
    let cohort = load_cohort(cfg)?;
    let paths = ScenarioPaths::new(cfg, cfg.scenario);

    let mut trunks: BTreeMap<String, FeatureExtractor> = BTreeMap::new();
    let mut evals = Vec::new();
    for p in &cohort.eligible {
        let plan: CvPlan = read_json(&paths.cv(&p.id))?;
        let validation: Vec<Vec<WindowPlan>> = plan
            .folds
            .iter()
            .map(|f| Ok(fold_windows(cfg, p, &plan, f)?.validation))
            .collect::<CliResult<_>>()?;
        let all: Vec<WindowPlan> = validation.iter().flatten().copied().collect();
        let windows = WindowMap::build(cfg, &cohort.index, p, &all)?;
        let features = if cfg.scenario.gan_scope().is_some() {
            let key = gan_key(cfg.scenario, &p.id);
            if !trunks.contains_key(&key) {
                let ck = load_checkpoint(&paths.trunk(&key), CheckpointRole::Trunk, &format!("GAN trunk {key}"))?;
                trunks.insert(key.clone(), FeatureExtractor::from_parts(ck.network, ck.params)?);
            }
            Some(FeatureMap::build(&trunks[&key], &windows)?)
        } else {
            None
        };
        evals.push(PatientEval { patient: p, validation, windows, features });
    }

    let job_list: Vec<Job> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, pe)| {
            (0..cfg.repeats).flat_map(move |r| (0..pe.validation.len()).map(move |k| Job { patient: i, repeat: r, fold: k }))
        })
        .collect();
    let scores = parallel_map(jobs, &job_list, |j| score_fold(&paths, &evals[j.patient], j))?;

    let mut scores_csv = String::from("patient_id,repeat,fold,window_start_s,label,score\n");
    let mut roc_csv = String::from("patient_id,repeat,fpr,tpr\n");
    let mut runs: Vec<Vec<EvalReport>> = vec![Vec::new(); evals.len()];
    let mut by_run: BTreeMap<(usize, usize), Vec<(usize, &WindowPlan, f64)>> = BTreeMap::new();
    for (job, s) in job_list.iter().zip(&scores) {
        let plans = &evals[job.patient].validation[job.fold];
        let entry = by_run.entry((job.patient, job.repeat)).or_default();
        for (w, &score) in plans.iter().zip(s) {
            entry.push((job.fold, w, score));
        }
    }
    for ((pi, r), rows) in &by_run {
        let pe = &evals[*pi];
        let pid = &pe.patient.id;
        for &(k, w, score) in rows {
            writeln!(scores_csv, "{pid},{r},{k},{},{},{score}", w.start_s, csv_label(w.label)).unwrap();
        }
        let pairs: Vec<(f64, bool)> = rows.iter().map(|&(_, w, s)| (s, w.label == WindowLabel::Preictal)).collect();
        let roc = roc_auc(&pairs).map_err(|e| CliError::for_patient(pid, e))?;
        for &(fpr, tpr) in &roc.points {
            writeln!(roc_csv, "{pid},{r},{fpr},{tpr}").unwrap();
        }
        let fold_aucs: Vec<Option<f64>> = (0..pe.validation.len())
            .map(|k| {
                let fp: Vec<(f64, bool)> = rows
                    .iter()
                    .filter(|row| row.0 == k)
                    .map(|&(_, w, s)| (s, w.label == WindowLabel::Preictal))
                    .collect();
                roc_auc(&fp).ok().map(|r| r.auc)
            })
            .collect();
        let mut timeline: Vec<(f64, f64)> = rows.iter().map(|&(_, w, s)| (w.start_s + WINDOW_S, s)).collect();
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0));
        let alarms = cfg
            .alarm_thresholds
            .iter()
            .map(|&t| simulate_alarms(&timeline, t, &cfg.policy, &pe.patient.merged))
            .collect::<szgan_core::Result<Vec<_>>>()?;
        log::info!("{}: patient {pid} repeat {r}: AUC {:.4}", cfg.scenario.name(), roc.auc);
        runs[*pi].push(EvalReport::single(roc.auc, fold_aucs, roc.points, alarms));
    }

    let mut patients = Vec::new();
    let mut table_rows: BTreeMap<String, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for (pe, reps) in evals.iter().zip(&runs) {
        let report = aggregate(reps)?;
        table_rows
            .entry(pe.patient.id.clone())
            .or_default()
            .insert(cfg.scenario.column().to_string(), (report.mean_auc, report.sd_auc));
        patients.push(PatientReport {
            id: pe.patient.id.clone(),
            n_validation_windows: pe.validation.iter().map(Vec::len).sum(),
            report,
        });
    }
    let average_auc = (!patients.is_empty())
        .then(|| patients.iter().map(|p| p.report.mean_auc).sum::<f64>() / patients.len() as f64);
    let report = ScenarioReport {
        scenario: cfg.scenario,
        column: cfg.scenario.column().to_string(),
        patients,
        skipped: cohort
            .skipped
            .into_iter()
            .map(|(id, reasons)| SkippedPatient { id, reasons })
            .collect(),
        average_auc,
    };
    write_json(&paths.root.join("report.json"), &report)?;
    write_if_changed(&paths.root.join("scores.csv"), scores_csv.as_bytes())?;
    write_if_changed(&paths.root.join("roc.csv"), roc_csv.as_bytes())?;
    write_if_changed(
        &paths.root.join("table.txt"),
        format_auc_table(&[cfg.scenario.column()], &table_rows).as_bytes(),
    )?;
    Ok(report)
}
