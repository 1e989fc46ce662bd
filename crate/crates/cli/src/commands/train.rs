use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use szgan_core::classifier::{train_head, train_supervised, ClassifierConfig, ClassifierLog};
use szgan_core::gan::{build_discriminator, build_generator, export_feature_extractor, train_gan, FeatureExtractor, TrainLog};
use szgan_core::preprocess::plan_windows;
use szgan_core::tensor::{CheckpointRole, Network, Parameters};

use super::{
    cv_plan, fold_windows, gan_key, load_cohort, parallel_map, save_checkpoint, FeatureMap, FoldWindows, ScenarioPaths,
    WindowMap,
};
use crate::config::{ExperimentConfig, Scenario};
use crate::data::{derive_seed, read_json, sha256_hex, stamp_matches, write_json, write_stamp, CacheIndex, PatientData};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub key: String,
    pub patients: Vec<String>,
    /// Windows the GAN was trained on.
    pub n_real_windows: usize,
    pub stride_s: f64,
    pub final_d_loss: f64,
    pub final_g_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub repeat: usize,
    pub fold: usize,
    pub held_out_seizure: usize,
    pub n_train_windows: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTrainSummary {
    pub id: String,
    pub gan_key: Option<String>,
    pub folds: Vec<FoldSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPatient {
    pub id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub scenario: Scenario,
    pub gans: Vec<GanSummary>,
    pub patients: Vec<PatientTrainSummary>,
    pub skipped: Vec<SkippedPatient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FoldLog {
    held_out_seizure: usize,
    n_train_windows: usize,
    classifier: ClassifierLog,
}

pub(crate) fn train_stamp(cfg: &ExperimentConfig, index: &CacheIndex) -> CliResult<String> {
    let text = serde_json::to_string(cfg).map_err(szgan_core::Error::from)?;
    Ok(sha256_hex(format!("{text}\n{}", index.input_hash).as_bytes()))
}

fn n_channels(patients: &[&PatientData]) -> CliResult<usize> {
    let n = patients[0].recordings[0].n_channels();
    if patients.iter().any(|p| p.recordings[0].n_channels() != n) {
        return Err(CliError::Config(
            "a shared GAN needs the same channel count for every patient".into(),
        ));
    }
    Ok(n)
}

struct GanJob<'a> {
    key: String,
    patients: Vec<&'a PatientData>,
}

fn train_one_gan(
    cfg: &ExperimentConfig,
    index: &CacheIndex,
    paths: &ScenarioPaths,
    job: &GanJob,
) -> CliResult<(GanSummary, Network, Parameters)> {
    let stride_s = match cfg.scenario {
        Scenario::GanPsOsplCnn => cfg.base_stride_s / cfg.oversample_factor as f64,
        _ => cfg.base_stride_s,
    };
    let mut real = Vec::new();
    for p in &job.patients {
        let plans = plan_windows(&p.segments, stride_s).map_err(|e| CliError::for_patient(&p.id, e))?;
        real.extend(WindowMap::build(cfg, index, p, &plans)?.windows(&plans));
    }
    let n = n_channels(&job.patients)?;
    let seed = |role: &str| derive_seed(cfg.seed, &["gan", cfg.scenario.name(), &job.key, role]);
    let g = build_generator(&cfg.generator, n, seed("generator"))?;
    let d = build_discriminator(&cfg.discriminator, n, seed("discriminator"))?;
    let mut gcfg = cfg.gan.clone();
    gcfg.seed = seed("train");
    gcfg.scope = cfg.scenario.gan_scope().expect("GAN scenario");
    log::info!("GAN {}: training on {} windows (stride {} s)", job.key, real.len(), stride_s);
    let (g_net, d_net) = (g.0.clone(), d.0.clone());
    let outcome = train_gan(&real, g, d, &gcfg).map_err(|e| match e {
        szgan_core::Error::Divergence { .. } => CliError::Divergence(format!("GAN {}: {e}", job.key)),
        other => other.into(),
    })?;
    let trunk = export_feature_extractor(&d_net, &outcome.discriminator)?;
    let (t_net, t_params) = trunk.into_parts();
    let dir = paths.gan_dir(&job.key);
    save_checkpoint(&dir.join("generator.szg"), CheckpointRole::Generator, &g_net, &outcome.generator)?;
    save_checkpoint(&dir.join("discriminator.szg"), CheckpointRole::Discriminator, &d_net, &outcome.discriminator)?;
    save_checkpoint(&paths.trunk(&job.key), CheckpointRole::Trunk, &t_net, &t_params)?;
    write_json(&dir.join("train_log.json"), &outcome.log)?;
    let TrainLog { d_loss, g_loss, n_real_windows, .. } = outcome.log;
    let summary = GanSummary {
        key: job.key.clone(),
        patients: job.patients.iter().map(|p| p.id.clone()).collect(),
        n_real_windows,
        stride_s,
        final_d_loss: d_loss.last().copied().unwrap_or(f64::NAN),
        final_g_loss: g_loss.last().copied().unwrap_or(f64::NAN),
    };
    Ok((summary, t_net, t_params))
}

/// Everything fold jobs of one patient read.
struct PatientPrep<'a> {
    patient: &'a PatientData,
    folds: Vec<(usize, FoldWindows)>,
    windows: WindowMap,
    features: Option<FeatureMap>,
}

struct FoldJob {
    patient: usize,
    repeat: usize,
    fold: usize,
}

fn run_fold(cfg: &ExperimentConfig, paths: &ScenarioPaths, prep: &PatientPrep, job: &FoldJob) -> CliResult<FoldSummary> {
    let pid = &prep.patient.id;
    let (held_out, fw) = &prep.folds[job.fold];
    let ccfg = ClassifierConfig {
        seed: derive_seed(
            cfg.seed,
            &["head", cfg.scenario.name(), pid, &job.repeat.to_string(), &job.fold.to_string()],
        ),
        ..cfg.classifier.clone()
    };
    let err = |e| CliError::for_patient(pid, e);
    let head = match &prep.features {
        Some(features) => train_head(&features.gather(pid, &fw.train)?, &ccfg).map_err(err)?,
        None => {
            let n = prep.patient.recordings[0].n_channels();
            let init_seed = derive_seed(ccfg.seed, &["trunk"]);
            let (d_net, d_params) = build_discriminator(&cfg.discriminator, n, init_seed)?;
            let (t_net, t_params) = export_feature_extractor(&d_net, &d_params)?.into_parts();
            let windows = prep.windows.windows(&fw.train);
            let (trained, head) = train_supervised(&t_net, t_params, &windows, &ccfg).map_err(err)?;
            save_checkpoint(&paths.fold_trunk(pid, job.repeat, job.fold), CheckpointRole::Trunk, &t_net, &trained)?;
            head
        }
    };
    save_checkpoint(&paths.head(pid, job.repeat, job.fold), CheckpointRole::Head, &head.network, &head.params)?;
    let log = FoldLog { held_out_seizure: *held_out, n_train_windows: fw.train.len(), classifier: head.log };
    write_json(&paths.fold_log(pid, job.repeat, job.fold), &log)?;
    log::info!(
        "patient {pid} repeat {} fold {}: {} training windows, best epoch {}",
        job.repeat,
        job.fold,
        fw.train.len(),
        log.classifier.best_epoch
    );
    Ok(FoldSummary {
        repeat: job.repeat,
        fold: job.fold,
        held_out_seizure: *held_out,
        n_train_windows: fw.train.len(),
        best_epoch: log.classifier.best_epoch,
    })
}

/// Trains the scenario's GAN trunks (if any) and one head per patient, repeat
/// and cross-validation fold. Skips all work when the stamp matches.
pub fn train(cfg: &ExperimentConfig, jobs: usize) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let cohort = load_cohort(cfg)?;
    let paths = ScenarioPaths::new(cfg, cfg.scenario);
    let summary_path = paths.root.join("train_summary.json");
    let stamp = train_stamp(cfg, &cohort.index)?;
    if stamp_matches(&paths.root, &stamp, std::slice::from_ref(&summary_path)) {
        if let Ok(summary) = read_json::<TrainSummary>(&summary_path) {
            log::info!("{}: training outputs up to date", cfg.scenario.name());
            return Ok(summary);
        }
    }
    write_json(&paths.root.join("config.json"), cfg)?;
    if cohort.eligible.is_empty() {
        return Err(CliError::Data("no eligible patients".into()));
    }

    let mut gans = Vec::new();
    let mut trunks: BTreeMap<String, FeatureExtractor> = BTreeMap::new();
    if cfg.scenario.gan_scope().is_some() {
        let mut gan_jobs: Vec<GanJob> = Vec::new();
        for p in &cohort.eligible {
            let key = gan_key(cfg.scenario, &p.id);
            match gan_jobs.iter_mut().find(|j| j.key == key) {
                Some(j) => j.patients.push(p),
                None => gan_jobs.push(GanJob { key, patients: vec![p] }),
            }
        }
        for (summary, net, params) in parallel_map(jobs, &gan_jobs, |j| train_one_gan(cfg, &cohort.index, &paths, j))? {
            trunks.insert(summary.key.clone(), FeatureExtractor::from_parts(net, params)?);
            gans.push(summary);
        }
    }

    let mut preps = Vec::new();
    for p in &cohort.eligible {
        let plan = cv_plan(cfg, p)?;
        write_json(&paths.cv(&p.id), &plan)?;
        let folds: Vec<(usize, FoldWindows)> = plan
            .folds
            .iter()
            .map(|f| Ok((f.held_out_seizure, fold_windows(cfg, p, &plan, f)?)))
            .collect::<CliResult<_>>()?;
        let all: Vec<_> = folds.iter().flat_map(|(_, f)| f.train.iter().copied()).collect();
        let windows = WindowMap::build(cfg, &cohort.index, p, &all)?;
        let features = match trunks.get(&gan_key(cfg.scenario, &p.id)) {
            Some(trunk) => Some(FeatureMap::build(trunk, &windows)?),
            None => None,
        };
        preps.push(PatientPrep { patient: p, folds, windows, features });
    }

    let fold_jobs: Vec<FoldJob> = preps
        .iter()
        .enumerate()
        .flat_map(|(i, prep)| {
            (0..cfg.repeats).flat_map(move |r| (0..prep.folds.len()).map(move |k| FoldJob { patient: i, repeat: r, fold: k }))
        })
        .collect();
    let results = parallel_map(jobs, &fold_jobs, |j| run_fold(cfg, &paths, &preps[j.patient], j))?;

    let mut patients: Vec<PatientTrainSummary> = preps
        .iter()
        .map(|p| PatientTrainSummary {
            id: p.patient.id.clone(),
            gan_key: cfg.scenario.gan_scope().map(|_| gan_key(cfg.scenario, &p.patient.id)),
            folds: Vec::new(),
        })
        .collect();
    for (job, fold) in fold_jobs.iter().zip(results) {
        patients[job.patient].folds.push(fold);
    }
    let summary = TrainSummary {
        scenario: cfg.scenario,
        gans,
        patients,
        skipped: cohort
            .skipped
            .into_iter()
            .map(|(id, reasons)| SkippedPatient { id, reasons })
            .collect(),
    };
    write_json(&summary_path, &summary)?;
    write_stamp(&paths.root, &stamp)?;
    Ok(summary)
}
