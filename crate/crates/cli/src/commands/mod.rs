//! Pipeline commands and the pieces they share.

mod evaluate;
mod preprocess;
mod report;
mod synth;
mod train;

pub use evaluate::{evaluate, PatientReport, ScenarioReport};
pub use preprocess::preprocess;
pub use report::{report, Summary};
pub use synth::{synth, SynthOutcome};
pub use train::{train, GanSummary, TrainSummary};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use szgan_core::classifier::{extract_features, LabeledFeatureSet};
use szgan_core::eval::{make_cv_plan, CvPlan, Fold, SegmentLabel};
use szgan_core::gan::FeatureExtractor;
use szgan_core::preprocess::{balance_and_oversample, clip_segments, plan_windows, Spectrogram, WindowLabel, WindowPlan};
use szgan_core::tensor::{encode_checkpoint, read_checkpoint, Checkpoint, CheckpointRole, Network, Parameters, Tensor};

use crate::config::{ExperimentConfig, Scenario};
use crate::data::{derive_seed, load_patient, patient_stft, window_key, write_if_changed, CacheIndex, PatientData, WindowStore};
use crate::error::{CliError, CliResult};

/// Runs `f` over `items` on at most `jobs` threads; results keep input order.
pub(crate) fn parallel_map<T, R, F>(jobs: usize, items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> CliResult<R> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Patients with their cache entries, split into eligible and skipped.
pub(crate) struct Cohort {
    pub index: CacheIndex,
    pub eligible: Vec<PatientData>,
    pub skipped: Vec<(String, Vec<String>)>,
}

pub(crate) fn load_cohort(cfg: &ExperimentConfig) -> CliResult<Cohort> {
    let index = CacheIndex::load(cfg)?;
    let mut eligible = Vec::new();
    let mut skipped = Vec::new();
    for p in &cfg.patients {
        let entry = index
            .patient(&p.id)
            .ok_or_else(|| CliError::MissingArtifact(format!("patient {} is not in the cache index", p.id)))?;
        if !entry.eligible {
            log::warn!("patient {}: skipped, not eligible ({})", p.id, entry.reasons.join(", "));
            skipped.push((p.id.clone(), entry.reasons.clone()));
            continue;
        }
        eligible.push(load_patient(cfg, p)?);
    }
    Ok(Cohort { index, eligible, skipped })
}

pub(crate) fn cv_plan(cfg: &ExperimentConfig, patient: &PatientData) -> CliResult<CvPlan> {
    make_cv_plan(
        patient.merged.len(),
        &patient.interictal_pool(),
        derive_seed(cfg.seed, &["cv", &patient.id]),
    )
    .map_err(|e| CliError::for_patient(&patient.id, e))
}

pub(crate) fn fold_name(repeat: usize, fold: usize) -> String {
    format!("r{repeat}_f{fold}")
}

/// Training windows (balanced) and validation windows (base stride) of one fold.
pub(crate) struct FoldWindows {
    pub train: Vec<WindowPlan>,
    pub validation: Vec<WindowPlan>,
}

pub(crate) fn fold_windows(
    cfg: &ExperimentConfig,
    patient: &PatientData,
    plan: &CvPlan,
    fold: &Fold,
) -> CliResult<FoldWindows> {
    let err = |e| CliError::for_patient(&patient.id, e);
    let preictal_of = |keep: &dyn Fn(usize) -> bool| {
        patient
            .segments
            .iter()
            .filter(|s| s.label == SegmentLabel::Preictal && s.seizure.is_some_and(keep))
            .copied()
            .collect::<Vec<_>>()
    };
    let interictal: Vec<_> = patient
        .segments
        .iter()
        .filter(|s| s.label == SegmentLabel::Interictal)
        .copied()
        .collect();
    let parts_of = |idx: &[usize]| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = idx.iter().flat_map(|&k| plan.parts[k].iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };

    let mut train_segs = preictal_of(&|i| fold.train_seizures.contains(&i));
    train_segs.extend(clip_segments(&interictal, &parts_of(&fold.train_parts)));
    train_segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let train = balance_and_oversample(
        &train_segs,
        cfg.base_stride_s,
        cfg.balance_ratio,
        1,
        cfg.stft.sample_rate,
    )
    .map_err(err)?
    .windows;

    let mut val_segs = preictal_of(&|i| i == fold.held_out_seizure);
    val_segs.extend(clip_segments(&interictal, &parts_of(&[fold.validation_part])));
    val_segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let validation = plan_windows(&val_segs, cfg.base_stride_s).map_err(err)?;

    for label in [WindowLabel::Preictal, WindowLabel::Interictal] {
        if train.iter().all(|w| w.label != label) {
            return Err(CliError::Data(format!(
                "patient {}: fold holding out seizure {} has no {label:?} training windows",
                patient.id, fold.held_out_seizure
            )));
        }
    }
    Ok(FoldWindows { train, validation })
}

/// Spectrograms keyed by start sample, built once per patient.
pub(crate) struct WindowMap {
    pub by_key: HashMap<i64, Spectrogram>,
    pub sample_rate: u32,
}

impl WindowMap {
    pub fn build(cfg: &ExperimentConfig, index: &CacheIndex, patient: &PatientData, plans: &[WindowPlan]) -> CliResult<Self> {
        let pcfg = cfg
            .patient(&patient.id)
            .ok_or_else(|| CliError::Config(format!("patient {} not configured", patient.id)))?;
        let entry = index
            .patient(&patient.id)
            .ok_or_else(|| CliError::MissingArtifact(format!("patient {} is not in the cache index", patient.id)))?;
        let stft = patient_stft(cfg, pcfg);
        let sample_rate = stft.sample_rate;
        let mut store = WindowStore::new(patient, entry, stft, cfg.cache_dir());
        let mut by_key = HashMap::new();
        for p in plans {
            let key = window_key(p.start_s, sample_rate);
            if !by_key.contains_key(&key) {
                by_key.insert(key, store.get(p)?);
            }
        }
        Ok(Self { by_key, sample_rate })
    }

    /// Windows for `plans`, relabeled per plan.
    pub fn windows(&self, plans: &[WindowPlan]) -> Vec<Spectrogram> {
        plans
            .iter()
            .map(|p| {
                let mut s = self.by_key[&window_key(p.start_s, self.sample_rate)].clone();
                s.label = p.label;
                s
            })
            .collect()
    }
}

/// Trunk features keyed by start sample.
pub(crate) struct FeatureMap {
    rows: HashMap<i64, usize>,
    features: Tensor,
    sample_rate: u32,
}

impl FeatureMap {
    pub fn build(trunk: &FeatureExtractor, windows: &WindowMap) -> CliResult<Self> {
        let mut keys: Vec<i64> = windows.by_key.keys().copied().collect();
        keys.sort_unstable();
        let specs: Vec<Spectrogram> = keys
            .iter()
            .map(|k| {
                let mut s = windows.by_key[k].clone();
                s.label = WindowLabel::Interictal;
                s
            })
            .collect();
        let set = extract_features(trunk, &specs)?;
        Ok(Self {
            rows: keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect(),
            features: set.features,
            sample_rate: windows.sample_rate,
        })
    }

    pub fn gather(&self, patient_id: &str, plans: &[WindowPlan]) -> CliResult<LabeledFeatureSet> {
        let f = self.features.shape()[1];
        let mut data = Vec::with_capacity(plans.len() * f);
        for p in plans {
            let row = self.rows[&window_key(p.start_s, self.sample_rate)];
            data.extend_from_slice(&self.features.data()[row * f..(row + 1) * f]);
        }
        Ok(LabeledFeatureSet {
            features: Tensor::new(vec![plans.len(), f], data)?,
            labels: plans.iter().map(|p| p.label == WindowLabel::Preictal).collect(),
            window_start_s: plans.iter().map(|p| p.start_s).collect(),
            patient_id: vec![patient_id.to_string(); plans.len()],
        })
    }
}

/// GAN key of a patient under a scenario.
pub(crate) fn gan_key(scenario: Scenario, patient_id: &str) -> String {
    match scenario {
        Scenario::GanCnn => "all".to_string(),
        _ => patient_id.to_string(),
    }
}

pub(crate) fn save_checkpoint(path: &Path, role: CheckpointRole, network: &Network, params: &Parameters) -> CliResult<()> {
    write_if_changed(path, &encode_checkpoint(role, network, params)?).map(|_| ())
}

pub(crate) fn load_checkpoint(path: &Path, role: CheckpointRole, what: &str) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{what}: {}", path.display())));
    }
    let ck = read_checkpoint(path)?;
    if ck.role != role {
        return Err(CliError::Data(format!("{}: expected a {role:?} checkpoint, found {:?}", path.display(), ck.role)));
    }
    Ok(ck)
}

pub(crate) struct ScenarioPaths {
    pub root: PathBuf,
}

impl ScenarioPaths {
    pub fn new(cfg: &ExperimentConfig, scenario: Scenario) -> Self {
        Self { root: cfg.scenario_dir(scenario) }
    }

    pub fn gan_dir(&self, key: &str) -> PathBuf {
        self.root.join("gan").join(key)
    }

    pub fn trunk(&self, key: &str) -> PathBuf {
        self.gan_dir(key).join("trunk.szg")
    }

    pub fn cv(&self, patient: &str) -> PathBuf {
        self.root.join("cv").join(format!("{patient}.json"))
    }

    pub fn head(&self, patient: &str, repeat: usize, fold: usize) -> PathBuf {
        self.root.join("heads").join(patient).join(format!("{}.szg", fold_name(repeat, fold)))
    }

    pub fn fold_trunk(&self, patient: &str, repeat: usize, fold: usize) -> PathBuf {
        self.root.join("trunks").join(patient).join(format!("{}.szg", fold_name(repeat, fold)))
    }

    pub fn fold_log(&self, patient: &str, repeat: usize, fold: usize) -> PathBuf {
        self.root.join("logs").join(patient).join(format!("{}.json", fold_name(repeat, fold)))
    }
}
