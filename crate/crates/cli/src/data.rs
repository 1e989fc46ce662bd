//! Patient loading, the spectrogram cache index and small file helpers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use szgan_core::eval::{
    check_eligibility, label_intervals, merge_leading_seizures, Eligibility, Segment, SegmentLabel,
};
use szgan_core::preprocess::{
    read_spectrogram, window_to_spectrogram, BinMask, Spectrogram, StftConfig, WindowLabel, WindowPlan, WINDOW_S,
};
use szgan_core::signal_io::{
    annotation_path, load_annotations, load_recording, select_channels, AnnotationSet, Recording, RecordingFormat,
};

use crate::config::{ExperimentConfig, PatientConfig};
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic sub-seed for a named purpose.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes `bytes` unless the file already holds exactly them.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> CliResult<bool> {
    if fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(true)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<bool> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(szgan_core::Error::from)?;
    bytes.push(b'\n');
    write_if_changed(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|_| CliError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// A stamp file records the hash of the inputs that produced a directory's artifacts.
pub fn stamp_matches(dir: &Path, hash: &str, artifacts: &[PathBuf]) -> bool {
    fs::read_to_string(dir.join("stamp.sha256")).is_ok_and(|s| s.trim() == hash)
        && artifacts.iter().all(|p| p.exists())
}

pub fn write_stamp(dir: &Path, hash: &str) -> CliResult<()> {
    write_if_changed(&dir.join("stamp.sha256"), format!("{hash}\n").as_bytes()).map(|_| ())
}

/// Patient recordings (channel-selected), annotations on the patient clock and labels.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub id: String,
    pub recordings: Vec<Recording>,
    pub recording_files: Vec<PathBuf>,
    pub merged: AnnotationSet,
    pub segments: Vec<Segment>,
    pub interictal_hours: f64,
    pub eligibility: Eligibility,
}

impl PatientData {
    pub fn interictal_pool(&self) -> Vec<(f64, f64)> {
        self.segments
            .iter()
            .filter(|s| s.label == SegmentLabel::Interictal)
            .map(|s| (s.start_s, s.end_s))
            .collect()
    }
}

fn recording_files(cfg: &ExperimentConfig, p: &PatientConfig) -> CliResult<Vec<PathBuf>> {
    let dir = cfg.data_dir().join(&p.id);
    if !p.recordings.is_empty() {
        return Ok(p.recordings.iter().map(|r| dir.join(r)).collect());
    }
    let entries = fs::read_dir(&dir).map_err(|e| CliError::Data(format!("patient {}: {}: {e}", p.id, dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("szr") | Some("csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("patient {}: no recordings in {}", p.id, dir.display())));
    }
    Ok(files)
}

pub fn patient_stft(cfg: &ExperimentConfig, p: &PatientConfig) -> StftConfig {
    StftConfig { line_freq: p.line_freq, ..cfg.stft.clone() }
}

pub fn load_patient(cfg: &ExperimentConfig, p: &PatientConfig) -> CliResult<PatientData> {
    let files = recording_files(cfg, p)?;
    let mut recordings = Vec::new();
    let mut seizures = AnnotationSet::default();
    for f in &files {
        let rec = load_recording(f, RecordingFormat::from_path(f)).map_err(|e| CliError::for_patient(&p.id, e))?;
        if rec.sample_rate() != cfg.stft.sample_rate {
            return Err(CliError::Config(format!(
                "patient {}: {} is sampled at {} Hz, configuration expects {} Hz",
                p.id,
                f.display(),
                rec.sample_rate(),
                cfg.stft.sample_rate
            )));
        }
        let mut rec = select_channels(&rec, &p.channels).map_err(|e| CliError::for_patient(&p.id, e))?;
        rec.patient_id = p.id.clone();
        let ann = load_annotations(&annotation_path(f)).map_err(|e| CliError::for_patient(&p.id, e))?;
        seizures = seizures
            .merged_with(&ann.shifted(rec.start_time))
            .map_err(|e| CliError::for_patient(&p.id, e))?;
        recordings.push(rec);
    }
    let mut order: Vec<usize> = (0..recordings.len()).collect();
    order.sort_by(|&a, &b| recordings[a].start_time.total_cmp(&recordings[b].start_time));
    let recordings: Vec<Recording> = order.iter().map(|&i| recordings[i].clone()).collect();
    let recording_files: Vec<PathBuf> = order.iter().map(|&i| files[i].clone()).collect();
    if recordings.windows(2).any(|w| w[1].start_time < w[0].end_time()) {
        return Err(CliError::Data(format!("patient {}: recordings overlap in time", p.id)));
    }

    let merged = merge_leading_seizures(&seizures, cfg.policy.lead_merge_min);
    let segments: Vec<Segment> = recordings
        .iter()
        .flat_map(|r| label_intervals((r.start_time, r.end_time()), &merged, &cfg.policy))
        .collect();
    let interictal_hours = segments
        .iter()
        .filter(|s| s.label == SegmentLabel::Interictal)
        .map(Segment::duration_s)
        .sum::<f64>()
        / 3600.0;
    let eligibility = check_eligibility(&merged, interictal_hours, &cfg.policy);
    Ok(PatientData {
        id: p.id.clone(),
        recordings,
        recording_files,
        merged,
        segments,
        interictal_hours,
        eligibility,
    })
}

/// Sample index of a window start, used as its identity.
pub fn window_key(start_s: f64, sample_rate: u32) -> i64 {
    (start_s * sample_rate as f64).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedWindow {
    /// Relative to the cache directory.
    pub file: String,
    pub start_s: f64,
    pub label: WindowLabel,
    pub seizure: Option<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientIndex {
    pub id: String,
    pub shape: Vec<usize>,
    pub mask: BinMask,
    pub eligible: bool,
    pub reasons: Vec<String>,
    pub interictal_hours: f64,
    pub seizures: AnnotationSet,
    pub windows: Vec<IndexedWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    /// Hash of the configuration and recording bytes the cache was built from.
    pub input_hash: String,
    pub stft: StftConfig,
    pub base_stride_s: f64,
    pub window_s: f64,
    pub patients: Vec<PatientIndex>,
}

impl CacheIndex {
    pub fn path(cfg: &ExperimentConfig) -> PathBuf {
        cfg.cache_dir().join("index.json")
    }

    pub fn load(cfg: &ExperimentConfig) -> CliResult<CacheIndex> {
        let path = Self::path(cfg);
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "{} (run `szgan preprocess` first)",
                path.display()
            )));
        }
        let index: CacheIndex = read_json(&path)?;
        if index.stft != cfg.stft || index.base_stride_s != cfg.base_stride_s {
            return Err(CliError::MissingArtifact(format!(
                "{} was built with different preprocessing settings; rerun `szgan preprocess`",
                path.display()
            )));
        }
        Ok(index)
    }

    pub fn patient(&self, id: &str) -> Option<&PatientIndex> {
        self.patients.iter().find(|p| p.id == id)
    }
}

/// Hash over the preprocessing-relevant configuration and the raw recording bytes.
pub fn preprocess_input_hash(cfg: &ExperimentConfig, patients: &[PatientData]) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(&cfg.stft, cfg.base_stride_s, &cfg.policy, &cfg.patients)).map_err(szgan_core::Error::from)?);
    for p in patients {
        for f in &p.recording_files {
            let bytes = fs::read(f).map_err(|e| io_err(f, e))?;
            h.update(Sha256::digest(&bytes));
            if let Ok(ann) = fs::read(annotation_path(f)) {
                h.update(Sha256::digest(&ann));
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Materializes spectrograms for a patient, preferring cached files.
pub struct WindowStore<'a> {
    patient: &'a PatientData,
    stft: StftConfig,
    cache_dir: PathBuf,
    cached: HashMap<i64, &'a IndexedWindow>,
    memo: HashMap<i64, Spectrogram>,
}

impl<'a> WindowStore<'a> {
    pub fn new(patient: &'a PatientData, index: &'a PatientIndex, stft: StftConfig, cache_dir: PathBuf) -> Self {
        let cached = index
            .windows
            .iter()
            .map(|w| (window_key(w.start_s, stft.sample_rate), w))
            .collect();
        Self { patient, stft, cache_dir, cached, memo: HashMap::new() }
    }

    pub fn get(&mut self, plan: &WindowPlan) -> CliResult<Spectrogram> {
        let key = window_key(plan.start_s, self.stft.sample_rate);
        if let Some(s) = self.memo.get(&key) {
            let mut s = s.clone();
            s.label = plan.label;
            return Ok(s);
        }
        let mut s = match self.cached.get(&key) {
            Some(w) => read_spectrogram(&self.cache_dir.join(&w.file))
                .map_err(|e| CliError::for_patient(&self.patient.id, e))?
                .0,
            None => {
                let rec = self
                    .patient
                    .recordings
                    .iter()
                    .find(|r| r.start_time <= plan.start_s && plan.start_s + WINDOW_S <= r.end_time() + 1e-9)
                    .ok_or_else(|| {
                        CliError::Data(format!(
                            "patient {}: no recording covers a window at {} s",
                            self.patient.id, plan.start_s
                        ))
                    })?;
                window_to_spectrogram(rec, plan.start_s, &self.stft).map_err(|e| CliError::for_patient(&self.patient.id, e))?
            }
        };
        s.label = plan.label;
        self.memo.insert(key, s.clone());
        Ok(s)
    }

    pub fn get_all(&mut self, plans: &[WindowPlan]) -> CliResult<Vec<Spectrogram>> {
        plans.iter().map(|p| self.get(p)).collect()
    }
}
