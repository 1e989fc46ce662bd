use std::fs;

use szgan_core::preprocess::{build_bin_mask, plan_windows, window_to_spectrogram, write_spectrogram, WINDOW_S};

use super::parallel_map;
use crate::config::ExperimentConfig;
use crate::data::{
    load_patient, patient_stft, preprocess_input_hash, sha256_hex, window_key, write_json, CacheIndex, IndexedWindow,
    PatientData, PatientIndex,
};
use crate::error::{CliError, CliResult};

fn cache_patient(cfg: &ExperimentConfig, data: &PatientData) -> CliResult<PatientIndex> {
    let pcfg = cfg.patient(&data.id).expect("patient comes from the config");
    let stft = patient_stft(cfg, pcfg);
    let mask = build_bin_mask(pcfg.line_freq).map_err(|e| CliError::for_patient(&data.id, e))?;
    let plans = plan_windows(&data.segments, cfg.base_stride_s).map_err(|e| CliError::for_patient(&data.id, e))?;
    let mut windows = Vec::with_capacity(plans.len());
    let mut shape = vec![data.recordings[0].n_channels(), 0, 0];
    for w in &plans {
        let rec = data
            .recordings
            .iter()
            .find(|r| r.start_time <= w.start_s && w.start_s + WINDOW_S <= r.end_time() + 1e-9)
            .expect("labeled segments lie inside recordings");
        let mut s = window_to_spectrogram(rec, w.start_s, &stft).map_err(|e| CliError::for_patient(&data.id, e))?;
        s.label = w.label;
        shape = s.data.shape().to_vec();
        let file = format!("{}/w{:010}.szs", data.id, window_key(w.start_s, stft.sample_rate));
        let path = cfg.cache_dir().join(&file);
        write_spectrogram(&path, &s, &mask, &stft)?;
        let bytes = fs::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        windows.push(IndexedWindow {
            file,
            start_s: w.start_s,
            label: w.label,
            seizure: w.seizure,
            sha256: sha256_hex(&bytes),
        });
    }
    log::info!(
        "patient {}: {} windows of shape {:?}, eligible: {}",
        data.id,
        windows.len(),
        shape,
        data.eligibility.eligible
    );
    Ok(PatientIndex {
        id: data.id.clone(),
        shape,
        mask,
        eligible: data.eligibility.eligible,
        reasons: data.eligibility.reasons.clone(),
        interictal_hours: data.interictal_hours,
        seizures: data.merged.clone(),
        windows,
    })
}

fn cache_intact(cfg: &ExperimentConfig, index: &CacheIndex) -> bool {
    index
        .patients
        .iter()
        .flat_map(|p| &p.windows)
        .all(|w| fs::read(cfg.cache_dir().join(&w.file)).is_ok_and(|b| sha256_hex(&b) == w.sha256))
}

/// Builds the spectrogram cache and its index. Does nothing when the inputs
/// hash to the recorded value and every cached file is intact.
pub fn preprocess(cfg: &ExperimentConfig, jobs: usize) -> CliResult<CacheIndex> {
    cfg.validate()?;
    write_json(&cfg.out_dir().join("config.json"), cfg)?;
    let patients: Vec<PatientData> = cfg.patients.iter().map(|p| load_patient(cfg, p)).collect::<CliResult<_>>()?;
    let input_hash = preprocess_input_hash(cfg, &patients)?;
    let index_path = CacheIndex::path(cfg);
    if let Ok(existing) = crate::data::read_json::<CacheIndex>(&index_path) {
        if existing.input_hash == input_hash && cache_intact(cfg, &existing) {
            log::info!("cache up to date ({})", index_path.display());
            return Ok(existing);
        }
    }
    let entries = parallel_map(jobs, &patients, |p| cache_patient(cfg, p))?;
    let index = CacheIndex {
        input_hash,
        stft: cfg.stft.clone(),
        base_stride_s: cfg.base_stride_s,
        window_s: WINDOW_S,
        patients: entries,
    };
    write_json(&index_path, &index)?;
    Ok(index)
}
