use serde::Serialize;
use szgan_core::eval::Eligibility;
use szgan_core::signal_io::{
    annotation_path, generate_synthetic, save_annotations, save_recording, RecordingFormat, Seizure,
};

use crate::config::ExperimentConfig;
use crate::data::{derive_seed, load_patient, write_json};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthOutcome {
    pub patient_id: String,
    pub n_seizures: usize,
    pub eligibility: Eligibility,
}

/// Writes a two-recording synthetic dataset for every configured patient:
/// a seizure-free recording from time zero, then after `recording_gap_h` a
/// recording holding the seizures.
pub fn synth(cfg: &ExperimentConfig) -> CliResult<Vec<SynthOutcome>> {
    let s = &cfg.synth;
    if !(s.interictal_h > 0.0 && s.seizure_recording_h > 0.0 && s.recording_gap_h >= 0.0) {
        return Err(CliError::Config("synthetic recording lengths must be positive".into()));
    }
    let seizure_len_s = s.seizure_recording_h * 3600.0;
    let seizures: Vec<Seizure> = s
        .seizure_onsets_min
        .iter()
        .map(|&m| Seizure { onset_s: m * 60.0, offset_s: m * 60.0 + s.seizure_duration_s })
        .collect();
    if seizures.iter().any(|z| z.onset_s < 0.0 || z.offset_s > seizure_len_s) {
        return Err(CliError::Config("synthetic seizures must lie inside the seizure recording".into()));
    }

    let mut out = Vec::new();
    for p in &cfg.patients {
        let dir = cfg.data_dir().join(&p.id);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let mut profile = s.profile.clone();
        profile.line_freq = p.line_freq;
        profile.sample_rate = cfg.stft.sample_rate;
        let plan = [
            ("interictal", 0.0, s.interictal_h * 3600.0, &[][..], "a"),
            (
                "seizures",
                (s.interictal_h + s.recording_gap_h) * 3600.0,
                seizure_len_s,
                &seizures[..],
                "b",
            ),
        ];
        for (name, start, duration, seiz, tag) in plan {
            profile.seed = derive_seed(cfg.seed, &["synth", &p.id, tag]);
            let (mut rec, ann) =
                generate_synthetic(&profile, duration, s.n_channels, seiz).map_err(|e| CliError::for_patient(&p.id, e))?;
            rec.patient_id = p.id.clone();
            rec.start_time = start;
            let path = dir.join(format!("{name}.szr"));
            save_recording(&rec, &path, RecordingFormat::RawF64)?;
            save_annotations(&annotation_path(&path), &ann)?;
        }
        let data = load_patient(cfg, p)?;
        let eligibility = data.eligibility.clone();
        log::info!(
            "patient {}: {} seizures, {:.2} interictal hours, eligible: {}",
            p.id,
            data.merged.len(),
            data.interictal_hours,
            eligibility.eligible
        );
        out.push(SynthOutcome { patient_id: p.id.clone(), n_seizures: data.merged.len(), eligibility });
    }
    write_json(&cfg.data_dir().join("synth_summary.json"), &out)?;
    Ok(out)
}
