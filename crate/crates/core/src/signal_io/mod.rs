//! Recordings, seizure annotations, file formats and synthetic EEG.

mod format;
mod synthetic;

pub use format::{
    annotation_path, load_annotations, load_recording, save_annotations, save_recording,
    RecordingFormat,
};
pub use synthetic::{generate_synthetic, PreictalSignature, SyntheticProfile};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 256;

/// Multichannel EEG. Samples are stored channel-major in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub patient_id: String,
    channels: Vec<String>,
    sample_rate: u32,
    /// Seconds on the patient clock at which sample 0 was taken.
    pub start_time: f64,
    samples: Vec<Vec<f64>>,
}

impl Recording {
    pub fn new(
        patient_id: impl Into<String>,
        channels: Vec<String>,
        sample_rate: u32,
        start_time: f64,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if channels.len() != samples.len() {
            return Err(Error::Argument(format!(
                "{} channel names for {} sample rows",
                channels.len(),
                samples.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = channels.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::Argument(format!("duplicate channel name {dup}")));
        }
        if let Some(first) = samples.first() {
            if let Some((i, row)) = samples.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
                return Err(Error::Argument(format!(
                    "channel {i} has {} samples, expected {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        if !start_time.is_finite() {
            return Err(Error::Argument("start time must be finite".into()));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            channels,
            sample_rate,
            start_time,
            samples,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate as f64
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration_s()
    }
}

/// Reorders (and subsets) channels to match `wanted`.
pub fn select_channels(rec: &Recording, wanted: &[String]) -> Result<Recording> {
    let missing: Vec<String> = wanted
        .iter()
        .filter(|w| !rec.channels.contains(w))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingChannels(missing));
    }
    let samples = wanted
        .iter()
        .map(|w| {
            let i = rec.channels.iter().position(|c| c == w).unwrap();
            rec.samples[i].clone()
        })
        .collect();
    Recording::new(
        rec.patient_id.clone(),
        wanted.to_vec(),
        rec.sample_rate,
        rec.start_time,
        samples,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seizure {
    pub onset_s: f64,
    pub offset_s: f64,
}

/// Seizure intervals sorted by onset. Intervals may touch but never overlap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Seizure>", into = "Vec<Seizure>")]
pub struct AnnotationSet {
    seizures: Vec<Seizure>,
}

impl TryFrom<Vec<Seizure>> for AnnotationSet {
    type Error = Error;
    fn try_from(v: Vec<Seizure>) -> Result<Self> {
        AnnotationSet::new(v)
    }
}

impl From<AnnotationSet> for Vec<Seizure> {
    fn from(a: AnnotationSet) -> Self {
        a.seizures
    }
}

impl AnnotationSet {
    pub fn new(seizures: Vec<Seizure>) -> Result<Self> {
        for s in &seizures {
            if !(s.onset_s.is_finite() && s.offset_s.is_finite() && s.onset_s < s.offset_s) {
                return Err(Error::Argument(format!(
                    "seizure [{}, {}) must have finite onset < offset",
                    s.onset_s, s.offset_s
                )));
            }
        }
        for pair in seizures.windows(2) {
            if pair[1].onset_s < pair[0].offset_s {
                return Err(Error::Argument(format!(
                    "seizures [{}, {}) and [{}, {}) overlap or are out of order",
                    pair[0].onset_s, pair[0].offset_s, pair[1].onset_s, pair[1].offset_s
                )));
            }
        }
        Ok(Self { seizures })
    }

    pub fn seizures(&self) -> &[Seizure] {
        &self.seizures
    }

    pub fn len(&self) -> usize {
        self.seizures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seizures.is_empty()
    }

    /// Moves every interval by `dt` seconds (recording clock -> patient clock).
    pub fn shifted(&self, dt: f64) -> AnnotationSet {
        AnnotationSet {
            seizures: self
                .seizures
                .iter()
                .map(|s| Seizure {
                    onset_s: s.onset_s + dt,
                    offset_s: s.offset_s + dt,
                })
                .collect(),
        }
    }

    /// Union of two sets, re-sorted and re-validated.
    pub fn merged_with(&self, other: &AnnotationSet) -> Result<AnnotationSet> {
        let mut all: Vec<Seizure> = self.seizures.iter().chain(&other.seizures).copied().collect();
        all.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        AnnotationSet::new(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec3() -> Recording {
        Recording::new(
            "p",
            vec!["A".into(), "B".into(), "C".into()],
            256,
            0.0,
            vec![vec![1.0, 1.5], vec![2.0, 2.5], vec![3.0, 3.5]],
        )
        .unwrap()
    }

    #[test]
    fn recording_invariants() {
        assert!(Recording::new("p", vec!["A".into()], 0, 0.0, vec![vec![0.0]]).is_err());
        assert!(Recording::new("p", vec!["A".into(), "A".into()], 256, 0.0, vec![vec![], vec![]]).is_err());
        assert!(Recording::new("p", vec!["A".into(), "B".into()], 256, 0.0, vec![vec![0.0], vec![]]).is_err());
    }

    #[test]
    fn select_identity_and_reverse() {
        let rec = rec3();
        let same = select_channels(&rec, rec.channels()).unwrap();
        assert_eq!(same, rec);
        let rev: Vec<String> = vec!["C".into(), "B".into(), "A".into()];
        let r = select_channels(&rec, &rev).unwrap();
        assert_eq!(r.channels(), rev.as_slice());
        assert_eq!(r.channel(0)[0], 3.0);
        assert_eq!(r.channel(1)[0], 2.0);
        assert_eq!(r.channel(2)[0], 1.0);
    }

    #[test]
    fn select_sixteen_of_twenty_two() {
        let names: Vec<String> = (0..22).map(|i| format!("E{i}")).collect();
        let rec = Recording::new("p", names.clone(), 256, 0.0, vec![vec![0.0; 4]; 22]).unwrap();
        let wanted: Vec<String> = names[3..19].to_vec();
        let sel = select_channels(&rec, &wanted).unwrap();
        assert_eq!(sel.n_channels(), 16);
    }

    #[test]
    fn select_reports_missing_names() {
        let err = select_channels(&rec3(), &["A".into(), "Z".into(), "Y".into()]).unwrap_err();
        match err {
            Error::MissingChannels(m) => assert_eq!(m, vec!["Z".to_string(), "Y".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn annotation_invariants() {
        let s = |a, b| Seizure { onset_s: a, offset_s: b };
        assert!(AnnotationSet::new(vec![s(10.0, 5.0)]).is_err());
        assert!(AnnotationSet::new(vec![s(0.0, 10.0), s(5.0, 20.0)]).is_err());
        assert!(AnnotationSet::new(vec![s(0.0, 10.0), s(10.0, 20.0)]).is_ok());
        let json = r#"[{"onset_s": 20.0, "offset_s": 30.0}, {"onset_s": 0.0, "offset_s": 1.0}]"#;
        assert!(serde_json::from_str::<AnnotationSet>(json).is_err());
    }
}
