//! On-disk recording formats.
//!
//! `raw_f64`: magic `SZR1`, `u32` LE header length, JSON header
//! `{patient_id, channels, sample_rate, n_samples, start_time}`, then
//! channel-major little-endian `f64` samples.
//!
//! `csv`: a header row of channel names and one row per time step. Metadata
//! that CSV cannot carry lives in `<stem>.meta.json`; without it the patient id
//! defaults to the file stem, 256 Hz and start time 0.
//!
//! Seizure annotations for either format live in `<stem>.ann.json` as a JSON
//! array of `{onset_s, offset_s}` in seconds from the recording start.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnnotationSet, Recording, DEFAULT_SAMPLE_RATE};
use crate::container;
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"SZR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingFormat {
    RawF64,
    Csv,
}

impl RecordingFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => RecordingFormat::Csv,
            _ => RecordingFormat::RawF64,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    patient_id: String,
    channels: Vec<String>,
    sample_rate: u32,
    n_samples: usize,
    start_time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvMeta {
    patient_id: String,
    sample_rate: u32,
    start_time: f64,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("recording");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// `<dir>/<stem>.ann.json` for a recording at `<dir>/<stem>.<ext>`.
pub fn annotation_path(recording_path: &Path) -> PathBuf {
    sidecar(recording_path, "ann.json")
}

pub fn save_recording(rec: &Recording, path: &Path, format: RecordingFormat) -> Result<()> {
    match format {
        RecordingFormat::RawF64 => {
            let header = RawHeader {
                patient_id: rec.patient_id.clone(),
                channels: rec.channels().to_vec(),
                sample_rate: rec.sample_rate(),
                n_samples: rec.n_samples(),
                start_time: rec.start_time,
            };
            let payload: Vec<f64> = rec.samples().iter().flatten().copied().collect();
            container::write(path, RAW_MAGIC, &header, &payload)
        }
        RecordingFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
            w.write_record(rec.channels()).map_err(|e| csv_io(path, e))?;
            let mut row = Vec::with_capacity(rec.n_channels());
            for t in 0..rec.n_samples() {
                row.clear();
                row.extend(rec.samples().iter().map(|ch| ch[t].to_string()));
                w.write_record(&row).map_err(|e| csv_io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            let meta = CsvMeta {
                patient_id: rec.patient_id.clone(),
                sample_rate: rec.sample_rate(),
                start_time: rec.start_time,
            };
            let meta_path = sidecar(path, "meta.json");
            fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
                .map_err(|e| Error::io(meta_path, e))
        }
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn load_recording(path: &Path, format: RecordingFormat) -> Result<Recording> {
    match format {
        RecordingFormat::RawF64 => load_raw(path),
        RecordingFormat::Csv => load_csv(path),
    }
}

fn load_raw(path: &Path) -> Result<Recording> {
    let (header, payload): (RawHeader, Vec<f64>) = container::read(path, RAW_MAGIC, true)?;
    let n_ch = header.channels.len();
    if payload.len() != n_ch * header.n_samples {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 4,
            message: format!(
                "header declares {n_ch} x {} samples but payload holds {} values",
                header.n_samples,
                payload.len()
            ),
        });
    }
    let samples = if header.n_samples == 0 {
        vec![Vec::new(); n_ch]
    } else {
        payload.chunks_exact(header.n_samples).map(<[f64]>::to_vec).collect()
    };
    Recording::new(
        header.patient_id,
        header.channels,
        header.sample_rate,
        header.start_time,
        samples,
    )
    .map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 8,
        message: e.to_string(),
    })
}

fn load_csv(path: &Path) -> Result<Recording> {
    let parse = |offset: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let channels: Vec<String> = reader
        .headers()
        .map_err(|e| parse(0, format!("bad header row: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if channels.is_empty() || channels.iter().any(String::is_empty) {
        return Err(parse(0, "header row must name every channel".into()));
    }
    let mut samples = vec![Vec::new(); channels.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            parse(offset, format!("row {row}: {e}"))
        })?;
        let offset = record.position().map_or(0, |p| p.byte());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse(offset, format!("row {row}, column {col}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse(offset, format!("row {row}, column {col}: non-finite sample {v}")));
            }
            samples[col].push(v);
        }
    }
    let meta_path = sidecar(path, "meta.json");
    let meta = if meta_path.exists() {
        let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_slice(&bytes)?
    } else {
        CsvMeta {
            patient_id: path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("unknown")
                .to_string(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            start_time: 0.0,
        }
    };
    Recording::new(meta.patient_id, channels, meta.sample_rate, meta.start_time, samples)
        .map_err(|e| parse(0, e.to_string()))
}

pub fn save_annotations(path: &Path, ann: &AnnotationSet) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(ann)?).map_err(|e| Error::io(path, e))
}

/// Reads a sidecar; a missing file means no seizures.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    if !path.exists() {
        return Ok(AnnotationSet::default());
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Seizure;

    fn sample_recording(seconds: usize) -> Recording {
        let n = seconds * 256;
        let samples = (0..2)
            .map(|c| (0..n).map(|t| ((t * (c + 3)) as f64 * 0.013).sin() * 40.0 + 0.1).collect())
            .collect();
        Recording::new("pat", vec!["F3".into(), "C4".into()], 256, 1234.5, samples).unwrap()
    }

    #[test]
    fn raw_round_trip_ten_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.szr");
        let rec = sample_recording(10);
        save_recording(&rec, &path, RecordingFormat::RawF64).unwrap();
        let back = load_recording(&path, RecordingFormat::RawF64).unwrap();
        assert_eq!(back.n_channels(), 2);
        assert_eq!(back.n_samples(), 2560);
        assert_eq!(back, rec);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let rec = sample_recording(1);
        save_recording(&rec, &path, RecordingFormat::Csv).unwrap();
        let back = load_recording(&path, RecordingFormat::Csv).unwrap();
        assert_eq!(back, rec);
        assert_eq!(RecordingFormat::from_path(&path), RecordingFormat::Csv);
    }

    #[test]
    fn csv_nan_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        fs::write(&path, "A,B\n1.0,2.0\n3.0,NaN\n").unwrap();
        let err = load_recording(&path, RecordingFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1, column 1"), "{msg}");
        assert!(matches!(err, Error::Parse { offset: 12, .. }), "{msg}");
    }

    #[test]
    fn csv_ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "A,B\n1.0,2.0\n3.0\n").unwrap();
        assert!(matches!(
            load_recording(&path, RecordingFormat::Csv),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn raw_rejects_nan_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.szr");
        let mut rec = sample_recording(1);
        save_recording(&rec, &path, RecordingFormat::RawF64).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_recording(&path, RecordingFormat::RawF64).unwrap_err();
        assert!(matches!(err, Error::Parse { offset, .. } if offset == (n - 8) as u64));

        rec.patient_id = "x".into();
        fs::write(&path, b"SZR1\x05\x00\x00\x00{bad}").unwrap();
        assert!(matches!(
            load_recording(&path, RecordingFormat::RawF64),
            Err(Error::Parse { .. })
        ));
        fs::write(&path, b"EDF+").unwrap();
        assert!(load_recording(&path, RecordingFormat::RawF64).is_err());
    }

    #[test]
    fn annotation_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec_path = dir.path().join("pat1_seizures.szr");
        let ann_path = annotation_path(&rec_path);
        assert_eq!(ann_path.file_name().unwrap(), "pat1_seizures.ann.json");
        let ann = AnnotationSet::new(vec![
            Seizure { onset_s: 100.0, offset_s: 160.0 },
            Seizure { onset_s: 700.0, offset_s: 730.5 },
        ])
        .unwrap();
        save_annotations(&ann_path, &ann).unwrap();
        assert_eq!(load_annotations(&ann_path).unwrap(), ann);
        let text = fs::read_to_string(&ann_path).unwrap();
        assert!(text.contains("onset_s") && text.contains("offset_s"));
        assert!(load_annotations(&dir.path().join("none.ann.json")).unwrap().is_empty());
    }
}
