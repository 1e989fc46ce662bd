//! "SZS1" spectrogram cache files.
//!
//! Layout: magic `SZS1`, `u32` LE header length, JSON header
//! `{patient_id, label, start_s, shape, mask, cfg}`, then the magnitudes as
//! little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinMask, Spectrogram, StftConfig, WindowLabel};
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"SZS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub patient_id: String,
    pub label: WindowLabel,
    pub start_s: f64,
    pub shape: Vec<usize>,
    pub mask: BinMask,
    pub cfg: StftConfig,
}

pub fn write_spectrogram(path: &Path, s: &Spectrogram, mask: &BinMask, cfg: &StftConfig) -> Result<()> {
    let header = CacheHeader {
        patient_id: s.patient_id.clone(),
        label: s.label,
        start_s: s.window_start_s,
        shape: s.data.shape().to_vec(),
        mask: mask.clone(),
        cfg: cfg.clone(),
    };
    container::write(path, CACHE_MAGIC, &header, s.data.data())
}

pub fn read_spectrogram(path: &Path) -> Result<(Spectrogram, CacheHeader)> {
    let (header, payload): (CacheHeader, Vec<f64>) = container::read(path, CACHE_MAGIC, true)?;
    let data = Tensor::new(header.shape.clone(), payload).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 8,
        message: e.to_string(),
    })?;
    let s = Spectrogram {
        data,
        window_start_s: header.start_s,
        label: header.label,
        patient_id: header.patient_id.clone(),
    };
    Ok((s, header))
}
