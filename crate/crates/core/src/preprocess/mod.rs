//! Spectrogram front end: STFT, line-noise bin mask, window extraction and
//! class balancing.

mod cache;
mod windows;

pub use cache::{read_spectrogram, write_spectrogram, CacheHeader, CACHE_MAGIC};
pub use windows::{
    balance_and_oversample, clip_segments, extract_windows, plan_windows, Balanced, WindowPlan,
};

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Recording;
use crate::tensor::Tensor;

/// Length of one classification window in seconds.
pub const WINDOW_S: f64 = 28.0;
pub const FRAMES: usize = 56;
pub const KEPT_BINS: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    /// Raised cosine `0.5 (1 - cos(2 pi k / (L - 1)))`.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len_s: f64,
    pub overlap: f64,
    pub window_fn: WindowFn,
    pub line_freq: u32,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len_s: 1.0,
            overlap: 0.5,
            window_fn: WindowFn::Hann,
            line_freq: 60,
            sample_rate: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let len = self.window_len_s * self.sample_rate as f64;
        if !(len >= 2.0 && len.fract() == 0.0) {
            return Err(Error::Config(format!(
                "window of {} s at {} Hz is not a whole number of samples",
                self.window_len_s, self.sample_rate
            )));
        }
        if !(self.overlap > 0.0 && self.overlap < 1.0) {
            return Err(Error::Config(format!("overlap {} outside (0, 1)", self.overlap)));
        }
        let hop = len * (1.0 - self.overlap);
        if hop.fract() != 0.0 {
            return Err(Error::Config(format!("hop of {hop} samples is fractional")));
        }
        if self.line_freq != 50 && self.line_freq != 60 {
            return Err(Error::Config(format!("line frequency {} Hz unsupported", self.line_freq)));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_len_s * self.sample_rate as f64) as usize
    }

    pub fn hop(&self) -> usize {
        (self.window_len() as f64 * (1.0 - self.overlap)) as usize
    }

    pub fn n_bins(&self) -> usize {
        self.window_len() / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let l = self.window_len();
        match self.window_fn {
            WindowFn::Hann => (0..l)
                .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / (l - 1) as f64).cos()))
                .collect(),
            WindowFn::Rectangular => vec![1.0; l],
        }
    }

    /// Number of frames for `n` input samples, counting the one-hop tail padding.
    pub fn n_frames(&self, n: usize) -> usize {
        (n + self.hop() - self.window_len()) / self.hop() + 1
    }
}

/// One-sided STFT. The signal is zero-padded by one hop at the tail, so a
/// 28 s window at 256 Hz yields 56 frames of 129 bins.
pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<Complex64>>> {
    cfg.validate()?;
    let (l, hop) = (cfg.window_len(), cfg.hop());
    if signal.len() < l {
        return Err(Error::Argument(format!(
            "signal of {} samples is shorter than one {l}-sample window",
            signal.len()
        )));
    }
    let window = cfg.window();
    let fft = FftPlanner::new().plan_fft_forward(l);
    let n_frames = cfg.n_frames(signal.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            let x = signal.get(start + k).copied().unwrap_or(0.0);
            *b = Complex64::new(x * window[k], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..cfg.n_bins()].to_vec());
    }
    Ok(out)
}

/// `|stft|` as `frames x bins`.
pub fn stft_magnitude(signal: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    Ok(stft(signal, cfg)?
        .into_iter()
        .map(|f| f.iter().map(|c| c.norm()).collect())
        .collect())
}

/// Frequency bins kept after removing DC, both line-noise bands and the top two bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinMask {
    pub line_freq: u32,
    pub kept: Vec<usize>,
}

/// Mask for 1 Hz bins `0..=128`. Removes bin 0, `f-3..=f+3`, `2f-3..=2f+3`
/// and bins 127-128.
pub fn build_bin_mask(line_freq: u32) -> Result<BinMask> {
    if line_freq != 50 && line_freq != 60 {
        return Err(Error::Argument(format!("line frequency {line_freq} Hz unsupported (50 or 60)")));
    }
    let f = line_freq as usize;
    let dropped = |b: usize| {
        b == 0 || (f - 3..=f + 3).contains(&b) || (2 * f - 3..=2 * f + 3).contains(&b) || b >= 127
    };
    Ok(BinMask {
        line_freq,
        kept: (0..=128).filter(|&b| !dropped(b)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Preictal,
    Interictal,
    Unlabeled,
}

/// `channels x 56 x 112` magnitude spectrogram of one 28 s window.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Tensor,
    /// Patient clock.
    pub window_start_s: f64,
    pub label: WindowLabel,
    pub patient_id: String,
}

/// Spectrogram of `[start_s, start_s + 28)` (patient clock) with the line-noise mask applied.
pub fn window_to_spectrogram(rec: &Recording, start_s: f64, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if rec.sample_rate() != cfg.sample_rate {
        return Err(Error::Config(format!(
            "recording of {} is sampled at {} Hz, configuration expects {} Hz",
            rec.patient_id,
            rec.sample_rate(),
            cfg.sample_rate
        )));
    }
    if cfg.n_bins() != 129 {
        return Err(Error::Config("the bin mask assumes 1 Hz bins (a 1 s window)".into()));
    }
    let mask = build_bin_mask(cfg.line_freq)?;
    let fs = cfg.sample_rate as f64;
    let len = (WINDOW_S * fs).round() as usize;
    let offset = ((start_s - rec.start_time) * fs).round();
    if offset < 0.0 || offset as usize + len > rec.n_samples() {
        return Err(Error::Argument(format!(
            "window [{start_s}, {}) lies outside the recording [{}, {})",
            start_s + WINDOW_S,
            rec.start_time,
            rec.end_time()
        )));
    }
    let offset = offset as usize;
    let n_frames = cfg.n_frames(len);
    let mut data = Vec::with_capacity(rec.n_channels() * n_frames * mask.kept.len());
    for c in 0..rec.n_channels() {
        let mag = stft_magnitude(&rec.channel(c)[offset..offset + len], cfg)?;
        for frame in &mag {
            data.extend(mask.kept.iter().map(|&b| frame[b]));
        }
    }
    Ok(Spectrogram {
        data: Tensor::new(vec![rec.n_channels(), n_frames, mask.kept.len()], data)?,
        window_start_s: start_s,
        label: WindowLabel::Unlabeled,
        patient_id: rec.patient_id.clone(),
    })
}

/// Zero mean, unit variance over the whole tensor. A constant input maps to zeros.
pub fn standardize(t: &Tensor) -> Tensor {
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    let data = t.data().iter().map(|v| (v - mean) * inv).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_mag(frame: &[f64], bins: usize) -> Vec<f64> {
        let l = frame.len() as f64;
        (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * k as f64 * n as f64 / l;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn sine(freq: f64, seconds: f64, fs: f64) -> Vec<f64> {
        (0..(seconds * fs) as usize)
            .map(|t| (2.0 * PI * freq * t as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn frame_count_and_line_peak() {
        let cfg = StftConfig::default();
        let mag = stft_magnitude(&sine(60.0, 28.0, 256.0), &cfg).unwrap();
        assert_eq!(mag.len(), FRAMES);
        assert_eq!(mag[0].len(), 129);
        for frame in &mag[..55] {
            let arg = (1..=128).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(arg, 60);
        }
        let oracle = naive_dft_mag(
            &sine(60.0, 1.0, 256.0).iter().zip(cfg.window()).map(|(x, w)| x * w).collect::<Vec<_>>(),
            129,
        );
        for (a, b) in mag[0].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * oracle[60]);
        }
    }

    #[test]
    fn zeros_and_short_signals() {
        let cfg = StftConfig::default();
        let mag = stft_magnitude(&vec![0.0; 7168], &cfg).unwrap();
        assert!(mag.iter().flatten().all(|v| *v == 0.0));
        assert!(stft(&[0.0; 255], &cfg).is_err());
    }

    #[test]
    fn masks_match_quoted_bands() {
        let m60 = build_bin_mask(60).unwrap();
        assert_eq!(m60.kept.len(), KEPT_BINS);
        for b in [0, 57, 60, 63, 117, 120, 123, 127, 128] {
            assert!(!m60.kept.contains(&b));
        }
        for b in [1, 56, 64, 116, 124, 126] {
            assert!(m60.kept.contains(&b));
        }
        let m50 = build_bin_mask(50).unwrap();
        assert_eq!(m50.kept.len(), KEPT_BINS);
        assert!((47..=53).chain(97..=103).all(|b| !m50.kept.contains(&b)));
        assert!(m50.kept.contains(&30) && m60.kept.contains(&30));
        assert!(build_bin_mask(55).is_err());
    }

    fn recording(n_ch: usize, seconds: usize) -> Recording {
        let samples = (0..n_ch)
            .map(|c| sine(10.0 + c as f64, seconds as f64, 256.0))
            .collect();
        let names = (0..n_ch).map(|c| format!("c{c}")).collect();
        Recording::new("p", names, 256, 100.0, samples).unwrap()
    }

    #[test]
    fn spectrogram_dimensions() {
        let cfg = StftConfig::default();
        for n in [16, 6] {
            let s = window_to_spectrogram(&recording(n, 30), 101.0, &cfg).unwrap();
            assert_eq!(s.data.shape(), &[n, 56, 112]);
            assert!(s.data.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
        assert!(window_to_spectrogram(&recording(1, 30), 99.0, &cfg).is_err());
        assert!(window_to_spectrogram(&recording(1, 30), 103.0, &cfg).is_err());
    }

    #[test]
    fn shift_by_one_hop_shifts_frames() {
        let cfg = StftConfig::default();
        let rec = recording(1, 40);
        let a = window_to_spectrogram(&rec, 100.0, &cfg).unwrap();
        let b = window_to_spectrogram(&rec, 100.5, &cfg).unwrap();
        let row = |s: &Spectrogram, t: usize| s.data.data()[t * 112..(t + 1) * 112].to_vec();
        for t in 1..54 {
            for (x, y) in row(&a, t + 1).iter().zip(row(&b, t)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn standardize_moments() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = standardize(&t);
        let mean: f64 = s.data().iter().sum::<f64>() / 6.0;
        let var: f64 = s.data().iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(standardize(&Tensor::full(&[4], 3.0)).data().iter().all(|v| *v == 0.0));
    }
}
