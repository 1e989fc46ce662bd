//! Seeded synthetic EEG with line noise and a preictal spectral signature.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnnotationSet, Recording, Seizure, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Band-limited power increase injected before each seizure onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreictalSignature {
    /// Pass band in Hz.
    pub band_hz: (f64, f64),
    /// RMS of the injected component relative to the channel background RMS.
    pub gain: f64,
    /// The signature covers `[onset - lead_s, onset)`.
    pub lead_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    /// AR(1) coefficient of the background, in `[0, 1)`. Zero is white noise;
    /// values near one tilt power towards low frequencies.
    pub spectral_slope: f64,
    /// Background RMS per channel in microvolts. A single value applies to all channels.
    pub channel_amplitudes: Vec<f64>,
    pub line_freq: u32,
    pub line_amplitude: f64,
    pub preictal: PreictalSignature,
    /// Amplitude of the rhythmic discharge written inside each seizure interval,
    /// relative to the background RMS.
    pub ictal_gain: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            spectral_slope: 0.9,
            channel_amplitudes: vec![30.0],
            line_freq: 60,
            line_amplitude: 10.0,
            preictal: PreictalSignature {
                band_hz: (20.0, 40.0),
                gain: 1.5,
                lead_s: 2400.0,
            },
            ictal_gain: 4.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.spectral_slope) {
            return Err(Error::Argument(format!(
                "spectral slope {} outside [0, 1)",
                self.spectral_slope
            )));
        }
        if self.line_freq != 50 && self.line_freq != 60 {
            return Err(Error::Argument(format!(
                "line frequency {} Hz unsupported (50 or 60)",
                self.line_freq
            )));
        }
        if self.preictal.lead_s <= 0.0 {
            return Err(Error::Argument("preictal onset lead must be positive".into()));
        }
        let (lo, hi) = self.preictal.band_hz;
        if !(lo > 0.0 && hi > lo && hi < self.sample_rate as f64 / 2.0) {
            return Err(Error::Argument(format!("preictal band ({lo}, {hi}) Hz invalid")));
        }
        if self.channel_amplitudes.len() != 1 && self.channel_amplitudes.len() != n_channels {
            return Err(Error::Argument(format!(
                "{} channel amplitudes for {n_channels} channels",
                self.channel_amplitudes.len()
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        Ok(())
    }

    fn amplitude(&self, channel: usize) -> f64 {
        if self.channel_amplitudes.len() == 1 {
            self.channel_amplitudes[0]
        } else {
            self.channel_amplitudes[channel]
        }
    }
}

/// Second-order resonator (constant 0 dB peak gain band-pass).
#[derive(Debug, Clone, Copy)]
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl BandPass {
    fn new(lo: f64, hi: f64, fs: f64) -> Self {
        let f0 = (lo * hi).sqrt();
        let q = f0 / (hi - lo);
        let w0 = 2.0 * PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }

    /// RMS of the output for unit-variance white input.
    fn noise_gain(&self) -> f64 {
        let mut impulse = vec![0.0; 16384];
        impulse[0] = 1.0;
        self.run(&impulse).iter().map(|h| h * h).sum::<f64>().sqrt()
    }
}

/// Builds a synthetic recording and its annotations.
///
/// Background is unit-RMS AR(1) noise scaled per channel, plus a line-noise
/// sinusoid with a random phase per channel. Over `[onset - lead, onset)` of
/// every seizure a band-limited noise component is added, and inside each
/// seizure a 4 Hz rhythmic discharge. The output is a pure function of the
/// arguments.
pub fn generate_synthetic(
    profile: &SyntheticProfile,
    duration_s: f64,
    n_channels: usize,
    seizures: &[Seizure],
) -> Result<(Recording, AnnotationSet)> {
    profile.validate(n_channels)?;
    if n_channels == 0 || !(duration_s > 0.0) {
        return Err(Error::Argument("need at least one channel and a positive duration".into()));
    }
    let ann = AnnotationSet::new(seizures.to_vec())?;
    for s in ann.seizures() {
        if s.offset_s > duration_s {
            return Err(Error::Argument(format!(
                "seizure [{}, {}) extends beyond the {duration_s} s recording",
                s.onset_s, s.offset_s
            )));
        }
        if s.onset_s - profile.preictal.lead_s < 0.0 {
            return Err(Error::Argument(format!(
                "seizure at {} s leaves no room for the {} s preictal lead",
                s.onset_s, profile.preictal.lead_s
            )));
        }
    }

    let fs = profile.sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let band = BandPass::new(profile.preictal.band_hz.0, profile.preictal.band_hz.1, fs);
    let band_norm = band.noise_gain();
    let a = profile.spectral_slope;
    let innovation = (1.0 - a * a).sqrt();
    let to_index = |t: f64| ((t * fs).round() as usize).min(n);

    let mut samples = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let amp = profile.amplitude(c);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut x = vec![0.0; n];
        let mut state: f64 = rng.sample(StandardNormal);
        for (t, v) in x.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            state = a * state + innovation * e;
            let line = (2.0 * PI * profile.line_freq as f64 * t as f64 / fs + phase).sin();
            *v = amp * state + profile.line_amplitude * line;
        }
        for s in ann.seizures() {
            let start = to_index(s.onset_s - profile.preictal.lead_s);
            let stop = to_index(s.onset_s);
            let white: Vec<f64> = (start..stop).map(|_| rng.sample(StandardNormal)).collect();
            let scale = profile.preictal.gain * amp / band_norm;
            for (v, b) in x[start..stop].iter_mut().zip(band.run(&white)) {
                *v += scale * b;
            }
            let (on, off) = (to_index(s.onset_s), to_index(s.offset_s));
            for (t, v) in x[on..off].iter_mut().enumerate() {
                *v += profile.ictal_gain * amp * (2.0 * PI * 4.0 * t as f64 / fs).sin();
            }
        }
        samples.push(x);
    }
    let channels = (0..n_channels).map(|i| format!("ch{:02}", i + 1)).collect();
    let rec = Recording::new("synthetic", channels, profile.sample_rate, 0.0, samples)?;
    Ok((rec, ann))
}
