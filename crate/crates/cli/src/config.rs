//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use szgan_core::classifier::ClassifierConfig;
use szgan_core::eval::LabelPolicy;
use szgan_core::gan::{DiscriminatorConfig, GanScope, GanTrainConfig, GeneratorConfig};
use szgan_core::preprocess::StftConfig;
use szgan_core::signal_io::SyntheticProfile;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Trunk and head trained jointly on labels.
    CnnSupervised,
    /// One GAN over all patients.
    GanCnn,
    /// One GAN per patient.
    GanPsCnn,
    /// One GAN per patient on oversampled windows.
    GanPsOsplCnn,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::CnnSupervised,
        Scenario::GanCnn,
        Scenario::GanPsCnn,
        Scenario::GanPsOsplCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CnnSupervised => "cnn_supervised",
            Scenario::GanCnn => "gan_cnn",
            Scenario::GanPsCnn => "gan_ps_cnn",
            Scenario::GanPsOsplCnn => "gan_ps_ospl_cnn",
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            Scenario::CnnSupervised => "CNN",
            Scenario::GanCnn => "GAN-CNN",
            Scenario::GanPsCnn => "GAN-PS-CNN",
            Scenario::GanPsOsplCnn => "GAN-PS-OSPL-CNN",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown scenario {s}")))
    }

    pub fn gan_scope(self) -> Option<GanScope> {
        match self {
            Scenario::CnnSupervised => None,
            Scenario::GanCnn => Some(GanScope::Global),
            Scenario::GanPsCnn | Scenario::GanPsOsplCnn => Some(GanScope::PerPatient),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientConfig {
    pub id: String,
    /// Channels to keep, in model order.
    pub channels: Vec<String>,
    #[serde(default = "default_line_freq")]
    pub line_freq: u32,
    /// Recording files relative to `<dataset_root>/<id>/`. Empty means every
    /// `.szr` and `.csv` file in that directory, sorted by name.
    #[serde(default)]
    pub recordings: Vec<String>,
}

fn default_line_freq() -> u32 {
    60
}

/// Layout of the generated dataset: per patient, one seizure-free recording
/// followed after a gap by one recording that contains the seizures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub profile: SyntheticProfile,
    pub n_channels: usize,
    pub interictal_h: f64,
    pub seizure_recording_h: f64,
    /// Time between the end of the first recording and the start of the second.
    pub recording_gap_h: f64,
    pub seizure_onsets_min: Vec<f64>,
    pub seizure_duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            profile: SyntheticProfile::default(),
            n_channels: 2,
            interictal_h: 3.0,
            seizure_recording_h: 3.0,
            recording_gap_h: 4.0,
            seizure_onsets_min: vec![45.0, 90.0, 135.0],
            seizure_duration_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub patients: Vec<PatientConfig>,
    pub stft: StftConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// `scope` is set from the scenario.
    pub gan: GanTrainConfig,
    pub classifier: ClassifierConfig,
    pub policy: LabelPolicy,
    pub scenario: Scenario,
    /// Stride between training windows before balancing.
    pub base_stride_s: f64,
    /// Desired preictal:interictal count after balancing.
    pub balance_ratio: f64,
    /// GAN training-set multiplier of the oversampling scenario.
    pub oversample_factor: usize,
    pub repeats: usize,
    pub seed: u64,
    pub alarm_thresholds: Vec<f64>,
    pub synth: SynthConfig,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            patients: Vec::new(),
            stft: StftConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            gan: GanTrainConfig::default(),
            classifier: ClassifierConfig::default(),
            policy: LabelPolicy::default(),
            scenario: Scenario::GanCnn,
            base_stride_s: 28.0,
            balance_ratio: 1.0,
            oversample_factor: 10,
            repeats: 2,
            seed: 0,
            alarm_thresholds: vec![0.3, 0.5, 0.7],
            synth: SynthConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.base_dir.join(&self.dataset_root)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: szgan_core::Error| CliError::Config(e.to_string());
        if self.patients.is_empty() {
            return Err(CliError::Config("no patients configured".into()));
        }
        let mut ids: Vec<&str> = self.patients.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("patient ids must be unique".into()));
        }
        for p in &self.patients {
            if p.channels.is_empty() {
                return Err(CliError::Config(format!("patient {} selects no channels", p.id)));
            }
            if p.line_freq != 50 && p.line_freq != 60 {
                return Err(CliError::Config(format!(
                    "patient {}: line frequency {} Hz unsupported",
                    p.id, p.line_freq
                )));
            }
        }
        self.stft.validate().map_err(wrap)?;
        self.gan.validate().map_err(wrap)?;
        self.classifier.validate().map_err(wrap)?;
        self.policy.validate().map_err(wrap)?;
        if self.repeats == 0 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        if self.scenario == Scenario::GanPsOsplCnn && self.oversample_factor < 2 {
            return Err(CliError::Config("gan_ps_ospl_cnn needs oversample_factor >= 2".into()));
        }
        if self.oversample_factor == 0 {
            return Err(CliError::Config("oversample_factor must be at least 1".into()));
        }
        if !(self.base_stride_s > 0.0) || !(self.balance_ratio > 0.0) {
            return Err(CliError::Config("base stride and balance ratio must be positive".into()));
        }
        if self.alarm_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("alarm thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn scenario_dir(&self, scenario: Scenario) -> PathBuf {
        self.out_dir().join(scenario.name())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.out_dir().join("cache")
    }

    pub fn patient(&self, id: &str) -> Option<&PatientConfig> {
        self.patients.iter().find(|p| p.id == id)
    }
}
