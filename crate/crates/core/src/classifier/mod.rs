//! Transfer classifier: frozen trunk features into a two-layer dense head.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::FeatureExtractor;
use crate::preprocess::{standardize, Spectrogram, WindowLabel};
use crate::tensor::{Algorithm, LayerSpec, Mode, Model, Network, Optimizer, OptimizerConfig, Parameters, Tensor};

/// Output index of the preictal class.
pub const PREICTAL: usize = 1;

const FEATURE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub fc_sizes: [usize; 2],
    pub dropout: f64,
    pub monitor_fraction: f64,
    /// Epochs without monitor improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            fc_sizes: [256, 2],
            dropout: 0.5,
            monitor_fraction: 0.25,
            patience: 3,
            batch_size: 32,
            max_epochs: 30,
            optimizer: OptimizerConfig {
                algorithm: Algorithm::Adam,
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fc_sizes != [256, 2] {
            return Err(Error::Config(format!("head sizes are fixed to [256, 2], got {:?}", self.fc_sizes)));
        }
        if !(self.monitor_fraction > 0.0 && self.monitor_fraction < 1.0) {
            return Err(Error::Config(format!("monitor fraction {} outside (0, 1)", self.monitor_fraction)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epochs and patience must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Dropout, dense 256, sigmoid, dropout, dense 2, softmax.
pub fn build_head(feature_len: usize, cfg: &ClassifierConfig) -> Result<Network> {
    Network::new(
        &[feature_len],
        vec![
            LayerSpec::Dropout { rate: cfg.dropout },
            LayerSpec::Dense { out: cfg.fc_sizes[0] },
            LayerSpec::Sigmoid,
            LayerSpec::Dropout { rate: cfg.dropout },
            LayerSpec::Dense { out: cfg.fc_sizes[1] },
            LayerSpec::Softmax,
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    /// `[N, feature_len]`.
    pub features: Tensor,
    /// `true` for preictal.
    pub labels: Vec<bool>,
    pub window_start_s: Vec<f64>,
    pub patient_id: Vec<String>,
}

impl LabeledFeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn binary_label(s: &Spectrogram) -> Result<bool> {
    match s.label {
        WindowLabel::Preictal => Ok(true),
        WindowLabel::Interictal => Ok(false),
        WindowLabel::Unlabeled => Err(Error::Argument(format!(
            "window at {} s of {} has no label",
            s.window_start_s, s.patient_id
        ))),
    }
}

fn stacked_inputs(windows: &[Spectrogram]) -> Result<Tensor> {
    let std: Vec<Tensor> = windows.iter().map(|w| standardize(&w.data)).collect();
    Tensor::stack(&std.iter().collect::<Vec<_>>())
}

/// Runs the frozen trunk over labeled windows in fixed-size batches.
pub fn extract_features(trunk: &FeatureExtractor, windows: &[Spectrogram]) -> Result<LabeledFeatureSet> {
    if windows.is_empty() {
        return Err(Error::Argument("no windows to featurize".into()));
    }
    let f_len = trunk.feature_len();
    let mut data = Vec::with_capacity(windows.len() * f_len);
    for chunk in windows.chunks(FEATURE_BATCH) {
        data.extend_from_slice(trunk.features(&stacked_inputs(chunk)?)?.data());
    }
    Ok(LabeledFeatureSet {
        features: Tensor::new(vec![windows.len(), f_len], data)?,
        labels: windows.iter().map(binary_label).collect::<Result<_>>()?,
        window_start_s: windows.iter().map(|w| w.window_start_s).collect(),
        patient_id: windows.iter().map(|w| w.patient_id.clone()).collect(),
    })
}

/// Splits indices into `(train, monitor)`. Within each class the latest
/// `max(1, floor(fraction * count))` windows by time form the monitor set.
pub fn monitor_split(items: &[(f64, bool)], fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut monitor = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].1 == class).collect();
        if idx.len() < 2 {
            return Err(Error::Argument(format!(
                "{} class has {} windows; the monitor split needs at least 2",
                if class { "preictal" } else { "interictal" },
                idx.len()
            )));
        }
        idx.sort_by(|&a, &b| items[a].0.total_cmp(&items[b].0).then(a.cmp(&b)));
        let m = ((fraction * idx.len() as f64).floor() as usize).max(1);
        let cut = idx.len() - m;
        train.extend_from_slice(&idx[..cut]);
        monitor.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    monitor.sort_unstable();
    Ok((train, monitor))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub train_loss: Vec<f64>,
    pub monitor_loss: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_monitor: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub network: Network,
    pub params: Parameters,
    pub log: ClassifierLog,
}

/// Cross-entropy of softmax rows against labels, and its gradient with respect to the probabilities.
fn cross_entropy(probs: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (i, &y) in labels.iter().enumerate() {
        let k = 2 * i + usize::from(y);
        let p = probs[k].max(1e-12);
        loss -= p.ln();
        grad[k] = -1.0 / (n * p);
    }
    (loss / n, grad)
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("non-empty gather")
}

/// Shared training loop. With `trunk` the trunk is trained jointly and
/// `inputs` are spectrograms; without it `inputs` are features.
fn fit(
    inputs: &Tensor,
    labels: &[bool],
    starts: &[f64],
    mut trunk: Option<&mut Model>,
    head_net: Network,
    cfg: &ClassifierConfig,
) -> Result<(Parameters, Option<Parameters>, ClassifierLog)> {
    cfg.validate()?;
    let items: Vec<(f64, bool)> = starts.iter().copied().zip(labels.iter().copied()).collect();
    let (train_idx, monitor_idx) = monitor_split(&items, cfg.monitor_fraction)?;
    let mut head = Model::new(head_net.clone(), head_net.init_params(cfg.seed))?;
    let mut opt_head = Optimizer::new(cfg.optimizer.clone())?;
    let mut opt_trunk = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1A5_5000);
    let monitor_x = gather(inputs, &monitor_idx);
    let monitor_y: Vec<bool> = monitor_idx.iter().map(|&i| labels[i]).collect();

    let mut log = ClassifierLog { n_train: train_idx.len(), n_monitor: monitor_idx.len(), ..ClassifierLog::default() };
    let mut best = (f64::INFINITY, head.params().clone(), trunk.as_ref().map(|t| t.params().clone()));
    let mut stale = 0;
    let mut order = train_idx.clone();
    let mut step = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = gather(inputs, batch);
            let y: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let feats = match trunk.as_deref_mut() {
                Some(t) => t.forward(&x, Mode::Train, &mut rng)?,
                None => x,
            };
            let probs = head.forward(&feats, Mode::Train, &mut rng)?;
            let (loss, grad) = cross_entropy(probs.data(), &y);
            if !loss.is_finite() {
                return Err(Error::Divergence { step, message: format!("classifier loss {loss}") });
            }
            epoch_loss += loss * batch.len() as f64;
            let upstream = Tensor::new(probs.shape().to_vec(), grad)?;
            match trunk.as_deref_mut() {
                Some(t) => {
                    let dx = head.backward(&upstream)?;
                    t.backward_params(&dx)?;
                    opt_trunk.step(t.params_mut())?;
                }
                None => head.backward_params(&upstream)?,
            }
            opt_head.step(head.params_mut())?;
            step += 1;
        }
        log.train_loss.push(epoch_loss / order.len() as f64);

        let mut monitor_feats = Vec::new();
        for chunk in (0..monitor_idx.len()).collect::<Vec<_>>().chunks(FEATURE_BATCH) {
            let x = gather(&monitor_x, chunk);
            let f = match trunk.as_deref() {
                Some(t) => t.predict(&x)?,
                None => x,
            };
            monitor_feats.extend_from_slice(head.predict(&f)?.data());
        }
        let (monitor_loss, _) = cross_entropy(&monitor_feats, &monitor_y);
        log.monitor_loss.push(monitor_loss);
        if monitor_loss < best.0 {
            best = (monitor_loss, head.params().clone(), trunk.as_ref().map(|t| t.params().clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, best.2, log))
}

/// Trains the head on precomputed trunk features.
pub fn train_head(data: &LabeledFeatureSet, cfg: &ClassifierConfig) -> Result<TrainedHead> {
    let net = build_head(data.features.shape()[1], cfg)?;
    let (params, _, log) = fit(&data.features, &data.labels, &data.window_start_s, None, net.clone(), cfg)?;
    Ok(TrainedHead { network: net, params, log })
}

/// Featurizes labeled windows with the frozen trunk and trains the head.
/// The trunk is only read.
pub fn train_classifier(trunk: &FeatureExtractor, windows: &[Spectrogram], cfg: &ClassifierConfig) -> Result<TrainedHead> {
    train_head(&extract_features(trunk, windows)?, cfg)
}

/// Fully supervised baseline: trunk and head trained together from the
/// trunk's initial parameters. Returns the trained trunk parameters too.
pub fn train_supervised(
    trunk_network: &Network,
    trunk_params: Parameters,
    windows: &[Spectrogram],
    cfg: &ClassifierConfig,
) -> Result<(Parameters, TrainedHead)> {
    if windows.is_empty() {
        return Err(Error::Argument("no training windows".into()));
    }
    let inputs = stacked_inputs(windows)?;
    let labels: Vec<bool> = windows.iter().map(binary_label).collect::<Result<_>>()?;
    let starts: Vec<f64> = windows.iter().map(|w| w.window_start_s).collect();
    let mut trunk = Model::new(trunk_network.clone(), trunk_params)?;
    let f_len = trunk_network.output_shape().iter().product();
    let net = build_head(f_len, cfg)?;
    let (params, trunk_best, log) = fit(&inputs, &labels, &starts, Some(&mut trunk), net.clone(), cfg)?;
    Ok((trunk_best.expect("trunk trained"), TrainedHead { network: net, params, log }))
}

/// Preictal probability of each window (dropout off).
pub fn predict_batch(trunk: &FeatureExtractor, head: &Model, windows: &[Spectrogram]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(FEATURE_BATCH) {
        let probs = head.predict(&trunk.features(&stacked_inputs(chunk)?)?)?;
        out.extend(probs.data().chunks_exact(2).map(|p| p[PREICTAL]));
    }
    Ok(out)
}

pub fn predict(trunk: &FeatureExtractor, head: &Model, window: &Spectrogram) -> Result<f64> {
    Ok(predict_batch(trunk, head, std::slice::from_ref(window))?[0])
}

/// Head probabilities for precomputed features, one `[interictal, preictal]` pair per row.
pub fn predict_features(head: &Model, features: &Tensor) -> Result<Vec<f64>> {
    Ok(head.predict(features)?.data().chunks_exact(2).map(|p| p[PREICTAL]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub window_start_s: f64,
    pub label: WindowLabel,
    pub score: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let mut out = Vec::new();
    writeln!(out, "patient_id,window_start_s,label,score").map_err(io)?;
    for r in rows {
        let label = match r.label {
            WindowLabel::Preictal => "preictal",
            WindowLabel::Interictal => "interictal",
            WindowLabel::Unlabeled => "unlabeled",
        };
        writeln!(out, "{},{},{},{}", r.patient_id, r.window_start_s, label, r.score).map_err(io)?;
    }
    std::fs::write(path, out).map_err(io)
}
