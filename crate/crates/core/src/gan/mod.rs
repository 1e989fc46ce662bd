//! DCGAN used as an unsupervised feature extractor.
//!
//! The generator maps `U(-1, 1)` noise through a dense layer, a reshape and
//! three stride-2 transposed convolutions to a spectrogram-shaped tensor. The
//! discriminator mirrors it with three stride-2 convolutions and a single
//! logit. After training, the discriminator's convolutional trunk is frozen
//! and reused by the classifier.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{standardize, Spectrogram};
use crate::tensor::ops::{sigmoid, softplus};
use crate::tensor::{LayerSpec, Mode, Model, Network, Optimizer, OptimizerConfig, Parameters, Tensor};

/// Layers of the discriminator that make up the exported trunk (three conv
/// blocks and the flatten).
pub const TRUNK_LAYERS: usize = 7;

/// Above this magnitude a loss is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub hidden: usize,
    pub reshape: [usize; 3],
    /// Filters of the inner transposed convolutions; the last layer has one filter per channel.
    pub deconv_filters: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    /// Spatial size the chain must produce.
    pub output_hw: (usize, usize),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            z_dim: 100,
            hidden: 6272,
            reshape: [64, 7, 14],
            deconv_filters: vec![32, 16],
            kernel: (5, 5),
            stride: (2, 2),
            output_hw: (56, 112),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub conv_filters: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub leak: f64,
    pub input_hw: (usize, usize),
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            conv_filters: vec![16, 32, 64],
            kernel: (5, 5),
            stride: (2, 2),
            leak: 0.2,
            input_hw: (56, 112),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanScope {
    Global,
    PerPatient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub d_steps_per_g_step: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub scope: GanScope,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 200,
            d_steps_per_g_step: 1,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            scope: GanScope::Global,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::Config("GAN batch size, steps and d steps must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-step losses and mean discriminator probabilities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub n_real_windows: usize,
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    pub d_real: Vec<f64>,
    pub d_fake: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GanOutcome {
    pub generator: Parameters,
    pub discriminator: Parameters,
    pub log: TrainLog,
}

pub fn build_generator(cfg: &GeneratorConfig, n_channels: usize, seed: u64) -> Result<(Network, Parameters)> {
    if n_channels == 0 {
        return Err(Error::Config("generator needs at least one output channel".into()));
    }
    if cfg.hidden != cfg.reshape.iter().product::<usize>() {
        return Err(Error::Config(format!(
            "hidden size {} does not match reshape {:?}",
            cfg.hidden, cfg.reshape
        )));
    }
    let mut layers = vec![
        LayerSpec::Dense { out: cfg.hidden },
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: cfg.reshape.to_vec() },
    ];
    let filters = cfg.deconv_filters.iter().copied().chain([n_channels]);
    let n_deconv = cfg.deconv_filters.len() + 1;
    for (i, f) in filters.enumerate() {
        layers.push(LayerSpec::Deconv2d { filters: f, kernel: cfg.kernel, stride: cfg.stride });
        layers.push(if i + 1 == n_deconv { LayerSpec::Tanh } else { LayerSpec::Relu });
    }
    let net = Network::new(&[cfg.z_dim], layers).map_err(|e| Error::Config(e.to_string()))?;
    let want = [n_channels, cfg.output_hw.0, cfg.output_hw.1];
    if net.output_shape() != want {
        return Err(Error::Config(format!(
            "generator produces {:?}, expected {want:?}",
            net.output_shape()
        )));
    }
    let params = net.init_params(seed);
    Ok((net, params))
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, n_channels: usize, seed: u64) -> Result<(Network, Parameters)> {
    if n_channels == 0 || cfg.conv_filters.is_empty() {
        return Err(Error::Config("discriminator needs channels and convolution layers".into()));
    }
    let mut layers = Vec::new();
    for &f in &cfg.conv_filters {
        layers.push(LayerSpec::Conv2d { filters: f, kernel: cfg.kernel, stride: cfg.stride });
        layers.push(LayerSpec::LeakyRelu { leak: cfg.leak });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { out: 1 });
    let net = Network::new(&[n_channels, cfg.input_hw.0, cfg.input_hw.1], layers)
        .map_err(|e| Error::Config(e.to_string()))?;
    let params = net.init_params(seed);
    Ok((net, params))
}

/// Mean discriminator loss `softplus(-l_real) + softplus(l_fake)` (that is
/// `-log D(x) - log(1 - D(G(z)))`) and its gradients with respect to each logit.
pub fn discriminator_loss(real_logits: &[f64], fake_logits: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = real_logits.len() as f64;
    let nf = fake_logits.len() as f64;
    let loss = real_logits.iter().map(|&l| softplus(-l)).sum::<f64>() / nr
        + fake_logits.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
    let g_real = real_logits.iter().map(|&l| (sigmoid(l) - 1.0) / nr).collect();
    let g_fake = fake_logits.iter().map(|&l| sigmoid(l) / nf).collect();
    (loss, g_real, g_fake)
}

/// Non-saturating generator loss `-log D(G(z)) = softplus(-l_fake)` and its gradient.
pub fn generator_loss(fake_logits: &[f64]) -> (f64, Vec<f64>) {
    let n = fake_logits.len() as f64;
    let loss = fake_logits.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    let grad = fake_logits.iter().map(|&l| (sigmoid(l) - 1.0) / n).collect();
    (loss, grad)
}

fn check_loss(step: usize, name: &str, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, message: format!("{name} loss {loss}") });
    }
    Ok(())
}

fn uniform_noise(batch: usize, z_dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..batch * z_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![batch, z_dim], data).expect("positive sizes")
}

/// Adversarial training on the standardized window tensors. Labels are never read.
pub fn train_gan(
    real: &[Spectrogram],
    g: (Network, Parameters),
    d: (Network, Parameters),
    cfg: &GanTrainConfig,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(Error::Argument("GAN training needs at least one real window".into()));
    }
    let inputs: Vec<Tensor> = real.iter().map(|s| standardize(&s.data)).collect();
    if inputs[0].shape() != d.0.input_shape() {
        return Err(Error::dim("GAN real window", inputs[0].shape(), d.0.input_shape()));
    }
    let z_dim = g.0.input_shape()[0];
    let mut gen = Model::new(g.0, g.1)?;
    let mut disc = Model::new(d.0, d.1)?;
    let mut opt_g = Optimizer::new(cfg.optimizer.clone())?;
    let mut opt_d = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6741_4e00);
    let b = cfg.batch_size;
    let mut log = TrainLog { n_real_windows: real.len(), ..TrainLog::default() };

    for step in 0..cfg.steps {
        let mut d_loss = 0.0;
        for _ in 0..cfg.d_steps_per_g_step {
            let picks: Vec<&Tensor> = (0..b).map(|_| &inputs[rng.random_range(0..inputs.len())]).collect();
            let fake = gen.predict(&uniform_noise(b, z_dim, &mut rng))?;
            let fakes: Vec<Tensor> = (0..b).map(|i| fake.sample(i)).collect();
            let mut all: Vec<&Tensor> = picks;
            all.extend(fakes.iter());
            let batch = Tensor::stack(&all)?;
            let logits = disc.forward(&batch, Mode::Train, &mut rng)?;
            let (lr, lf) = logits.data().split_at(b);
            let (loss, gr, gf) = discriminator_loss(lr, lf);
            check_loss(step, "discriminator", loss)?;
            let upstream: Vec<f64> = gr.into_iter().chain(gf).collect();
            disc.backward_params(&Tensor::new(vec![2 * b, 1], upstream)?)?;
            opt_d.step(disc.params_mut())?;
            d_loss = loss;
            log.d_real.push(lr.iter().map(|&l| sigmoid(l)).sum::<f64>() / b as f64);
            log.d_fake.push(lf.iter().map(|&l| sigmoid(l)).sum::<f64>() / b as f64);
        }
        log.d_loss.push(d_loss);

        let z = uniform_noise(b, z_dim, &mut rng);
        let fake = gen.forward(&z, Mode::Train, &mut rng)?;
        let logits = disc.forward(&fake, Mode::Train, &mut rng)?;
        let (loss, grad) = generator_loss(logits.data());
        check_loss(step, "generator", loss)?;
        let dx = disc.backward(&Tensor::new(vec![b, 1], grad)?)?;
        disc.params_mut().clear_grads();
        gen.backward_params(&dx)?;
        opt_g.step(gen.params_mut())?;
        log.g_loss.push(loss);
    }
    Ok(GanOutcome {
        generator: gen.into_params(),
        discriminator: disc.into_params(),
        log,
    })
}

/// Trains one GAN over all windows (`Global`, key `"all"`) or one per
/// patient id. Every run starts from the same seeds.
pub fn train_gan_scoped(
    real: &[Spectrogram],
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    n_channels: usize,
    cfg: &GanTrainConfig,
) -> Result<BTreeMap<String, GanOutcome>> {
    let mut groups: BTreeMap<String, Vec<Spectrogram>> = BTreeMap::new();
    for s in real {
        let key = match cfg.scope {
            GanScope::Global => "all".to_string(),
            GanScope::PerPatient => s.patient_id.clone(),
        };
        groups.entry(key).or_default().push(s.clone());
    }
    let mut out = BTreeMap::new();
    for (key, windows) in groups {
        let g = build_generator(gcfg, n_channels, cfg.seed)?;
        let d = build_discriminator(dcfg, n_channels, cfg.seed.wrapping_add(1))?;
        out.insert(key, train_gan(&windows, g, d, cfg)?);
    }
    Ok(out)
}

/// The discriminator's convolutional trunk, frozen. Maps `[B, n, H, W]`
/// standardized inputs to `[B, features]`.
#[derive(Debug)]
pub struct FeatureExtractor {
    model: Model,
}

impl FeatureExtractor {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn network(&self) -> &Network {
        self.model.network()
    }

    pub fn params(&self) -> &Parameters {
        self.model.params()
    }

    pub fn feature_len(&self) -> usize {
        self.model.network().output_shape().iter().product()
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.model.predict(x)
    }

    pub fn into_parts(self) -> (Network, Parameters) {
        let network = self.model.network().clone();
        (network, self.model.into_params())
    }
}

pub fn export_feature_extractor(d_network: &Network, d_params: &Parameters) -> Result<FeatureExtractor> {
    if d_network.len() < TRUNK_LAYERS {
        return Err(Error::Config("discriminator is shorter than its trunk".into()));
    }
    let network = d_network.prefix(TRUNK_LAYERS);
    let names: Vec<String> = (0..TRUNK_LAYERS)
        .filter(|&i| network.layers()[i].is_trainable())
        .map(|i| network.layer_name(i))
        .collect();
    let params = d_params.subset(names.iter().map(String::as_str));
    FeatureExtractor::from_parts(network, params)
}

impl FeatureExtractor {
    /// Wraps an existing trunk (for example one read back from a checkpoint).
    pub fn from_parts(network: Network, params: Parameters) -> Result<Self> {
        let mut model = Model::new(network, params)?;
        model.freeze();
        Ok(Self { model })
    }
}
