//! Self-supervised forecasting pretraining: per subject and modality, a conv
//! stack learns to predict the next `P` samples of each window. Its pooled
//! output becomes that modality's representation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Modality, PreparedSubject, SegmentationSpec, WindowDataset};
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, mse_loss, save_checkpoint, Activation, LayerSpec, ModelState, NetworkSpec,
    OptimizerConfig, Tensor2D,
};
use crate::seed::{derive_seed, tag};

/// Shape of the encoder and its forecasting head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    /// Hidden dense widths between the pooled vector and the forecast output.
    pub forecast_hidden: Vec<usize>,
}

impl EncoderArch {
    /// Four convs (40/30/18/30 channels, kernels 40/30/18/30), dense 70 → 30.
    pub fn reference() -> Self {
        Self {
            conv_channels: vec![40, 30, 18, 30],
            conv_kernels: vec![40, 30, 18, 30],
            forecast_hidden: vec![70, 30],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.conv_kernels.len() {
            return Err(Error::validation(
                "encoder needs matching, non-empty conv channel and kernel lists",
            ));
        }
        if self.conv_channels.iter().chain(&self.conv_kernels).chain(&self.forecast_hidden).any(|&v| v == 0) {
            return Err(Error::validation("encoder widths and kernels must be positive"));
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> usize {
        self.conv_channels.len()
    }

    /// Length of the pooled representation.
    pub fn rep_dim(&self) -> usize {
        *self.conv_channels.last().unwrap()
    }

    /// Conv stack plus pooling, the part kept after pretraining.
    pub fn encoder_layers(&self, in_channels: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(self.conv_layers() + 1);
        let mut cin = in_channels;
        for (&c, &k) in self.conv_channels.iter().zip(&self.conv_kernels) {
            layers.push(LayerSpec::conv(cin, c, k));
            cin = c;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers
    }
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self::reference()
    }
}

/// Forecasting network for one modality: conv stack, pooling, dense layers,
/// and a linear output of `outputs` values (`P × channels`).
pub fn build_pretext_network(in_channels: usize, outputs: usize, arch: &EncoderArch) -> Result<NetworkSpec> {
    arch.validate()?;
    if in_channels == 0 || outputs == 0 {
        return Err(Error::validation("pretext network needs at least one input channel and output"));
    }
    let mut layers = arch.encoder_layers(in_channels);
    let mut width = arch.rep_dim();
    for &h in &arch.forecast_hidden {
        layers.push(LayerSpec::dense(width, h, Activation::LeakyRelu));
        width = h;
    }
    layers.push(LayerSpec::dense(width, outputs, Activation::Linear));
    let spec = NetworkSpec::new(layers);
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretextConfig {
    pub segmentation: SegmentationSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub arch: EncoderArch,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationSpec::REFERENCE,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            early_stop_patience: 5,
            validation_fraction: 0.1,
            arch: EncoderArch::reference(),
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.optimizer.validate()?;
        self.arch.validate()?;
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::validation(format!(
                "validation_fraction {} outside [0, 0.5]",
                self.validation_fraction
            )));
        }
        if self.early_stop_patience == 0 || self.batch_size == 0 {
            return Err(Error::validation("patience and batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub subject_id: String,
    pub modality: Modality,
    pub in_channels: usize,
    pub horizon: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Forecast MSE of the exported parameters on the selection set.
    pub final_loss: f64,
    /// MSE of predicting the per-output training mean on the same set.
    pub mean_predictor_loss: f64,
    pub train_windows: usize,
    pub validation_windows: usize,
    /// Standardization of the pooled output, fitted on the training windows.
    #[serde(default)]
    pub scaling: Option<FeatureScaling>,
}

/// Per-dimension affine map `(x − mean) / std` applied to a frozen
/// representation so the head sees comparably scaled inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureScaling {
    /// Dimensions whose spread is below this are only centred, not blown up.
    pub const MIN_STD: f32 = 1e-6;

    pub fn fit(reps: &[Vec<f32>]) -> Result<Self> {
        let dim = reps.first().map(Vec::len).ok_or_else(|| Error::validation("no representations to fit scaling on"))?;
        if reps.iter().any(|r| r.len() != dim) {
            return Err(Error::dim("representations of differing width"));
        }
        let n = reps.len() as f64;
        let mut mean = vec![0f64; dim];
        for r in reps {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0f64; dim];
        for r in reps {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v as f64 - m).powi(2) / n;
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&v| (v.sqrt() as f32).max(Self::MIN_STD)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, rep: &mut [f32]) {
        for ((v, m), s) in rep.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// A frozen conv stack (plus pooling) and how it was obtained.
#[derive(Debug, Clone)]
pub struct EncoderArtifact {
    pub model: ModelState,
    pub meta: EncoderMeta,
}

impl EncoderArtifact {
    /// Wraps a conv+pool model; used for loading and for hand-built encoders.
    pub fn new(model: ModelState, meta: EncoderMeta) -> Result<Self> {
        let layers = model.spec().layers.clone();
        let convs = layers.iter().filter(|l| matches!(l, LayerSpec::Conv1d { .. })).count();
        let well_formed = convs + 1 == layers.len() && layers.last() == Some(&LayerSpec::GlobalAvgPool);
        if !well_formed {
            return Err(Error::validation("an encoder is a conv stack followed by one pooling layer"));
        }
        match layers[0] {
            LayerSpec::Conv1d { in_channels, .. } if in_channels == meta.in_channels => {}
            _ => return Err(Error::validation("encoder input channels disagree with its metadata")),
        }
        if let Some(scaling) = &meta.scaling {
            let width = match layers[layers.len() - 2] {
                LayerSpec::Conv1d { out_channels, .. } => out_channels,
                _ => unreachable!("checked above"),
            };
            if scaling.dim() != width || scaling.std.len() != width || scaling.std.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::validation("encoder scaling does not match its representation width"));
            }
        }
        let mut model = model;
        model.set_frozen_prefix(layers.len())?;
        Ok(Self { model, meta })
    }

    pub fn rep_dim(&self) -> usize {
        match self.model.spec().layers[self.model.spec().layers.len() - 2] {
            LayerSpec::Conv1d { out_channels, .. } => out_channels,
            _ => unreachable!("validated on construction"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.meta.in_channels
    }

    /// Pooled conv response to a `W × C` window, standardized when the
    /// artifact carries a scaling.
    pub fn encode(&self, window: &Tensor2D) -> Result<Vec<f32>> {
        if window.cols() != self.meta.in_channels {
            return Err(Error::dim(format!(
                "{} encoder expects {} channels, got {}",
                self.meta.modality,
                self.meta.in_channels,
                window.cols()
            )));
        }
        let mut rep = self.model.infer(window)?;
        if let Some(scaling) = &self.meta.scaling {
            scaling.apply(&mut rep);
        }
        Ok(rep)
    }

    /// SHA-256 of the parameter bytes.
    pub fn digest(&self) -> [u8; 32] {
        self.model.param_digest(0..self.model.spec().layers.len())
    }

    pub fn file_name(subject_id: &str, modality: Modality) -> String {
        format!("{subject_id}_{}.enc", modality.name().to_lowercase())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(Self::file_name(&self.meta.subject_id, self.meta.modality));
        save_checkpoint(&path, &self.model, &serde_json::to_value(&self.meta)?)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (model, meta) = load_checkpoint(path)?;
        Self::new(model, serde_json::from_value(meta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    /// Best selection loss so far (validation if present, else training).
    pub best_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretextRun {
    pub artifact: EncoderArtifact,
    /// Window indices read during training and validation, in read order.
    pub consumed: Vec<usize>,
    pub log: Vec<EpochLog>,
}

/// Seed for one subject–modality pretraining run.
pub fn pretext_seed(global: u64, subject_id: &str, modality: Modality) -> u64 {
    derive_seed(global, &[1, tag(subject_id), modality.index() as u64])
}

/// Pretrains one modality's encoder on the subject's training windows only.
pub fn pretrain(subject: &PreparedSubject, modality: Modality, config: &PretextConfig, seed: u64) -> Result<PretextRun> {
    let train = subject.dataset(modality).slice(subject.train.clone());
    pretrain_windows(&subject.subject_id, modality, &train, config, seed)
}

/// Pretrains on every window of `windows`; the temporally last
/// `validation_fraction` of them drives early stopping.
pub fn pretrain_windows(
    subject_id: &str,
    modality: Modality,
    windows: &WindowDataset,
    config: &PretextConfig,
    seed: u64,
) -> Result<PretextRun> {
    config.validate()?;
    let n = windows.len();
    if n == 0 {
        return Err(Error::validation(format!(
            "subject {subject_id}: no {modality} training windows to pretrain on"
        )));
    }
    let channels = windows.channels();
    let horizon = windows.spec().horizon;
    let outputs = horizon * channels;
    let spec = build_pretext_network(channels, outputs, &config.arch)?;
    let mut model = ModelState::init(spec, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));

    let n_val = if config.validation_fraction > 0.0 && n >= 2 {
        ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let n_fit = n - n_val;
    let mut consumed = Vec::new();
    let read = |pos: usize, consumed: &mut Vec<usize>| {
        consumed.push(windows.entry(pos).index);
        (windows.window(pos), windows.target(pos))
    };

    // The mean predictor is fitted on the training part only.
    let mut mean = vec![0f64; outputs];
    for pos in 0..n_fit {
        for (m, y) in mean.iter_mut().zip(windows.target(pos)) {
            *m += y as f64 / n_fit as f64;
        }
    }
    let select_range = if n_val > 0 { n_fit..n } else { 0..n_fit };
    let mean_predictor_loss = select_range
        .clone()
        .map(|pos| {
            windows
                .target(pos)
                .iter()
                .zip(&mean)
                .map(|(&y, m)| (y as f64 - m).powi(2))
                .sum::<f64>()
                / outputs as f64
        })
        .sum::<f64>()
        / select_range.len() as f64;

    let encoder_len = config.arch.conv_layers() + 1;
    let mut best = (f64::INFINITY, model.params()[..encoder_len].to_vec(), 0usize);
    let mut log = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n_fit).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            for &pos in batch {
                let (x, y) = read(pos, &mut consumed);
                let pred = model.forward(&x)?;
                let (loss, mut grad) = mse_loss(&pred, &y)?;
                train_loss += loss as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                model.backward(&grad)?;
            }
            model.adam_step(&config.optimizer);
        }
        train_loss /= n_fit as f64;
        let validation_loss = if n_val > 0 {
            let mut total = 0.0;
            for pos in n_fit..n {
                let (x, y) = read(pos, &mut consumed);
                total += mse_loss(&model.infer(&x)?, &y)?.0 as f64;
            }
            Some(total / n_val as f64)
        } else {
            None
        };
        let score = validation_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, model.params()[..encoder_len].to_vec(), epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        log::debug!("{subject_id}/{modality} epoch {epoch}: train {train_loss:.6} val {validation_loss:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
            best_loss: best.0,
        });
        if stale >= config.early_stop_patience {
            break;
        }
    }

    let encoder_spec = NetworkSpec::new(config.arch.encoder_layers(channels));
    let (final_loss, params, best_epoch) = best;
    let encoder = ModelState::with_params(encoder_spec, params, model.seed())?;
    let reps = (0..n_fit)
        .map(|pos| encoder.infer(&read(pos, &mut consumed).0))
        .collect::<Result<Vec<_>>>()?;
    let meta = EncoderMeta {
        subject_id: subject_id.to_string(),
        modality,
        in_channels: channels,
        horizon,
        seed,
        epochs_run: log.len(),
        best_epoch,
        final_loss,
        mean_predictor_loss,
        train_windows: n_fit,
        validation_windows: n_val,
        scaling: Some(FeatureScaling::fit(&reps)?),
    };
    Ok(PretextRun {
        artifact: EncoderArtifact::new(encoder, meta)?,
        consumed,
        log,
    })
}
