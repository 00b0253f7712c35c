//! Downstream stress regression: late fusion of the six frozen modality
//! representations into a small dense head, plus the identically shaped
//! baseline trained from scratch.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Modality, PreparedSubject, QuestionId};
use crate::error::{Error, Result};
use crate::nn::{
    mse_loss, save_checkpoint, Activation, LayerParams, LayerSpec, ModelState, NetworkSpec,
    OptimizerConfig, Tensor2D,
};
use crate::pretext::{EncoderArch, EncoderArtifact, FeatureScaling};
use crate::seed::derive_seed;

const HEAD_STREAM: u64 = 10;
const ORDER_STREAM: u64 = 11;
const ENCODER_STREAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Frozen pretrained encoders, trained head.
    Ssl,
    /// Same architecture, everything randomly initialized and trained.
    Supervised,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Ssl, Method::Supervised];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssl => "ssl",
            Method::Supervised => "supervised",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ssl" => Ok(Method::Ssl),
            "supervised" | "sup" => Ok(Method::Supervised),
            other => Err(Error::validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Dense head: `inputs → hidden… → 1`, leaky hidden layers, linear output.
pub fn build_head(inputs: usize, hidden: &[usize]) -> NetworkSpec {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut width = inputs;
    for &h in hidden {
        layers.push(LayerSpec::dense(width, h, Activation::LeakyRelu));
        width = h;
    }
    layers.push(LayerSpec::dense(width, 1, Activation::Linear));
    NetworkSpec::new(layers)
}

/// The reference head: 180 → 50 → 30 → 30 → 1.
pub fn reference_head() -> NetworkSpec {
    build_head(6 * 30, &[50, 30, 30])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Epochs without a new best training loss before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub head_hidden: Vec<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 20,
            batch_size: 1,
            optimizer: OptimizerConfig::default(),
            head_hidden: vec![50, 30, 30],
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::validation("fine-tune epochs, patience and batch size must be at least 1"));
        }
        if self.head_hidden.iter().any(|&h| h == 0) {
            return Err(Error::validation("head widths must be positive"));
        }
        Ok(())
    }
}

/// Access to the six per-modality windows of a window index.
pub trait WindowSource {
    fn bundle(&self, index: usize) -> Result<Vec<Tensor2D>>;
}

impl WindowSource for PreparedSubject {
    fn bundle(&self, index: usize) -> Result<Vec<Tensor2D>> {
        let pos = self.dataset(Modality::Ecg).position_of(index).ok_or_else(|| {
            Error::validation(format!("subject {} has no window {index}", self.subject_id))
        })?;
        Ok(PreparedSubject::bundle(self, pos))
    }
}

/// Wraps a source and records every index read through it.
pub struct AuditedSource<'a> {
    inner: &'a dyn WindowSource,
    touched: RefCell<Vec<usize>>,
}

impl<'a> AuditedSource<'a> {
    pub fn new(inner: &'a dyn WindowSource) -> Self {
        Self {
            inner,
            touched: RefCell::new(Vec::new()),
        }
    }

    /// Distinct indices read so far, ascending.
    pub fn touched(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.touched.borrow().iter().copied().collect();
        set.into_iter().collect()
    }
}

impl WindowSource for AuditedSource<'_> {
    fn bundle(&self, index: usize) -> Result<Vec<Tensor2D>> {
        self.touched.borrow_mut().push(index);
        self.inner.bundle(index)
    }
}

/// The `k` training windows a head may learn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSubset {
    pub question: QuestionId,
    pub indices: Vec<usize>,
    pub labels: Vec<f32>,
}

impl LabeledSubset {
    /// Looks the labels up, rejecting duplicates, test windows and unlabeled windows.
    pub fn from_subject(subject: &PreparedSubject, question: QuestionId, indices: &[usize]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut labels = Vec::with_capacity(indices.len());
        let ecg = subject.dataset(Modality::Ecg);
        for &index in indices {
            if !seen.insert(index) {
                return Err(Error::validation(format!("window {index} listed twice")));
            }
            let pos = ecg
                .position_of(index)
                .filter(|p| subject.train.contains(p))
                .ok_or_else(|| Error::validation(format!("window {index} is not a training window")))?;
            let label = subject.label(pos, question).ok_or_else(|| {
                Error::validation(format!("window {index} has no {question} label"))
            })?;
            labels.push(label);
        }
        Ok(Self {
            question,
            indices: indices.to_vec(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Concatenates the encoders' representations of a bundle, in the given order.
pub fn fuse(encoders: &[EncoderArtifact], bundle: &[Tensor2D]) -> Result<Vec<f32>> {
    if bundle.len() != encoders.len() {
        return Err(Error::validation(format!(
            "{} modality windows for {} encoders",
            bundle.len(),
            encoders.len()
        )));
    }
    let mut fused = Vec::with_capacity(encoders.iter().map(EncoderArtifact::rep_dim).sum());
    for (enc, window) in encoders.iter().zip(bundle) {
        fused.extend(enc.encode(window)?);
    }
    Ok(fused)
}

fn check_encoder_order(encoders: &[EncoderArtifact]) -> Result<()> {
    let order: Vec<Modality> = encoders.iter().map(|e| e.meta.modality).collect();
    if order != Modality::ALL {
        return Err(Error::validation(format!(
            "expected encoders for {:?}, got {order:?}",
            Modality::ALL
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressModelMeta {
    pub subject_id: String,
    pub question: QuestionId,
    pub k: usize,
    pub seed: u64,
    pub method: Method,
}

/// Six conv+pool encoders feeding one head. Immutable once trained.
#[derive(Debug, Clone)]
pub struct StressModel {
    pub meta: StressModelMeta,
    pub encoders: Vec<ModelState>,
    /// Fixed standardization of each encoder's output (pretrained encoders only).
    pub scalings: Vec<Option<FeatureScaling>>,
    pub head: ModelState,
}

impl StressModel {
    /// Layer lists of every component; equal across methods by construction.
    pub fn architecture(&self) -> Vec<Vec<LayerSpec>> {
        self.encoders
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|m| m.spec().layers.clone())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.encoders.iter().map(ModelState::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn encoder_digests(&self) -> Vec<[u8; 32]> {
        self.encoders
            .iter()
            .map(|e| e.param_digest(0..e.spec().layers.len()))
            .collect()
    }

    pub fn represent(&self, bundle: &[Tensor2D]) -> Result<Vec<f32>> {
        if bundle.len() != self.encoders.len() {
            return Err(Error::validation(format!(
                "{} modality windows for {} encoders",
                bundle.len(),
                self.encoders.len()
            )));
        }
        let mut fused = Vec::new();
        for ((enc, scaling), window) in self.encoders.iter().zip(&self.scalings).zip(bundle) {
            let mut rep = enc.infer(window)?;
            if let Some(scaling) = scaling {
                scaling.apply(&mut rep);
            }
            fused.extend(rep);
        }
        Ok(fused)
    }

    /// Raw, unclamped head output for one bundle.
    pub fn predict(&self, bundle: &[Tensor2D]) -> Result<f32> {
        self.predict_fused(&self.represent(bundle)?)
    }

    pub fn predict_fused(&self, fused: &[f32]) -> Result<f32> {
        Ok(self.head.infer(&Tensor2D::row_vector(fused.to_vec()))?[0])
    }

    /// Writes the head (with metadata) and the six encoders as checkpoints.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.meta;
        let stem = format!("{}_{}_{}_k{}_s{}", m.subject_id, m.question, m.method, m.k, m.seed);
        let meta = serde_json::to_value(m)?;
        let mut paths = vec![dir.join(format!("{stem}.head"))];
        save_checkpoint(&paths[0], &self.head, &meta)?;
        for ((enc, scaling), modality) in self.encoders.iter().zip(&self.scalings).zip(Modality::ALL) {
            let path = dir.join(format!("{stem}_{}.enc", modality.name().to_lowercase()));
            let meta = serde_json::json!({ "model": m, "scaling": scaling });
            save_checkpoint(&path, enc, &meta)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: StressModel,
    /// Window indices read during training, ascending.
    pub trained_on: Vec<usize>,
    /// Mean training loss per epoch.
    pub loss_log: Vec<f64>,
    pub encoder_digests_before: Vec<[u8; 32]>,
    pub encoder_digests_after: Vec<[u8; 32]>,
}

impl FinetuneOutcome {
    pub fn encoders_unchanged(&self) -> bool {
        self.encoder_digests_before == self.encoder_digests_after
    }
}

/// One gradient-descent participant: either a bare head on cached fused
/// vectors or the full end-to-end network.
trait Learner {
    /// Forward/backward on sample `i`; returns its loss.
    fn accumulate(&mut self, i: usize, grad_scale: f32) -> Result<f64>;
    fn step(&mut self, optimizer: &OptimizerConfig);
    fn snapshot(&self) -> Vec<Vec<LayerParams>>;
    fn restore(&mut self, snapshot: Vec<Vec<LayerParams>>);
}

fn fit(learner: &mut dyn Learner, n: usize, config: &FinetuneConfig, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ORDER_STREAM]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, learner.snapshot());
    let mut stale = 0;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                total += learner.accumulate(i, scale)?;
            }
            learner.step(&config.optimizer);
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::State(format!("training loss became {loss}")));
        }
        log.push(loss);
        if loss < best.0 {
            best = (loss, learner.snapshot());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    learner.restore(best.1);
    Ok(log)
}

struct HeadLearner {
    head: ModelState,
    inputs: Vec<Tensor2D>,
    targets: Vec<f32>,
}

impl Learner for HeadLearner {
    fn accumulate(&mut self, i: usize, grad_scale: f32) -> Result<f64> {
        let pred = self.head.forward(&self.inputs[i])?;
        let (loss, grad) = mse_loss(&pred, &[self.targets[i]])?;
        self.head.backward(&[grad[0] * grad_scale])?;
        Ok(loss as f64)
    }

    fn step(&mut self, optimizer: &OptimizerConfig) {
        self.head.adam_step(optimizer);
    }

    fn snapshot(&self) -> Vec<Vec<LayerParams>> {
        vec![self.head.params().to_vec()]
    }

    fn restore(&mut self, mut snapshot: Vec<Vec<LayerParams>>) {
        self.head.params_mut().clone_from_slice(&snapshot.remove(0));
    }
}

struct EndToEndLearner {
    encoders: Vec<ModelState>,
    head: ModelState,
    bundles: Vec<Vec<Tensor2D>>,
    targets: Vec<f32>,
}

impl Learner for EndToEndLearner {
    fn accumulate(&mut self, i: usize, grad_scale: f32) -> Result<f64> {
        let mut fused = Vec::new();
        let mut dims = Vec::with_capacity(self.encoders.len());
        for (enc, window) in self.encoders.iter_mut().zip(&self.bundles[i]) {
            let rep = enc.forward(window)?;
            dims.push(rep.len());
            fused.extend(rep);
        }
        let pred = self.head.forward(&Tensor2D::row_vector(fused))?;
        let (loss, grad) = mse_loss(&pred, &[self.targets[i]])?;
        let d_fused = self.head.backward_to_input(&[grad[0] * grad_scale])?;
        let mut offset = 0;
        for (enc, dim) in self.encoders.iter_mut().zip(dims) {
            enc.backward(&d_fused.data()[offset..offset + dim])?;
            offset += dim;
        }
        Ok(loss as f64)
    }

    fn step(&mut self, optimizer: &OptimizerConfig) {
        for enc in &mut self.encoders {
            enc.adam_step(optimizer);
        }
        self.head.adam_step(optimizer);
    }

    fn snapshot(&self) -> Vec<Vec<LayerParams>> {
        self.encoders
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|m| m.params().to_vec())
            .collect()
    }

    fn restore(&mut self, snapshot: Vec<Vec<LayerParams>>) {
        for (m, p) in self.encoders.iter_mut().chain(std::iter::once(&mut self.head)).zip(snapshot) {
            m.params_mut().clone_from_slice(&p);
        }
    }
}

/// Head initialization shared by both methods under the same seed.
fn init_head(rep_dim: usize, config: &FinetuneConfig, seed: u64) -> Result<ModelState> {
    ModelState::init(build_head(rep_dim, &config.head_hidden), derive_seed(seed, &[HEAD_STREAM]))
}

fn load_samples(source: &dyn WindowSource, labeled: &LabeledSubset) -> Result<Vec<Vec<Tensor2D>>> {
    if labeled.is_empty() {
        return Err(Error::validation("cannot fine-tune on an empty label subset"));
    }
    if labeled.indices.len() != labeled.labels.len() {
        return Err(Error::dim("label subset has mismatched indices and labels"));
    }
    labeled.indices.iter().map(|&i| source.bundle(i)).collect()
}

/// Trains a head on the frozen encoders' fused representations of the
/// labeled windows. The encoders are only read.
pub fn finetune(
    subject_id: &str,
    encoders: &[EncoderArtifact],
    source: &dyn WindowSource,
    labeled: &LabeledSubset,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    check_encoder_order(encoders)?;
    let before: Vec<[u8; 32]> = encoders.iter().map(EncoderArtifact::digest).collect();
    let audit = AuditedSource::new(source);
    let bundles = load_samples(&audit, labeled)?;
    let inputs = bundles
        .iter()
        .map(|b| fuse(encoders, b).map(Tensor2D::row_vector))
        .collect::<Result<Vec<_>>>()?;
    let rep_dim = inputs[0].cols();
    let head = init_head(rep_dim, config, seed)?;
    let mut learner = HeadLearner {
        head,
        inputs,
        targets: labeled.labels.clone(),
    };
    let loss_log = fit(&mut learner, labeled.len(), config, seed)?;
    let model = StressModel {
        meta: StressModelMeta {
            subject_id: subject_id.to_string(),
            question: labeled.question,
            k: labeled.len(),
            seed,
            method: Method::Ssl,
        },
        encoders: encoders.iter().map(|e| e.model.clone()).collect(),
        scalings: encoders.iter().map(|e| e.meta.scaling.clone()).collect(),
        head: learner.head,
    };
    let after = model.encoder_digests();
    Ok(FinetuneOutcome {
        model,
        trained_on: audit.touched(),
        loss_log,
        encoder_digests_before: before,
        encoder_digests_after: after,
    })
}

/// End-to-end training of randomly initialized encoders and head on the
/// labeled windows only; same head initialization and sample order as
/// [`finetune`] under the same seed.
pub fn train_supervised_baseline(
    subject_id: &str,
    arch: &EncoderArch,
    source: &dyn WindowSource,
    labeled: &LabeledSubset,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let audit = AuditedSource::new(source);
    let bundles = load_samples(&audit, labeled)?;
    if bundles[0].len() != Modality::ALL.len() {
        return Err(Error::validation(format!(
            "expected {} modality windows, got {}",
            Modality::ALL.len(),
            bundles[0].len()
        )));
    }
    let encoders = Modality::ALL
        .iter()
        .zip(&bundles[0])
        .map(|(m, w)| {
            ModelState::init(
                NetworkSpec::new(arch.encoder_layers(w.cols())),
                derive_seed(seed, &[ENCODER_STREAM, m.index() as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let before: Vec<[u8; 32]> = encoders.iter().map(|e| e.param_digest(0..e.spec().layers.len())).collect();
    let rep_dim = arch.rep_dim() * encoders.len();
    let head = init_head(rep_dim, config, seed)?;
    let mut learner = EndToEndLearner {
        encoders,
        head,
        bundles,
        targets: labeled.labels.clone(),
    };
    let loss_log = fit(&mut learner, labeled.len(), config, seed)?;
    let model = StressModel {
        meta: StressModelMeta {
            subject_id: subject_id.to_string(),
            question: labeled.question,
            k: labeled.len(),
            seed,
            method: Method::Supervised,
        },
        scalings: vec![None; learner.encoders.len()],
        encoders: learner.encoders,
        head: learner.head,
    };
    let after = model.encoder_digests();
    Ok(FinetuneOutcome {
        model,
        trained_on: audit.touched(),
        loss_log,
        encoder_digests_before: before,
        encoder_digests_after: after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_head_shape() {
        let spec = reference_head();
        let shapes = spec.shapes((1, 180)).unwrap();
        assert_eq!(shapes, vec![(1, 50), (1, 30), (1, 30), (1, 1)]);
        assert_eq!(spec.frozen_prefix, 0);
        assert_eq!(spec.trainable_param_count(), spec.param_count());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("both".parse::<Method>().is_err());
    }
}
