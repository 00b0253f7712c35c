//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressnet::data::{generate_synthetic_with, prepare_subject, AccInput, Modality, PreparedSubject, SegmentationSpec, SynthConfig};
use stressnet::eval::SubjectModels;
use stressnet::nn::{Activation, LayerSpec};
use stressnet::pretext::{pretrain, EncoderArch, PretextConfig};
use stressnet::{NetworkSpec, Tensor2D};

pub const TINY_SEGMENTATION: SegmentationSpec = SegmentationSpec {
    window: 64,
    stride: 16,
    horizon: 2,
};
pub const TINY_TEST_COUNT: usize = 40;
pub const TINY_SAMPLES: usize = 3000;

pub fn tiny_arch() -> EncoderArch {
    EncoderArch {
        conv_channels: vec![3, 2],
        conv_kernels: vec![5, 3],
        forecast_hidden: vec![6],
    }
}

pub fn tiny_pretext() -> PretextConfig {
    PretextConfig {
        segmentation: TINY_SEGMENTATION,
        epochs: 3,
        batch_size: 8,
        arch: tiny_arch(),
        ..PretextConfig::default()
    }
}

/// A short synthetic subject (184 windows, the last 40 held out).
pub fn tiny_subject(seed: u64) -> PreparedSubject {
    let config = SynthConfig {
        stress_segments: 4,
        ..SynthConfig::default()
    };
    let mut rec = generate_synthetic_with(seed, TINY_SAMPLES, &config).unwrap();
    rec.subject_id = format!("T{seed}");
    prepare_subject(&rec, TINY_SEGMENTATION, TINY_TEST_COUNT, AccInput::Axes).unwrap()
}

/// `tiny_subject` with its six encoders pretrained.
pub fn tiny_models(seed: u64) -> SubjectModels {
    let subject = tiny_subject(seed);
    let config = tiny_pretext();
    let mut consumed = Vec::new();
    let encoders = Modality::ALL
        .iter()
        .map(|&m| {
            let run = pretrain(&subject, m, &config, seed ^ m.index() as u64).unwrap();
            consumed.extend(run.consumed);
            run.artifact
        })
        .collect();
    consumed.sort_unstable();
    consumed.dedup();
    SubjectModels {
        subject,
        encoders,
        pretext_consumed: consumed,
    }
}

/// Training-window indices of `subject` that carry a label for `question`.
pub fn labeled_indices(subject: &PreparedSubject, question: stressnet::data::QuestionId) -> Vec<usize> {
    let ecg = subject.dataset(Modality::Ecg);
    subject.labeled_train(question).iter().map(|&p| ecg.entry(p).index).collect()
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    if rng.gen_bool(0.5) {
        Activation::LeakyRelu
    } else {
        Activation::Linear
    }
}

/// A random small network mixing every layer kind, with an input and target.
///
/// Networks alternate between pooled and flattened bridges so both appear in
/// any batch of draws; kernel widths include even ones.
pub fn random_network(seed: u64) -> (NetworkSpec, Tensor2D, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time = rng.gen_range(6..24);
    let in_channels = rng.gen_range(1..4);
    let mut layers = Vec::new();
    let mut channels = in_channels;
    for _ in 0..rng.gen_range(1..4) {
        let out = rng.gen_range(1..5);
        layers.push(LayerSpec::Conv1d {
            in_channels: channels,
            out_channels: out,
            kernel_width: rng.gen_range(1..7),
            activation: activation(&mut rng),
        });
        channels = out;
    }
    let mut width = if seed % 2 == 0 {
        layers.push(LayerSpec::GlobalAvgPool);
        channels
    } else {
        layers.push(LayerSpec::Flatten);
        channels * time
    };
    for _ in 0..rng.gen_range(1..3) {
        let out = rng.gen_range(1..6);
        layers.push(LayerSpec::dense(width, out, activation(&mut rng)));
        width = out;
    }
    let input = Tensor2D::from_vec(
        time,
        in_channels,
        (0..time * in_channels).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let target = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (NetworkSpec::new(layers), input, target)
}

/// Whether `spec` contains every layer kind and both activations.
pub fn kinds(spec: &NetworkSpec) -> [bool; 6] {
    let mut seen = [false; 6];
    for l in &spec.layers {
        match l {
            LayerSpec::Conv1d { .. } => seen[0] = true,
            LayerSpec::Dense { .. } => seen[1] = true,
            LayerSpec::GlobalAvgPool => seen[2] = true,
            LayerSpec::Flatten => seen[3] = true,
        }
        match l.activation() {
            Some(Activation::LeakyRelu) => seen[4] = true,
            Some(Activation::Linear) => seen[5] = true,
            None => {}
        }
    }
    seen
}
