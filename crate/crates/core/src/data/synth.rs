//! Synthetic multimodal recordings with a planted stress level.
//!
//! A piecewise-constant latent level `s ∈ {1,2,3,4}` modulates every modality:
//! amplitude and frequency rise with `s` (monotonically, per modality). EDA and
//! TEMP can additionally shift their baseline with `s`; that coupling is off
//! by default because it makes the level readable from a window mean alone. Questionnaire spans expose `s` on the
//! negative items and `5 − s` on the positive ones.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::modality::{Modality, QuestionId};
use super::recording::{LabelEvent, SubjectRecording};
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: f32,
    /// Number of constant-stress segments the recording is cut into.
    pub stress_segments: usize,
    /// Additive white noise, relative to each modality's base amplitude.
    pub noise: f32,
    /// Multiplier on every modality's per-level amplitude gain.
    pub amplitude_coupling: f32,
    /// Multiplier on every modality's per-level frequency gain.
    pub frequency_coupling: f32,
    /// Multiplier on the per-level baseline shifts (EDA, TEMP); 0 disables them.
    pub baseline_coupling: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 700.0,
            stress_segments: 8,
            noise: 0.3,
            amplitude_coupling: 1.0,
            frequency_coupling: 1.0,
            baseline_coupling: 0.0,
        }
    }
}

/// Generation parameters of one modality channel.
#[derive(Debug, Clone, Copy)]
struct Profile {
    base_hz: f64,
    /// Fractional frequency increase per stress level.
    hz_gain: f64,
    amp: f64,
    /// Fractional amplitude increase per stress level.
    amp_gain: f64,
    offset: f64,
    /// Absolute baseline shift per stress level.
    offset_gain: f64,
    harmonics: &'static [f64],
}

fn profile(m: Modality) -> Profile {
    match m {
        Modality::Ecg => Profile {
            base_hz: 1.2,
            hz_gain: 0.12,
            amp: 1.0,
            amp_gain: 0.25,
            offset: 0.0,
            offset_gain: 0.0,
            harmonics: &[1.0, 0.6, 0.4, 0.25],
        },
        Modality::Eda => Profile {
            base_hz: 0.15,
            hz_gain: 0.2,
            amp: 0.4,
            amp_gain: 0.3,
            offset: 3.0,
            offset_gain: 0.6,
            harmonics: &[1.0, 0.3],
        },
        Modality::Emg => Profile {
            base_hz: 45.0,
            hz_gain: 0.05,
            amp: 0.3,
            amp_gain: 0.5,
            offset: 0.0,
            offset_gain: 0.0,
            harmonics: &[1.0, 0.5, 0.3],
        },
        Modality::Resp => Profile {
            base_hz: 0.3,
            hz_gain: 0.15,
            amp: 1.0,
            amp_gain: 0.2,
            offset: 0.0,
            offset_gain: 0.0,
            harmonics: &[1.0, 0.2],
        },
        Modality::Temp => Profile {
            base_hz: 0.05,
            hz_gain: 0.1,
            amp: 0.05,
            amp_gain: 0.2,
            offset: 34.0,
            offset_gain: -0.15,
            harmonics: &[1.0],
        },
        Modality::Acc => Profile {
            base_hz: 1.6,
            hz_gain: 0.1,
            amp: 0.2,
            amp_gain: 0.3,
            offset: 0.0,
            offset_gain: 0.0,
            harmonics: &[1.0, 0.4],
        },
    }
}

/// Gravity components of the three accelerometer axes.
const ACC_GRAVITY: [f64; 3] = [0.9, 0.1, -0.3];

/// Constant-level spans covering `0..duration`; neighbours always differ.
pub fn stress_plan(seed: u64, duration: usize, segments: usize) -> Result<Vec<(Range<usize>, u8)>> {
    if segments == 0 || duration < segments {
        return Err(Error::validation(format!(
            "cannot cut {duration} samples into {segments} stress segments"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57e5);
    let mut levels: Vec<u8> = Vec::with_capacity(segments);
    while levels.len() < segments {
        let mut block = [1u8, 2, 3, 4];
        block.shuffle(&mut rng);
        if levels.last() == Some(&block[0]) {
            block.swap(0, 3);
        }
        levels.extend_from_slice(&block);
    }
    levels.truncate(segments);

    let nominal = duration as f64 / segments as f64;
    let mut cuts = vec![0usize];
    for i in 1..segments {
        let jitter = rng.gen_range(-0.25..0.25) * nominal;
        cuts.push(((i as f64 * nominal) + jitter).round() as usize);
    }
    cuts.push(duration);
    Ok(cuts
        .windows(2)
        .zip(levels)
        .map(|(c, l)| (c[0]..c[1], l))
        .collect())
}

/// Recording fully determined by `subject_seed`, with default settings.
pub fn generate_synthetic(subject_seed: u64, duration_samples: usize) -> Result<SubjectRecording> {
    generate_synthetic_with(subject_seed, duration_samples, &SynthConfig::default())
}

pub fn generate_synthetic_with(
    subject_seed: u64,
    duration_samples: usize,
    config: &SynthConfig,
) -> Result<SubjectRecording> {
    let plan = stress_plan(subject_seed, duration_samples, config.stress_segments)?;
    let mut level_at = vec![0u8; duration_samples];
    for (span, level) in &plan {
        level_at[span.clone()].fill(*level);
    }
    let sr = config.sample_rate as f64;
    let signals = Modality::ALL
        .iter()
        .map(|&m| {
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ m.index() as u64);
            let mut p = profile(m);
            // Keep the fastest component (with full modulation) below Nyquist.
            let ceiling = 0.3 * sr / p.harmonics.len() as f64;
            p.base_hz = p.base_hz.min(ceiling);
            p.amp_gain *= config.amplitude_coupling as f64;
            p.hz_gain *= config.frequency_coupling as f64;
            p.offset_gain *= config.baseline_coupling as f64;
            let hz_scale = rng.gen_range(0.9..1.1);
            let amp_scale = rng.gen_range(0.8..1.2);
            let drift_hz = rng.gen_range(0.02..0.06);
            let drift_phase = rng.gen_range(0.0..TAU);
            let noise = Normal::new(0.0, config.noise as f64 * p.amp * amp_scale).unwrap();
            let channels = m.channels();
            let mut data = Vec::with_capacity(duration_samples * channels);
            let mut phases: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.0..TAU)).collect();
            let harmonic_phase: Vec<f64> = p.harmonics.iter().map(|_| rng.gen_range(0.0..TAU)).collect();
            for (t, &level) in level_at.iter().enumerate() {
                let s = (level - 1) as f64;
                let drift = 1.0 + 0.03 * (TAU * drift_hz * t as f64 / sr + drift_phase).sin();
                let hz = p.base_hz * hz_scale * (1.0 + p.hz_gain * s) * drift;
                let amp = p.amp * amp_scale * (1.0 + p.amp_gain * s);
                for ch in 0..channels {
                    let wave: f64 = p
                        .harmonics
                        .iter()
                        .zip(&harmonic_phase)
                        .enumerate()
                        .map(|(h, (a, ph))| a * ((h + 1) as f64 * phases[ch] + ph).sin())
                        .sum();
                    let base = if m == Modality::Acc { ACC_GRAVITY[ch] } else { 0.0 };
                    let v = base + p.offset + p.offset_gain * s + amp * wave + noise.sample(&mut rng);
                    data.push(v as f32);
                    phases[ch] = (phases[ch] + TAU * hz / sr) % TAU;
                }
            }
            (m, Tensor2D::from_vec(duration_samples, channels, data).unwrap())
        })
        .collect();

    let mut label_events = Vec::with_capacity(plan.len() * QuestionId::ALL.len());
    for (span, level) in &plan {
        for q in QuestionId::ALL {
            label_events.push(LabelEvent {
                start_sample: span.start,
                end_sample: span.end,
                question: q,
                likert: if q.is_positive() { 5 - level } else { *level },
            });
        }
    }
    Ok(SubjectRecording {
        subject_id: format!("synth-{subject_seed}"),
        sample_rate: config.sample_rate,
        signals,
        label_events,
    })
}

/// Pure sines with random phase and frequency drift; a forecasting sanity signal.
pub fn sine_family(seed: u64, len: usize, period_samples: f64) -> Tensor2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0 = rng.gen_range(0.0..TAU);
    let second = rng.gen_range(0.2..0.5);
    let mut phase = phase0;
    let data = (0..len)
        .map(|t| {
            let drift = 1.0 + 0.05 * (TAU * t as f64 / (period_samples * 37.0)).sin();
            let v = phase.sin() + second * (2.0 * phase + 1.0).sin();
            phase += TAU / period_samples * drift;
            v as f32
        })
        .collect();
    Tensor2D::column(data)
}

/// I.i.d. standard normal samples.
pub fn white_noise(seed: u64, len: usize) -> Tensor2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    Tensor2D::column((0..len).map(|_| normal.sample(&mut rng)).collect())
}
