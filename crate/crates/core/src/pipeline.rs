//! End-to-end orchestration and the two named presets.
//!
//! `full` keeps the reference geometry (7000-sample windows, stride 100,
//! 40-sample horizon, 910 held-out windows, the reference conv stack).
//! `smoke` shrinks windows, the conv width and schedules so the whole path
//! runs in minutes on one core.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_with, prepare_subject, AccInput, Modality, SegmentationSpec, SubjectRecording,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{run_sweep, SubjectModels, SweepConfig, SweepReport};
use crate::finetune::FinetuneConfig;
use crate::nn::OptimizerConfig;
use crate::pretext::{pretext_seed, pretrain, EncoderArch, EpochLog, PretextConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    Smoke,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Smoke => "smoke",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "smoke" => Ok(Profile::Smoke),
            other => Err(Error::validation(format!("unknown profile '{other}' (expected full or smoke)"))),
        }
    }
}

/// How many synthetic subjects to generate and how long each recording is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthPlan {
    pub subjects: usize,
    pub duration_samples: usize,
    #[serde(flatten)]
    pub signal: SynthConfig,
}

impl Default for SynthPlan {
    fn default() -> Self {
        Self {
            subjects: 3,
            // Exactly 7910 windows under the reference segmentation.
            duration_samples: 797_940,
            signal: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub acc_input: AccInput,
    pub synth: SynthPlan,
    pub pretext: PretextConfig,
    pub finetune: FinetuneConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Profile::Full)
    }
}

/// Smoke-profile segmentation: 700-sample windows, 4-sample horizon.
pub const SMOKE_SEGMENTATION: SegmentationSpec = SegmentationSpec {
    window: 700,
    stride: 50,
    horizon: 4,
};

impl PipelineConfig {
    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self {
                acc_input: AccInput::Axes,
                synth: SynthPlan::default(),
                pretext: PretextConfig::default(),
                finetune: FinetuneConfig::default(),
                sweep: SweepConfig::default(),
            },
            Profile::Smoke => Self {
                acc_input: AccInput::Axes,
                synth: SynthPlan {
                    subjects: 1,
                    duration_samples: smoke_duration(300),
                    signal: SynthConfig::default(),
                },
                pretext: PretextConfig {
                    segmentation: SMOKE_SEGMENTATION,
                    epochs: 50,
                    batch_size: 1,
                    optimizer: OptimizerConfig::with_learning_rate(5e-4),
                    early_stop_patience: 10,
                    validation_fraction: 0.1,
                    arch: smoke_arch(),
                },
                finetune: FinetuneConfig {
                    epochs: 40,
                    patience: 20,
                    ..FinetuneConfig::default()
                },
                sweep: SweepConfig {
                    budgets: vec![5],
                    test_count: 60,
                    ..SweepConfig::default()
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretext.validate()?;
        self.finetune.validate()?;
        self.sweep.validate()?;
        if self.synth.subjects == 0 {
            return Err(Error::validation("at least one subject is required"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.sweep.seed
    }
}

/// Reference kernel widths with four channels per conv layer.
pub fn smoke_arch() -> EncoderArch {
    EncoderArch {
        conv_channels: vec![4, 4, 4, 4],
        conv_kernels: vec![40, 30, 18, 30],
        forecast_hidden: vec![70, 30],
    }
}

/// Recording length giving `windows` windows under [`SMOKE_SEGMENTATION`].
pub fn smoke_duration(windows: usize) -> usize {
    let s = SMOKE_SEGMENTATION;
    s.window + s.horizon + (windows - 1) * s.stride
}

/// Deterministic synthetic cohort, subjects named `S01`, `S02`, ….
pub fn synth_cohort(plan: &SynthPlan, seed: u64) -> Result<Vec<SubjectRecording>> {
    if plan.subjects == 0 {
        return Err(Error::validation("at least one subject is required"));
    }
    (0..plan.subjects)
        .map(|i| {
            let mut rec = generate_synthetic_with(derive_seed(seed, &[30, i as u64]), plan.duration_samples, &plan.signal)?;
            rec.subject_id = format!("S{:02}", i + 1);
            Ok(rec)
        })
        .collect()
}

/// Per-modality training logs of one subject's pretraining.
#[derive(Debug, Clone)]
pub struct PretextSummary {
    pub subject_id: String,
    pub logs: Vec<(Modality, Vec<EpochLog>)>,
}

/// Segments, normalizes and splits a recording, then pretrains its six encoders.
pub fn prepare_and_pretrain(recording: &SubjectRecording, config: &PipelineConfig) -> Result<(SubjectModels, PretextSummary)> {
    let subject = prepare_subject(
        recording,
        config.pretext.segmentation,
        config.sweep.test_count,
        config.acc_input,
    )?;
    let runs = Modality::ALL
        .par_iter()
        .map(|&m| pretrain(&subject, m, &config.pretext, pretext_seed(config.seed(), &subject.subject_id, m)))
        .collect::<Result<Vec<_>>>()?;
    let mut consumed: Vec<usize> = runs.iter().flat_map(|r| r.consumed.iter().copied()).collect();
    consumed.sort_unstable();
    consumed.dedup();
    let summary = PretextSummary {
        subject_id: subject.subject_id.clone(),
        logs: runs.iter().map(|r| (r.artifact.meta.modality, r.log.clone())).collect(),
    };
    let encoders = runs.into_iter().map(|r| r.artifact).collect();
    Ok((
        SubjectModels {
            subject,
            encoders,
            pretext_consumed: consumed,
        },
        summary,
    ))
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))
}

/// [`prepare_and_pretrain`] for every recording, on `config.sweep.workers` threads.
pub fn pretrain_cohort(
    recordings: &[SubjectRecording],
    config: &PipelineConfig,
) -> Result<Vec<(SubjectModels, PretextSummary)>> {
    config.validate()?;
    let pool = worker_pool(config.sweep.workers)?;
    pool.install(|| {
        recordings
            .par_iter()
            .map(|r| prepare_and_pretrain(r, config))
            .collect::<Result<Vec<_>>>()
    })
}

/// Pretrains every subject and runs the sweep.
pub fn run_experiment(recordings: &[SubjectRecording], config: &PipelineConfig) -> Result<SweepReport> {
    let subjects: Vec<SubjectModels> = pretrain_cohort(recordings, config)?.into_iter().map(|(s, _)| s).collect();
    run_sweep(&subjects, &config.sweep, &config.finetune, &config.pretext.arch)
}
