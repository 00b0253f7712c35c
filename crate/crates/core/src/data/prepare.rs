use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::labels::{attach_labels, LabelAssignment};
use super::modality::{Modality, QuestionId};
use super::normalize::{apply_normalization, fit_normalization, NormalizationStats};
use super::recording::SubjectRecording;
use super::segment::{segment_shared, SegmentationSpec, WindowDataset};
use super::split::train_test_split;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// How the three accelerometer axes reach the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccInput {
    /// All three axes as channels.
    #[default]
    Axes,
    /// Euclidean norm as a single channel.
    Magnitude,
}

impl AccInput {
    pub fn channels(self, modality: Modality) -> usize {
        match (modality, self) {
            (Modality::Acc, AccInput::Magnitude) => 1,
            (m, _) => m.channels(),
        }
    }
}

/// A subject's windows ready for training: one normalized, labeled dataset per
/// modality (all sharing window starts) and the temporal split.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub subject_id: String,
    /// In [`Modality::ALL`] order.
    pub modalities: Vec<(Modality, WindowDataset)>,
    pub stats: Vec<NormalizationStats>,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

pub fn prepare_subject(
    recording: &SubjectRecording,
    segmentation: SegmentationSpec,
    test_count: usize,
    acc: AccInput,
) -> Result<PreparedSubject> {
    let problems = recording.violations();
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    let mut modalities = Vec::with_capacity(6);
    let mut stats = Vec::with_capacity(6);
    let mut split = None;
    for m in Modality::ALL {
        let raw = recording.signal(m).expect("validated");
        let series = match (m, acc) {
            (Modality::Acc, AccInput::Magnitude) => magnitude(raw),
            _ => raw.clone(),
        };
        let ds = segment_shared(Arc::new(series), segmentation)?;
        let ds = attach_labels(&ds, &recording.label_events, LabelAssignment::Containment)?;
        let (train, _) = train_test_split(&ds, test_count)?;
        if train.is_empty() {
            return Err(Error::validation(format!(
                "subject {}: no training windows left after holding out {test_count} of {}",
                recording.subject_id,
                ds.len()
            )));
        }
        let st = fit_normalization(&train)?;
        let ds = apply_normalization(&ds, &st)?;
        split.get_or_insert((0..train.len(), train.len()..ds.len()));
        modalities.push((m, ds));
        stats.push(st);
    }
    let (train, test) = split.expect("six modalities");
    Ok(PreparedSubject {
        subject_id: recording.subject_id.clone(),
        modalities,
        stats,
        train,
        test,
    })
}

fn magnitude(acc: &Tensor2D) -> Tensor2D {
    Tensor2D::column(
        (0..acc.rows())
            .map(|t| acc.row(t).iter().map(|v| v * v).sum::<f32>().sqrt())
            .collect(),
    )
}

impl PreparedSubject {
    pub fn window_count(&self) -> usize {
        self.modalities[0].1.len()
    }

    pub fn dataset(&self, modality: Modality) -> &WindowDataset {
        &self.modalities[modality.index()].1
    }

    /// The six `W × C` windows of window position `pos`, in fusion order.
    pub fn bundle(&self, pos: usize) -> Vec<Tensor2D> {
        self.modalities.iter().map(|(_, ds)| ds.window(pos)).collect()
    }

    pub fn label(&self, pos: usize, question: QuestionId) -> Option<f32> {
        self.modalities[0].1.label(pos, question)
    }

    /// Training positions carrying a label for `question`.
    pub fn labeled_train(&self, question: QuestionId) -> Vec<usize> {
        self.train
            .clone()
            .filter(|&p| self.label(p, question).is_some())
            .collect()
    }
}
