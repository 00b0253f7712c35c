use serde::{Deserialize, Serialize};

use super::modality::{Modality, QuestionId};
use crate::nn::Tensor2D;

/// A questionnaire answer governing the half-open sample span `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub start_sample: usize,
    pub end_sample: usize,
    pub question: QuestionId,
    /// Four-point Likert response, 1..=4.
    pub likert: u8,
}

/// One subject's synchronized modality series plus questionnaire events.
///
/// Series are `samples × channels`, channel-interleaved, all at `sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub sample_rate: f32,
    /// In [`Modality::ALL`] order.
    pub signals: Vec<(Modality, Tensor2D)>,
    pub label_events: Vec<LabelEvent>,
}

impl SubjectRecording {
    pub fn signal(&self, modality: Modality) -> Option<&Tensor2D> {
        self.signals
            .iter()
            .find(|(m, _)| *m == modality)
            .map(|(_, s)| s)
    }

    /// Shared sample count, or `None` when modalities disagree or are absent.
    pub fn sample_count(&self) -> Option<usize> {
        let mut lens = self.signals.iter().map(|(_, s)| s.rows());
        let first = lens.next()?;
        lens.all(|l| l == first).then_some(first)
    }

    /// Every structural problem, empty when the recording is consistent.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            out.push(format!("sample rate {} is not positive", self.sample_rate));
        }
        for m in Modality::ALL {
            match self.signal(m) {
                None => out.push(format!("modality {m} missing")),
                Some(s) if s.cols() != m.channels() => out.push(format!(
                    "modality {m} has {} channels, expected {}",
                    s.cols(),
                    m.channels()
                )),
                Some(s) if !s.is_finite() => out.push(format!("modality {m} has non-finite samples")),
                _ => {}
            }
        }
        let total = self.sample_count();
        if total.is_none() && !self.signals.is_empty() {
            out.push("modality sample counts differ".into());
        }
        for (i, ev) in self.label_events.iter().enumerate() {
            if !(1..=4).contains(&ev.likert) {
                out.push(format!(
                    "subject {} event {i} ({}): likert {} outside 1..=4",
                    self.subject_id, ev.question, ev.likert
                ));
            }
            if ev.start_sample >= ev.end_sample {
                out.push(format!(
                    "subject {} event {i} ({}): empty span {}..{}",
                    self.subject_id, ev.question, ev.start_sample, ev.end_sample
                ));
            }
            if let Some(n) = total {
                if ev.end_sample > n {
                    out.push(format!(
                        "subject {} event {i} ({}): span ends at {} past {n} samples",
                        self.subject_id, ev.question, ev.end_sample
                    ));
                }
            }
        }
        out
    }
}
