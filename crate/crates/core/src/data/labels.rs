use serde::{Deserialize, Serialize};

use super::modality::QuestionId;
use super::recording::LabelEvent;
use super::segment::WindowDataset;
use crate::error::{Error, Result};

/// Maps a four-point Likert answer onto `likert / 4`.
pub fn quantize_label(likert: i64) -> Result<f32> {
    match likert {
        1..=4 => Ok(likert as f32 / 4.0),
        other => Err(Error::validation(format!(
            "likert value {other} outside 1..=4"
        ))),
    }
}

/// How questionnaire spans are mapped onto windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAssignment {
    /// A window takes a span's label only if its whole input lies inside the
    /// span; windows straddling a boundary stay unlabeled.
    #[default]
    Containment,
}

/// Rejects overlapping spans of one question that disagree.
pub fn check_label_events(events: &[LabelEvent]) -> Result<()> {
    for q in QuestionId::ALL {
        let mut spans: Vec<&LabelEvent> = events.iter().filter(|e| e.question == q).collect();
        spans.sort_by_key(|e| (e.start_sample, e.end_sample));
        for pair in spans.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.start_sample < a.end_sample && a.likert != b.likert {
                return Err(Error::validation(format!(
                    "question {q}: spans {}..{} (likert {}) and {}..{} (likert {}) overlap",
                    a.start_sample, a.end_sample, a.likert, b.start_sample, b.end_sample, b.likert
                )));
            }
        }
    }
    Ok(())
}

pub fn attach_labels(
    dataset: &WindowDataset,
    events: &[LabelEvent],
    policy: LabelAssignment,
) -> Result<WindowDataset> {
    check_label_events(events)?;
    let quantized: Vec<(usize, usize, usize, f32)> = events
        .iter()
        .map(|e| {
            Ok((
                e.start_sample,
                e.end_sample,
                e.question.index(),
                quantize_label(e.likert as i64)?,
            ))
        })
        .collect::<Result<_>>()?;
    let width = dataset.spec().window;
    let mut out = dataset.clone();
    for entry in out.entries_mut() {
        entry.labels = [None; 6];
        let (lo, hi) = (entry.start, entry.start + width);
        match policy {
            LabelAssignment::Containment => {
                for &(s, e, q, v) in &quantized {
                    if s <= lo && hi <= e {
                        entry.labels[q] = Some(v);
                    }
                }
            }
        }
    }
    Ok(out)
}
