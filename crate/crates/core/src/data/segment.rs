//! Sliding-window forecasting pairs.
//!
//! Window `i` (0-based) reads samples `i·O .. i·O + W` and its target is the
//! next `P` samples, so with 1-based sample numbers window `i + 1` spans
//! `i·O + 1 ..= i·O + W`. `O` is the stride between window starts; consecutive
//! windows share `W − O` samples.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::modality::QuestionId;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    /// Window length in samples.
    pub window: usize,
    /// Stride between consecutive window starts.
    pub stride: usize,
    /// Forecast horizon in samples.
    pub horizon: usize,
}

impl SegmentationSpec {
    pub const REFERENCE: SegmentationSpec = SegmentationSpec {
        window: 7000,
        stride: 100,
        horizon: 40,
    };

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::validation(format!(
                "window and stride must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `⌊(L − W − P)/O⌋ + 1` when `L ≥ W + P`, else 0.
    pub fn window_count(&self, len: usize) -> usize {
        let span = self.window + self.horizon;
        if len < span {
            0
        } else {
            (len - span) / self.stride + 1
        }
    }
}

/// Quantized label per question, indexed by [`QuestionId::index`].
pub type WindowLabels = [Option<f32>; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    /// Position among all windows of the source series.
    pub index: usize,
    /// 0-based first sample of the window.
    pub start: usize,
    pub labels: WindowLabels,
}

/// Windows over one (shared, immutable) series.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    series: Arc<Tensor2D>,
    spec: SegmentationSpec,
    entries: Vec<WindowEntry>,
}

pub fn segment(series: &Tensor2D, spec: SegmentationSpec) -> Result<WindowDataset> {
    segment_shared(Arc::new(series.clone()), spec)
}

pub fn segment_shared(series: Arc<Tensor2D>, spec: SegmentationSpec) -> Result<WindowDataset> {
    spec.validate()?;
    let count = spec.window_count(series.rows());
    let entries = (0..count)
        .map(|i| WindowEntry {
            index: i,
            start: i * spec.stride,
            labels: [None; 6],
        })
        .collect();
    Ok(WindowDataset {
        series,
        spec,
        entries,
    })
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn spec(&self) -> SegmentationSpec {
        self.spec
    }

    pub fn channels(&self) -> usize {
        self.series.cols()
    }

    pub fn series(&self) -> &Arc<Tensor2D> {
        &self.series
    }

    pub fn entries(&self) -> &[WindowEntry] {
        &self.entries
    }

    pub fn entry(&self, pos: usize) -> &WindowEntry {
        &self.entries[pos]
    }

    /// Global window indices in order.
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// `W × C` input of the window at position `pos`.
    pub fn window(&self, pos: usize) -> Tensor2D {
        self.series
            .slice_rows(self.entries[pos].start, self.spec.window)
            .expect("window within series")
    }

    /// Next `P` samples, channel-interleaved.
    pub fn target(&self, pos: usize) -> Vec<f32> {
        let c = self.series.cols();
        let from = (self.entries[pos].start + self.spec.window) * c;
        self.series.data()[from..from + self.spec.horizon * c].to_vec()
    }

    pub fn labels(&self, pos: usize) -> &WindowLabels {
        &self.entries[pos].labels
    }

    pub fn label(&self, pos: usize, question: QuestionId) -> Option<f32> {
        self.entries[pos].labels[question.index()]
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [WindowEntry] {
        &mut self.entries
    }

    /// Position of the window with global index `index`.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.entries
            .binary_search_by_key(&index, |e| e.index)
            .ok()
    }

    /// Windows at positions `range`, sharing the same series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> WindowDataset {
        WindowDataset {
            series: Arc::clone(&self.series),
            spec: self.spec,
            entries: self.entries[range].to_vec(),
        }
    }

    /// Same windows over a replacement series of identical shape.
    pub fn with_series(&self, series: Arc<Tensor2D>) -> Result<WindowDataset> {
        if series.shape() != self.series.shape() {
            return Err(Error::dim("replacement series shape differs"));
        }
        Ok(WindowDataset {
            series,
            spec: self.spec,
            entries: self.entries.clone(),
        })
    }

    /// Sample ranges covered by any window's input or target, merged.
    pub fn covered_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let span = self.spec.window + self.spec.horizon;
        let mut starts: Vec<usize> = self.entries.iter().map(|e| e.start).collect();
        starts.sort_unstable();
        let mut out: Vec<std::ops::Range<usize>> = Vec::new();
        for s in starts {
            match out.last_mut() {
                Some(r) if s <= r.end => r.end = r.end.max(s + span),
                _ => out.push(s..s + span),
            }
        }
        out
    }
}
