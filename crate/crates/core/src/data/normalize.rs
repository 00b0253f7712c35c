use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::segment::WindowDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// Per-channel z-score parameters fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose spread was zero; their std is clamped to 1.
    pub degenerate: Vec<bool>,
}

/// Fits over every sample touched by the given windows (inputs and targets),
/// each sample counted once.
pub fn fit_normalization(train: &WindowDataset) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::validation("normalization needs at least one window"));
    }
    let series = train.series();
    let c = series.cols();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut n = 0usize;
    let ranges = train.covered_ranges();
    for r in &ranges {
        for t in r.clone() {
            for (ch, &v) in series.row(t).iter().enumerate() {
                sum[ch] += v as f64;
            }
        }
        n += r.len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for r in &ranges {
        for t in r.clone() {
            for (ch, &v) in series.row(t).iter().enumerate() {
                let d = v as f64 - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let mut degenerate = vec![false; c];
    let std = sq
        .iter()
        .enumerate()
        .map(|(ch, s)| {
            let sd = (s / n as f64).sqrt();
            if sd <= 1e-7 * mean[ch].abs().max(1.0) {
                degenerate[ch] = true;
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormalizationStats {
        mean,
        std,
        degenerate,
    })
}

impl NormalizationStats {
    pub fn apply_series(&self, series: &Tensor2D) -> Result<Tensor2D> {
        self.transform(series, |v, m, s| (v - m) / s)
    }

    pub fn invert_series(&self, series: &Tensor2D) -> Result<Tensor2D> {
        self.transform(series, |v, m, s| v * s + m)
    }

    fn transform(&self, series: &Tensor2D, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor2D> {
        let c = self.mean.len();
        if series.cols() != c {
            return Err(Error::dim(format!(
                "stats for {c} channels applied to {} channels",
                series.cols()
            )));
        }
        let data = series
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v as f64, self.mean[i % c], self.std[i % c]) as f32)
            .collect();
        Tensor2D::from_vec(series.rows(), c, data)
    }
}

/// The same windows over the normalized series.
pub fn apply_normalization(windows: &WindowDataset, stats: &NormalizationStats) -> Result<WindowDataset> {
    let normalized = stats.apply_series(windows.series())?;
    windows.with_series(Arc::new(normalized))
}
