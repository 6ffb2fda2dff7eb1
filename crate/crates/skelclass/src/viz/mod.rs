//! Attention visualization: per-part aggregation of the 5x5 spatial
//! matrices, Gaussian + moving-average smoothing over frames,
//! percentile-clamped normalization, the Viridis colormap, and per-frame
//! skeleton rendering with a temporal attention bar.

mod render;
mod viridis;

pub use render::{render_clip, render_from_export, AttentionExportRow, RenderOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::eval::percentile;
use crate::pose::N_PARTS;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VizConfig {
    /// Gaussian smoothing stddev over frames (0 disables).
    pub gaussian_sigma: f64,
    /// Centered moving-average width in frames (odd; 1 disables).
    pub temporal_window: usize,
    /// Percentile clamp applied before min-max normalization.
    pub clamp_percentiles: (f64, f64),
    /// Square canvas side in pixels.
    pub image_size: usize,
    /// Sum only the row of the attention matrix when aggregating per-part
    /// scores, instead of row + column.
    pub row_only_aggregation: bool,
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            gaussian_sigma: 2.0,
            temporal_window: 5,
            clamp_percentiles: (2.0, 98.0),
            image_size: 256,
            row_only_aggregation: false,
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        if self.gaussian_sigma < 0.0 {
            return Err(VizError::Invalid("gaussian_sigma must be non-negative".into()));
        }
        if self.temporal_window == 0 || self.temporal_window % 2 == 0 {
            return Err(VizError::Invalid("temporal_window must be odd and positive".into()));
        }
        let (lo, hi) = self.clamp_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(VizError::Invalid(format!("clamp percentiles ({lo}, {hi}) invalid")));
        }
        if self.image_size < 32 {
            return Err(VizError::Invalid("image_size must be at least 32".into()));
        }
        Ok(())
    }
}

/// Per-part score from one 5x5 attention matrix: the sum of the entries
/// in part p's row and column, excluding the self-attention diagonal.
/// With `row_only` the column half is dropped.
pub fn aggregate_spatial(attention: &Tensor, row_only: bool) -> [f64; N_PARTS] {
    assert_eq!(attention.shape(), [N_PARTS, N_PARTS], "expected a 5x5 attention matrix");
    let mut scores = [0.0; N_PARTS];
    for (p, score) in scores.iter_mut().enumerate() {
        for j in 0..N_PARTS {
            if j == p {
                continue;
            }
            *score += attention.get(p, j);
            if !row_only {
                *score += attention.get(j, p);
            }
        }
    }
    scores
}

/// Smooths a per-frame series: convolution with a normalized Gaussian
/// kernel truncated at 3σ (edge-renormalized), then a centered moving
/// average of the configured width (also edge-renormalized).
pub fn smooth(series: &[f64], sigma: f64, window: usize) -> Vec<f64> {
    assert!(window % 2 == 1 && window > 0, "window must be odd and positive");
    let gaussian = if sigma > 0.0 {
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|j| (-0.5 * (j as f64 / sigma).powi(2)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        convolve_renormalized(series, &kernel, radius)
    } else {
        series.to_vec()
    };
    if window == 1 {
        return gaussian;
    }
    let radius = (window / 2) as isize;
    let kernel = vec![1.0 / window as f64; window];
    convolve_renormalized(&gaussian, &kernel, radius)
}

fn convolve_renormalized(series: &[f64], kernel: &[f64], radius: isize) -> Vec<f64> {
    let n = series.len() as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (ki, &k) in kernel.iter().enumerate() {
                let src = t + ki as isize - radius;
                if src >= 0 && src < n {
                    acc += k * series[src as usize];
                    weight += k;
                }
            }
            acc / weight
        })
        .collect()
}

/// Clamps scores to the [low, high] percentile range of their own
/// distribution and min-max normalizes into [0, 1]. A flat distribution
/// maps everywhere to 0.5.
pub fn normalize_clamp(scores: &[f64], percentiles: (f64, f64)) -> Vec<f64> {
    assert!(!scores.is_empty(), "normalize_clamp of empty scores");
    let lo = percentile(scores, percentiles.0);
    let hi = percentile(scores, percentiles.1);
    if (hi - lo).abs() < 1e-12 {
        return vec![0.5; scores.len()];
    }
    scores
        .iter()
        .map(|&s| (s.clamp(lo, hi) - lo) / (hi - lo))
        .collect()
}

/// Linear interpolation into the embedded 256-entry Viridis table.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * 255.0;
    let i = v.floor() as usize;
    if i >= 255 {
        return viridis::VIRIDIS[255];
    }
    let frac = v - i as f64;
    let (a, b) = (viridis::VIRIDIS[i], viridis::VIRIDIS[i + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (a[c] as f64 + frac * (b[c] as f64 - a[c] as f64)).round() as u8;
    }
    out
}
