//! Attention → time-aligned difference segments.
//!
//! Attention is standardized within the utterance; chunks whose z-score
//! exceeds the threshold are shaded, nearby shaded chunks are merged, and
//! shading intensity grows linearly from the threshold to the utterance's
//! largest z-score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::scorer::AttentionVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffConfig {
    pub z_threshold: f64,
    /// Flagged chunks separated by at most this many unflagged chunks are
    /// reported as one segment.
    pub merge_gap_chunks: usize,
    pub min_std: f64,
    /// Predicted-native clips with calibrated P(native) at or above this
    /// value get no segments.
    pub proficiency_threshold: f64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            z_threshold: 1.0,
            merge_gap_chunks: 1,
            min_std: 1e-8,
            proficiency_threshold: 0.8,
        }
    }
}

impl DiffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_std.is_finite() && self.min_std > 0.0) {
            return Err(Error::Config("min_std must be positive".into()));
        }
        if !self.z_threshold.is_finite() {
            return Err(Error::Config("z_threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSegment {
    pub start_s: f64,
    pub end_s: f64,
    /// 0 at the threshold, 1 at the utterance's peak z-score.
    pub intensity: f64,
}

/// `(α − mean) / max(std, min_std)` with the population standard deviation.
pub fn standardize(alpha: &AttentionVector, min_std: f64) -> Vec<f64> {
    let n = alpha.weights.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = alpha.weights.iter().sum::<f64>() / n as f64;
    let var = alpha.weights.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(min_std);
    alpha.weights.iter().map(|a| (a - mean) / std).collect()
}

/// Indices with `z > threshold`, ascending.
pub fn flagged_chunks(z: &[f64], threshold: f64) -> Vec<usize> {
    z.iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i)
        .collect()
}

fn intensity(z: f64, threshold: f64, z_max: f64) -> f64 {
    if z_max <= threshold {
        1.0
    } else {
        ((z - threshold) / (z_max - threshold)).clamp(0.0, 1.0)
    }
}

/// Segments in seconds for chunks of `chunk_stride_s`. Returns nothing for
/// speech predicted native with `p_native ≥ cfg.proficiency_threshold`.
pub fn extract_segments(
    alpha: &AttentionVector,
    chunk_stride_s: f64,
    cfg: &DiffConfig,
    predicted_label: Label,
    p_native: f64,
) -> Vec<DifferenceSegment> {
    if predicted_label == Label::Native && p_native >= cfg.proficiency_threshold {
        return Vec::new();
    }
    segments_from_z(&standardize(alpha, cfg.min_std), chunk_stride_s, cfg)
}

/// The thresholding and merging step on precomputed z-scores.
pub fn segments_from_z(z: &[f64], chunk_stride_s: f64, cfg: &DiffConfig) -> Vec<DifferenceSegment> {
    let flagged = flagged_chunks(z, cfg.z_threshold);
    let Some(z_max) = z.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for i in flagged {
        let v = intensity(z[i], cfg.z_threshold, z_max);
        match out.last_mut() {
            Some((_, last, peak)) if i - *last - 1 <= cfg.merge_gap_chunks => {
                *last = i;
                *peak = peak.max(v);
            }
            _ => out.push((i, i, v)),
        }
    }
    out.into_iter()
        .map(|(first, last, v)| DifferenceSegment {
            start_s: first as f64 * chunk_stride_s,
            end_s: (last + 1) as f64 * chunk_stride_s,
            intensity: v,
        })
        .collect()
}
