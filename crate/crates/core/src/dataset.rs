//! Labeled clips, per-dimension feature standardization and the encode →
//! standardize → chunk path shared by both trainers.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::{augment, load_clip, normalize, AudioClip, AugmentationConfig};
use crate::encoder::{chunk, ChunkedSequence, LoadedEncoder};
use crate::error::{Error, Result};
use crate::manifest::{class_counts, Label, UtteranceRecord};

/// A manifest record with its canonical audio.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub record: UtteranceRecord,
    pub clip: AudioClip,
}

impl LabeledClip {
    pub fn label(&self) -> Label {
        self.record.label
    }
}

/// Loads and normalizes every record. Relative `clip_ref`s resolve against
/// `base_dir`.
pub fn load_clips(records: &[UtteranceRecord], base_dir: &Path) -> Result<Vec<LabeledClip>> {
    records
        .iter()
        .map(|r| {
            let raw = load_clip(r.resolve(base_dir))?;
            Ok(LabeledClip {
                record: r.clone(),
                clip: normalize(&raw)?,
            })
        })
        .collect()
}

/// Fails unless `clips` is nonempty and holds both classes.
pub fn require_both_classes(clips: &[LabeledClip], split: &str) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Dataset(format!("{split} split is empty")));
    }
    let counts = class_counts(clips.iter().map(|c| &c.record.label));
    for label in Label::ALL {
        if counts[label.index()] == 0 {
            return Err(Error::Dataset(format!(
                "{split} split has no {label} clips; both classes are required"
            )));
        }
    }
    Ok(())
}

/// Fails when a speaker appears in both sets.
pub fn require_speaker_disjoint(a: &[LabeledClip], b: &[LabeledClip]) -> Result<()> {
    let speakers: std::collections::BTreeSet<&str> =
        a.iter().map(|c| c.record.speaker_id.as_str()).collect();
    if let Some(c) = b.iter().find(|c| speakers.contains(c.record.speaker_id.as_str())) {
        return Err(Error::Dataset(format!(
            "speaker {:?} appears in more than one split",
            c.record.speaker_id
        )));
    }
    Ok(())
}

const NORM_STD_FLOOR: f64 = 1e-6;

/// Per-dimension standardization fitted on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics over all rows of all matrices.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut n = 0usize;
        for f in frames {
            let s = sum.get_or_insert_with(|| Array1::zeros(f.ncols()));
            let q = sq.get_or_insert_with(|| Array1::zeros(f.ncols()));
            if s.len() != f.ncols() {
                return Err(Error::Dimension("feature widths differ".into()));
            }
            *s += &f.sum_axis(Axis(0));
            *q += &f.mapv(|v| v * v).sum_axis(Axis(0));
            n += f.nrows();
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Err(Error::Dataset("no frames to fit feature statistics".into()));
        };
        if n == 0 {
            return Err(Error::Dataset("no frames to fit feature statistics".into()));
        }
        let mean = &sum / n as f64;
        let var = (&sq / n as f64) - &mean.mapv(|m| m * m);
        Ok(Self {
            mean: mean.to_vec(),
            std: var.iter().map(|v| v.max(0.0).sqrt().max(NORM_STD_FLOOR)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, frames: &mut Array2<f64>) -> Result<()> {
        if frames.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "features have width {}, normalizer expects {}",
                frames.ncols(),
                self.dim()
            )));
        }
        for mut row in frames.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Encodes, standardizes and chunks one clip.
pub fn prepare(clip: &AudioClip, encoder: &LoadedEncoder, norm: &FeatureNorm) -> Result<ChunkedSequence> {
    let mut seq = encoder.encode(clip)?;
    norm.apply(&mut seq.frames)?;
    chunk(&seq, encoder.config.chunk_size)
}

/// [`prepare`] on an augmented copy when `augmentation` is given.
pub(crate) fn prepare_augmented(
    clip: &AudioClip,
    encoder: &LoadedEncoder,
    norm: &FeatureNorm,
    augmentation: Option<&AugmentationConfig>,
    seed: u64,
) -> Result<ChunkedSequence> {
    match augmentation {
        Some(cfg) => prepare(&augment(clip, &cfg.with_seed(seed))?, encoder, norm),
        None => prepare(clip, encoder, norm),
    }
}

/// Mixes `parts` into `base` (splitmix64 finalizer per step) so every
/// (epoch, clip) pair gets an independent, reproducible stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}
