//! On-disk feature cache keyed by clip contents and encoder fingerprint.
//!
//! Each entry is one file named by the SHA-256 of (clip samples, sample rate,
//! encoder fingerprint). Layout, little endian:
//!
//! ```text
//! b"NFC1" | rows: u64 | cols: u64 | frame_stride_s: f64 | frame_offset_s: f64 | rows·cols f64
//! ```

use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{FeatureSequence, LoadedEncoder};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NFC1";

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn key(clip: &AudioClip, encoder: &LoadedEncoder) -> String {
        let mut h = Sha256::new();
        for s in &clip.samples {
            h.update(s.to_le_bytes());
        }
        h.update(clip.sample_rate.to_le_bytes());
        h.update(encoder.fingerprint().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.feat"))
    }

    pub fn get_or_encode(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<FeatureSequence> {
        let path = self.path(&Self::key(clip, encoder));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Some(seq) = decode(&bytes) {
                return Ok(seq);
            }
        }
        let seq = encoder.encode(clip)?;
        write_atomic(&path, &encode(&seq))?;
        Ok(seq)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode(seq: &FeatureSequence) -> Vec<u8> {
    let (rows, cols) = seq.frames.dim();
    let mut out = Vec::with_capacity(36 + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.extend_from_slice(&seq.frame_stride_s.to_le_bytes());
    out.extend_from_slice(&seq.frame_offset_s.to_le_bytes());
    for v in seq.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<FeatureSequence> {
    let word = |at: usize| -> Option<[u8; 8]> { bytes.get(at..at + 8)?.try_into().ok() };
    if bytes.get(..4)? != MAGIC {
        return None;
    }
    let rows = u64::from_le_bytes(word(4)?) as usize;
    let cols = u64::from_le_bytes(word(12)?) as usize;
    let stride = f64::from_le_bytes(word(20)?);
    let offset = f64::from_le_bytes(word(28)?);
    let body = bytes.get(36..)?;
    if body.len() != rows.checked_mul(cols)?.checked_mul(8)? {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Some(FeatureSequence {
        frames: Array2::from_shape_vec((rows, cols), data).ok()?,
        frame_stride_s: stride,
        frame_offset_s: offset,
    })
}
