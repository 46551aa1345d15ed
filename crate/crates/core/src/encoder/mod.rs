//! Frame-level speech representations and k-step chunking.
//!
//! Two backends produce a `T × D` frame matrix from a canonical clip:
//! a pretrained self-supervised transformer (HuBERT-style checkpoints in
//! safetensors form) and a deterministic log-mel filterbank that needs no
//! downloaded weights. Encoder weights are never trained here.

mod cache;
pub mod hubert;
mod logmel;

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::FeatureCache;
pub use hubert::Hubert;
pub use logmel::{LogMel, ENERGY_FLOOR};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Environment variable consulted for the pretrained checkpoint location when
/// the config does not name one.
pub const ENCODER_CHECKPOINT_ENV: &str = "NATIVENESS_ENCODER_CHECKPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    PretrainedSsl,
    SpectralFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub backend: Backend,
    /// `D`. For the pretrained backend this must match the checkpoint width.
    pub feature_dim: usize,
    pub frame_stride_s: f64,
    /// `k`, frames concatenated into one classifier step.
    pub chunk_size: usize,
    /// Directory with `config.json` + `model.safetensors`. Machine-specific,
    /// so it is excluded from the fingerprint.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Hidden-state index taken from the transformer (0 = input embeddings);
    /// `None` takes the final layer.
    #[serde(default)]
    pub layer: Option<usize>,
    /// Encoder weights stay fixed during classifier training. Only `true` is
    /// supported.
    #[serde(default = "default_true")]
    pub freeze: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::SpectralFallback,
            feature_dim: 80,
            frame_stride_s: 0.02,
            chunk_size: 5,
            checkpoint: None,
            layer: None,
            freeze: true,
        }
    }
}

impl EncoderConfig {
    pub fn pretrained(checkpoint: impl Into<PathBuf>, feature_dim: usize) -> Self {
        Self {
            backend: Backend::PretrainedSsl,
            feature_dim,
            checkpoint: Some(checkpoint.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        if !(self.frame_stride_s.is_finite() && self.frame_stride_s > 0.0) {
            return Err(Error::Config("frame_stride_s must be positive".into()));
        }
        if !self.freeze {
            return Err(Error::Config(
                "fine-tuning the encoder is not supported; set freeze = true".into(),
            ));
        }
        Ok(())
    }

    pub fn chunk_stride_s(&self) -> f64 {
        self.frame_stride_s * self.chunk_size as f64
    }

    fn fingerprint_material(&self) -> String {
        // fields that change the produced features; the checkpoint path does
        // not, its contents are hashed separately
        serde_json::json!({
            "backend": self.backend,
            "feature_dim": self.feature_dim,
            "frame_stride_s": self.frame_stride_s,
            "chunk_size": self.chunk_size,
            "layer": self.layer,
        })
        .to_string()
    }
}

/// Per-frame latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `T × D`.
    pub frames: Array2<f64>,
    pub frame_stride_s: f64,
    /// Time of the first frame's center.
    pub frame_offset_s: f64,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Classifier input: row `i` is frames `i·k .. i·k + k` laid end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedSequence {
    /// `T′ × (k·D)`.
    pub chunks: Array2<f64>,
    pub chunk_size: usize,
    pub chunk_stride_s: f64,
}

impl ChunkedSequence {
    pub fn len(&self) -> usize {
        self.chunks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.chunks.ncols()
    }

    /// `[start, end)` of chunk `i` in seconds.
    pub fn span(&self, i: usize) -> (f64, f64) {
        (
            i as f64 * self.chunk_stride_s,
            (i + 1) as f64 * self.chunk_stride_s,
        )
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.chunks.view()
    }
}

/// Groups `k` consecutive frames per row; the trailing `T mod k` frames are
/// dropped.
pub fn chunk(seq: &FeatureSequence, k: usize) -> Result<ChunkedSequence> {
    if k == 0 {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }
    let (t, d) = seq.frames.dim();
    if k > t {
        return Err(Error::Dimension(format!(
            "chunk size {k} exceeds sequence length {t}"
        )));
    }
    let rows = t / k;
    let kept = seq.frames.slice(ndarray::s![..rows * k, ..]);
    // row-major frames make each run of k rows contiguous
    let chunks = kept
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, k * d))
        .expect("contiguous reshape");
    Ok(ChunkedSequence {
        chunks,
        chunk_size: k,
        chunk_stride_s: k as f64 * seq.frame_stride_s,
    })
}

pub enum Encoder {
    Spectral(LogMel),
    Ssl(Box<Hubert>),
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Encoder::Spectral(m) => f.debug_tuple("Spectral").field(m).finish(),
            Encoder::Ssl(_) => f.write_str("Ssl(..)"),
        }
    }
}

/// An encoder plus the config it was built from.
#[derive(Debug)]
pub struct LoadedEncoder {
    pub config: EncoderConfig,
    encoder: Encoder,
    fingerprint: String,
}

impl LoadedEncoder {
    pub fn load(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(config.fingerprint_material().as_bytes());
        let encoder = match config.backend {
            Backend::SpectralFallback => {
                Encoder::Spectral(LogMel::new(config.feature_dim, config.frame_stride_s)?)
            }
            Backend::PretrainedSsl => {
                let dir = resolve_checkpoint(config)?;
                let model = Hubert::load(&dir)?;
                if model.hidden_size() != config.feature_dim {
                    return Err(Error::EncoderCheckpoint(format!(
                        "checkpoint width {} does not match feature_dim {}",
                        model.hidden_size(),
                        config.feature_dim
                    )));
                }
                if (model.frame_stride_s() - config.frame_stride_s).abs() > 1e-9 {
                    return Err(Error::EncoderCheckpoint(format!(
                        "checkpoint frame stride {} s does not match frame_stride_s {}",
                        model.frame_stride_s(),
                        config.frame_stride_s
                    )));
                }
                if let Some(layer) = config.layer {
                    if layer > model.num_layers() {
                        return Err(Error::Config(format!(
                            "layer {layer} out of range (checkpoint has {} layers)",
                            model.num_layers()
                        )));
                    }
                }
                hasher.update(model.weights_digest().as_bytes());
                Encoder::Ssl(Box::new(model))
            }
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            fingerprint: hex::encode(hasher.finalize()),
        })
    }

    /// Hash of everything that determines the features.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn encode(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        clip.ensure_canonical()?;
        match &self.encoder {
            Encoder::Spectral(m) => Ok(m.encode(&clip.samples)),
            Encoder::Ssl(m) => m.encode(&clip.samples, self.config.layer),
        }
    }

    pub fn encode_chunked(&self, clip: &AudioClip) -> Result<ChunkedSequence> {
        chunk(&self.encode(clip)?, self.config.chunk_size)
    }
}

fn resolve_checkpoint(config: &EncoderConfig) -> Result<PathBuf> {
    if let Some(p) = &config.checkpoint {
        return Ok(p.clone());
    }
    match std::env::var_os(ENCODER_CHECKPOINT_ENV) {
        Some(p) => Ok(Path::new(&p).to_path_buf()),
        None => Err(Error::EncoderCheckpoint(format!(
            "no checkpoint configured and {ENCODER_CHECKPOINT_ENV} is unset"
        ))),
    }
}
