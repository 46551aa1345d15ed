//! One recording in, score + difference segments + distance reading out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{decode_audio, envelope, normalize, AudioClip};
use crate::dataset::FeatureNorm;
use crate::differ::{extract_segments, DiffConfig, DifferenceSegment};
use crate::encoder::LoadedEncoder;
use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::metric::{EmbeddingConfig, EmbeddingNet, EmbeddingPoint, MetricLog, MetricModel, MetricTrainConfig};
use crate::model::{MetricEntry, ModelContainer, ScorerEntry};
use crate::scorer::{score, ClassifierConfig, ClassifierParams, PronunciationScore, ScorerModel, TrainConfig, TrainingLog};

pub const ANALYSIS_SCHEMA_VERSION: u32 = 1;

/// Normalized clips whose peak amplitude is below this are rejected.
pub const SILENCE_PEAK: f32 = 1e-4;

pub const WAVEFORM_POINTS: usize = 1000;

/// The analytic part of a result: a pure function of the audio and models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub score: PronunciationScore,
    pub predicted_label: Label,
    pub segments: Vec<DifferenceSegment>,
    /// Anchor-centered.
    pub point: EmbeddingPoint,
    pub distance: f64,
    pub duration_s: f64,
    /// Max-abs envelope of the normalized clip.
    pub waveform_preview: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub schema_version: u32,
    pub result_id: String,
    pub sentence_id: String,
    /// Milliseconds since the Unix epoch; `None` for offline analyses.
    pub timestamp: Option<u64>,
    pub score: PronunciationScore,
    pub predicted_label: Label,
    pub segments: Vec<DifferenceSegment>,
    pub point: EmbeddingPoint,
    pub distance: f64,
    pub duration_s: f64,
    pub waveform_preview: Vec<f32>,
}

impl AnalysisResult {
    pub fn new(analysis: Analysis, result_id: String, sentence_id: String, timestamp: Option<u64>) -> Self {
        Self {
            schema_version: ANALYSIS_SCHEMA_VERSION,
            result_id,
            sentence_id,
            timestamp,
            score: analysis.score,
            predicted_label: analysis.predicted_label,
            segments: analysis.segments,
            point: analysis.point,
            distance: analysis.distance,
            duration_s: analysis.duration_s,
            waveform_preview: analysis.waveform_preview,
        }
    }

    pub fn analysis(&self) -> Analysis {
        Analysis {
            score: self.score,
            predicted_label: self.predicted_label,
            segments: self.segments.clone(),
            point: self.point,
            distance: self.distance,
            duration_s: self.duration_s,
            waveform_preview: self.waveform_preview.clone(),
        }
    }

    /// Checks the payload invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Checkpoint(format!("invalid analysis result: {m}")));
        if self.schema_version != ANALYSIS_SCHEMA_VERSION {
            return bad("schema version");
        }
        if self.score.display > 100 || !(0.0..=1.0).contains(&self.score.p_native) {
            return bad("score out of range");
        }
        let mut prev = 0.0;
        for s in &self.segments {
            if !(s.start_s >= prev && s.start_s < s.end_s && s.end_s <= self.duration_s + 1e-9) {
                return bad("segment outside the clip or out of order");
            }
            prev = s.end_s;
        }
        if !self.point.is_finite() || (self.point.distance(&EmbeddingPoint::ORIGIN) - self.distance).abs() > 1e-9 {
            return bad("distance disagrees with point");
        }
        Ok(())
    }
}

/// A container with both models, its encoder and the segment settings.
#[derive(Debug)]
pub struct Analyzer {
    container: ModelContainer,
    encoder: LoadedEncoder,
    diff: DiffConfig,
}

impl Analyzer {
    pub fn new(container: ModelContainer, encoder: LoadedEncoder, diff: DiffConfig) -> Result<Self> {
        container.validate()?;
        container.check_encoder(&encoder)?;
        container.scorer()?;
        container.metric()?;
        diff.validate()?;
        Ok(Self {
            container,
            encoder,
            diff,
        })
    }

    /// Builds the encoder described by the container.
    pub fn from_container(container: ModelContainer, diff: DiffConfig) -> Result<Self> {
        let encoder = LoadedEncoder::load(&container.encoder)?;
        Self::new(container, encoder, diff)
    }

    pub fn container(&self) -> &ModelContainer {
        &self.container
    }

    pub fn encoder(&self) -> &LoadedEncoder {
        &self.encoder
    }

    pub fn diff_config(&self) -> &DiffConfig {
        &self.diff
    }

    pub fn analyze_bytes(&self, bytes: &[u8]) -> Result<Analysis> {
        self.analyze(&decode_audio(bytes)?)
    }

    /// normalize → silence check → score → segments → distance.
    pub fn analyze(&self, clip: &AudioClip) -> Result<Analysis> {
        let clip = normalize(clip)?;
        let peak = clip.peak();
        if peak < SILENCE_PEAK {
            return Err(Error::SilentInput {
                peak,
                floor: SILENCE_PEAK,
            });
        }
        let scorer = self.container.scorer()?;
        let scored = score(&clip, scorer, &self.container.calibration, &self.encoder)?;
        let duration_s = clip.duration_s();
        let segments = extract_segments(
            scored.attention(),
            scored.chunk_stride_s,
            &self.diff,
            scored.output.predicted_label,
            scored.score.p_native,
        )
        .into_iter()
        .filter(|s| s.start_s < duration_s)
        .map(|s| DifferenceSegment {
            end_s: s.end_s.min(duration_s),
            ..s
        })
        .collect();
        let reading = self.container.metric()?.distance_reading(&clip, &self.encoder)?;
        Ok(Analysis {
            score: scored.score,
            predicted_label: scored.output.predicted_label,
            segments,
            point: reading.user_point,
            distance: reading.distance,
            duration_s,
            waveform_preview: envelope(&clip.samples, WAVEFORM_POINTS),
        })
    }
}

/// Randomly initialized models over identity feature scaling. Meant for
/// fixtures and smoke tests; the scores carry no meaning.
pub fn untrained_container(
    encoder: &LoadedEncoder,
    classifier: &ClassifierConfig,
    embedding: &EmbeddingConfig,
    seed: u64,
) -> Result<ModelContainer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = encoder.config.feature_dim;
    let k = encoder.config.chunk_size;
    let mut c = ModelContainer::new(encoder);
    c.set_scorer(ScorerEntry {
        model: ScorerModel {
            feature_norm: FeatureNorm::identity(dim),
            chunk_size: k,
            params: ClassifierParams::new(dim * k, classifier, &mut rng)?,
        },
        config: TrainConfig {
            classifier: classifier.clone(),
            max_epochs: 0,
            ..TrainConfig::default()
        },
        log: TrainingLog::default(),
    });
    c.metric = Some(MetricEntry {
        model: MetricModel {
            feature_norm: FeatureNorm::identity(dim),
            chunk_size: k,
            net: EmbeddingNet::new(dim * k, embedding, &mut rng)?,
            anchor: EmbeddingPoint::ORIGIN,
            margin: 1.0,
            perturbation_radius: 0.0,
        },
        config: MetricTrainConfig {
            embedding: embedding.clone(),
            max_epochs: 0,
            ..MetricTrainConfig::default()
        },
        log: MetricLog::default(),
    });
    Ok(c)
}
