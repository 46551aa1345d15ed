//! The model container: everything an analysis needs, in one JSON file.
//!
//! Holds the encoder configuration and fingerprint the models were trained
//! against, the scorer with its training log and calibration, and the metric
//! model with its anchor and margin. Serialization contains no timestamps or
//! paths beyond the encoder config, so equal models give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, LoadedEncoder};
use crate::error::{Error, Result};
use crate::metric::{MetricLog, MetricModel, MetricTrainConfig};
use crate::scorer::{CalibrationModel, ScorerModel, TrainConfig, TrainingLog};

pub const CONTAINER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerEntry {
    pub model: ScorerModel,
    pub config: TrainConfig,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub model: MetricModel,
    pub config: MetricTrainConfig,
    pub log: MetricLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub schema_version: u32,
    pub encoder: EncoderConfig,
    pub encoder_fingerprint: String,
    pub scorer: Option<ScorerEntry>,
    /// Identity until `calibrate` has run.
    pub calibration: CalibrationModel,
    pub metric: Option<MetricEntry>,
}

impl ModelContainer {
    pub fn new(encoder: &LoadedEncoder) -> Self {
        Self {
            schema_version: CONTAINER_SCHEMA_VERSION,
            encoder: encoder.config.clone(),
            encoder_fingerprint: encoder.fingerprint().to_string(),
            scorer: None,
            calibration: CalibrationModel::identity(),
            metric: None,
        }
    }

    /// Replacing the scorer drops the old calibration.
    pub fn set_scorer(&mut self, entry: ScorerEntry) {
        self.scorer = Some(entry);
        self.calibration = CalibrationModel::identity();
    }

    pub fn scorer(&self) -> Result<&ScorerModel> {
        self.scorer
            .as_ref()
            .map(|e| &e.model)
            .ok_or_else(|| Error::Checkpoint("container has no scorer".into()))
    }

    pub fn metric(&self) -> Result<&MetricModel> {
        self.metric
            .as_ref()
            .map(|e| &e.model)
            .ok_or_else(|| Error::Checkpoint("container has no metric model".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONTAINER_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} is not supported (expected {CONTAINER_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.encoder.validate()?;
        let layout = (self.encoder.chunk_size, self.encoder.feature_dim);
        if let Some(s) = &self.scorer {
            s.model.validate()?;
            if (s.model.chunk_size, s.model.feature_norm.dim()) != layout {
                return Err(Error::Checkpoint("scorer does not match the encoder layout".into()));
            }
        }
        if let Some(m) = &self.metric {
            m.model.validate()?;
            if (m.model.chunk_size, m.model.feature_norm.dim()) != layout {
                return Err(Error::Checkpoint("metric model does not match the encoder layout".into()));
            }
        }
        let t = self.calibration.temperature;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Checkpoint(format!("temperature {t} is not positive")));
        }
        Ok(())
    }

    /// Errors unless `encoder` produces the features the models were trained on.
    pub fn check_encoder(&self, encoder: &LoadedEncoder) -> Result<()> {
        if encoder.fingerprint() != self.encoder_fingerprint {
            return Err(Error::Checkpoint(
                "encoder fingerprint differs from the one the models were trained with".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: Self = serde_json::from_slice(bytes)
            .map_err(|e| Error::Checkpoint(format!("malformed container: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_json()?;
        // write-then-rename so a crash never leaves a truncated container
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}
