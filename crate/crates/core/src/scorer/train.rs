use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    calibrated_probabilities, classify, expected_calibration_error, focal_loss, loss_and_grad,
    predicted_label, ClassifierConfig, ClassifierOutput, ClassifierParams, ECE_BINS,
};
use crate::audio::{AudioClip, AugmentationConfig};
use crate::dataset::{
    derive_seed, prepare, prepare_augmented, require_both_classes, require_speaker_disjoint,
    FeatureNorm, LabeledClip,
};
use crate::encoder::{ChunkedSequence, LoadedEncoder};
use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::nn::{dropout_mask, Adam, ParamBlocks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub focal_gamma: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub rng_seed: u64,
    /// Applied to both classes, re-drawn every epoch. `None` trains on clean
    /// audio.
    pub augmentation: Option<AugmentationConfig>,
    pub classifier: ClassifierConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            focal_gamma: 2.0,
            max_epochs: 30,
            early_stop_patience: 10,
            rng_seed: 0,
            augmentation: Some(AugmentationConfig::default()),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_gamma must be nonnegative".into()));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trained classifier together with the feature standardization it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub feature_norm: FeatureNorm,
    pub chunk_size: usize,
    pub params: ClassifierParams,
}

impl ScorerModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.input_dim() != self.chunk_size * self.feature_norm.dim() {
            return Err(Error::Dimension(format!(
                "classifier input {} ≠ chunk size {} × feature width {}",
                self.params.input_dim(),
                self.chunk_size,
                self.feature_norm.dim()
            )));
        }
        Ok(())
    }

    fn check_encoder(&self, encoder: &LoadedEncoder) -> Result<()> {
        if encoder.config.feature_dim != self.feature_norm.dim() || encoder.config.chunk_size != self.chunk_size {
            return Err(Error::Dimension(format!(
                "encoder produces {}×{} chunks, model expects {}×{}",
                encoder.config.chunk_size,
                encoder.config.feature_dim,
                self.chunk_size,
                self.feature_norm.dim()
            )));
        }
        Ok(())
    }

    /// Encode, standardize, chunk.
    pub fn prepare(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<ChunkedSequence> {
        self.check_encoder(encoder)?;
        prepare(clip, encoder, &self.feature_norm)
    }

    pub fn classify_clip(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<ClassifierOutput> {
        classify(&self.prepare(clip, encoder)?, &self.params)
    }
}

/// Mean focal loss and accuracy over prepared inputs, dropout off.
fn evaluate_prepared(
    params: &ClassifierParams,
    inputs: &[(Array2<f64>, Label)],
    gamma: f64,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in inputs {
        let out = super::classify_matrix(x.view(), params)?;
        loss += focal_loss(out.probabilities, *y, gamma);
        correct += usize::from(out.predicted_label == *y);
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn prepared(
    clips: &[LabeledClip],
    encoder: &LoadedEncoder,
    norm: &FeatureNorm,
    augmentation: Option<&AugmentationConfig>,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Array2<f64>, Label)>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = derive_seed(seed, &[epoch as u64, i as u64]);
            let x = prepare_augmented(&c.clip, encoder, norm, augmentation, s)?;
            Ok((x.chunks, c.label()))
        })
        .collect()
}

/// Minimizes mean focal loss with Adam, keeping the parameters of the epoch
/// with the lowest validation loss.
pub fn train(
    train: &[LabeledClip],
    validation: &[LabeledClip],
    encoder: &LoadedEncoder,
    cfg: &TrainConfig,
) -> Result<(ScorerModel, TrainingLog)> {
    cfg.validate()?;
    require_both_classes(train, "train")?;
    require_both_classes(validation, "validation")?;
    require_speaker_disjoint(train, validation)?;

    let clean: Vec<Array2<f64>> = train
        .iter()
        .map(|c| Ok(encoder.encode(&c.clip)?.frames))
        .collect::<Result<_>>()?;
    let norm = FeatureNorm::fit(&clean)?;
    drop(clean);
    let k = encoder.config.chunk_size;
    let val_inputs = prepared(validation, encoder, &norm, None, 0, 0)?;
    let clean_train = if cfg.augmentation.is_none() {
        Some(prepared(train, encoder, &norm, None, 0, 0)?)
    } else {
        None
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[1]));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[2]));
    let input_dim = k * encoder.config.feature_dim;
    let mut params = ClassifierParams::new(input_dim, &cfg.classifier, &mut init_rng)?;
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(cfg.learning_rate);
    let aug_seed = derive_seed(cfg.rng_seed, &[3]);

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let owned;
        let inputs = match &clean_train {
            Some(v) => v,
            None => {
                owned = prepared(train, encoder, &norm, cfg.augmentation.as_ref(), aug_seed, epoch)?;
                &owned
            }
        };
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let (x, y) = &inputs[i];
                let mask = (params.dropout_p > 0.0)
                    .then(|| dropout_mask(params.hidden_state_dim(), params.dropout_p, &mut rng));
                let (l, p) = loss_and_grad(x.view(), *y, &params, cfg.focal_gamma, mask, &mut grads);
                loss_sum += l;
                correct += usize::from(predicted_label(p) == *y);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut params, &grads);
        }
        if !params.all_finite() {
            return Err(Error::Dataset(format!("training diverged at epoch {epoch}")));
        }
        let (val_loss, val_accuracy) = evaluate_prepared(&params, &val_inputs, cfg.focal_gamma)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / inputs.len() as f64,
            train_accuracy: correct as f64 / inputs.len() as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((
        ScorerModel {
            feature_norm: norm,
            chunk_size: k,
            params: best.1,
        },
        log,
    ))
}

/// Held-out metrics for a trained scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerEvaluation {
    pub samples: usize,
    pub accuracy: f64,
    pub focal_loss: f64,
    /// After applying `temperature`.
    pub ece: f64,
}

pub fn evaluate(
    model: &ScorerModel,
    clips: &[LabeledClip],
    encoder: &LoadedEncoder,
    gamma: f64,
    temperature: f64,
) -> Result<ScorerEvaluation> {
    if clips.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut probs = Vec::with_capacity(clips.len());
    let mut labels = Vec::with_capacity(clips.len());
    for c in clips {
        let out = model.classify_clip(&c.clip, encoder)?;
        loss += focal_loss(out.probabilities, c.label(), gamma);
        correct += usize::from(out.predicted_label == c.label());
        probs.push(calibrated_probabilities(out.logits, temperature));
        labels.push(c.label());
    }
    let n = clips.len() as f64;
    Ok(ScorerEvaluation {
        samples: clips.len(),
        accuracy: correct as f64 / n,
        focal_loss: loss / n,
        ece: expected_calibration_error(&probs, &labels, ECE_BINS),
    })
}
