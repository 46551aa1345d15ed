use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    backward, embed, forward, native_anchor, sample_triplets_by_label, triplet_loss, DistanceReading,
    EmbedTrace, EmbeddingConfig, EmbeddingNet, EmbeddingPoint, Triplet,
};
use crate::audio::{augment, AudioClip, AugmentationConfig};
use crate::dataset::{derive_seed, prepare, prepare_augmented, require_speaker_disjoint, FeatureNorm, LabeledClip};
use crate::encoder::{ChunkedSequence, LoadedEncoder};
use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::nn::{dropout_mask, Adam, ParamBlocks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub triplets_per_epoch: usize,
    pub validation_triplets: usize,
    pub rng_seed: u64,
    pub augmentation: Option<AugmentationConfig>,
    /// SNR of the noise used to measure the perturbation radius.
    pub perturbation_snr_db: f64,
    pub perturbation_trials: usize,
    pub embedding: EmbeddingConfig,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            margin: 1.0,
            max_epochs: 30,
            early_stop_patience: 10,
            triplets_per_epoch: 128,
            validation_triplets: 500,
            rng_seed: 0,
            augmentation: Some(AugmentationConfig::default()),
            perturbation_snr_db: 30.0,
            perturbation_trials: 3,
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl MetricTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.triplets_per_epoch == 0 || self.validation_triplets == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and triplet counts must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config("margin must be nonnegative".into()));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        self.embedding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Fraction of triplets with `d_ap + m ≤ d_an`.
    pub train_satisfaction: f64,
    pub val_loss: f64,
    pub val_satisfaction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub epochs: Vec<MetricEpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// With `m = 0` the hinge is satisfied by any embedding that does not
    /// separate the classes at all, so a near-zero loss means nothing.
    pub margin_degenerate: bool,
    pub warnings: Vec<String>,
}

/// Trained embedding with its anchor, all in raw (untranslated) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub feature_norm: FeatureNorm,
    pub chunk_size: usize,
    pub net: EmbeddingNet,
    pub anchor: EmbeddingPoint,
    pub margin: f64,
    /// Largest point displacement seen when validation clips were re-embedded
    /// with background noise at the configured SNR.
    pub perturbation_radius: f64,
}

impl MetricModel {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.input_dim() != self.chunk_size * self.feature_norm.dim() {
            return Err(Error::Dimension("embedding input width does not match the feature layout".into()));
        }
        if !self.anchor.is_finite() {
            return Err(Error::Checkpoint("anchor is not finite".into()));
        }
        Ok(())
    }

    pub fn prepare(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<ChunkedSequence> {
        if encoder.config.feature_dim != self.feature_norm.dim() || encoder.config.chunk_size != self.chunk_size {
            return Err(Error::Dimension(
                "encoder layout does not match the embedding model".into(),
            ));
        }
        prepare(clip, encoder, &self.feature_norm)
    }

    pub fn embed_clip(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<EmbeddingPoint> {
        embed(&self.prepare(clip, encoder)?, &self.net)
    }

    pub fn distance_reading(&self, clip: &AudioClip, encoder: &LoadedEncoder) -> Result<DistanceReading> {
        Ok(DistanceReading::new(self.embed_clip(clip, encoder)?, self.anchor))
    }
}

/// Loss and its gradient with respect to the anchor, positive and negative
/// points.
pub(crate) fn triplet_point_grads(p: [[f64; 2]; 3], margin: f64) -> (f64, [[f64; 2]; 3]) {
    let diff = |u: [f64; 2], v: [f64; 2]| [u[0] - v[0], u[1] - v[1]];
    let ap = diff(p[0], p[1]);
    let an = diff(p[0], p[2]);
    let d_ap = ap[0].hypot(ap[1]);
    let d_an = an[0].hypot(an[1]);
    let loss = triplet_loss(d_ap, d_an, margin);
    if loss <= 0.0 {
        return (0.0, [[0.0; 2]; 3]);
    }
    // unit vectors; a zero distance contributes the zero subgradient
    let unit = |v: [f64; 2], d: f64| if d > 0.0 { [v[0] / d, v[1] / d] } else { [0.0, 0.0] };
    let u_ap = unit(ap, d_ap);
    let u_an = unit(an, d_an);
    (
        loss,
        [
            [u_ap[0] - u_an[0], u_ap[1] - u_an[1]],
            [-u_ap[0], -u_ap[1]],
            [u_an[0], u_an[1]],
        ],
    )
}

fn satisfied(p: [[f64; 2]; 3], margin: f64) -> bool {
    let d = |u: [f64; 2], v: [f64; 2]| (u[0] - v[0]).hypot(u[1] - v[1]);
    d(p[0], p[1]) + margin <= d(p[0], p[2])
}

fn triplet_stats(points: &[[f64; 2]], triplets: &[Triplet], margin: f64) -> (f64, f64) {
    let mut loss = 0.0;
    let mut ok = 0usize;
    for t in triplets {
        let p = [points[t.anchor], points[t.positive], points[t.negative]];
        loss += triplet_point_grads(p, margin).0;
        ok += usize::from(satisfied(p, margin));
    }
    let n = triplets.len() as f64;
    (loss / n, ok as f64 / n)
}

fn embed_all(net: &EmbeddingNet, inputs: &[Array2<f64>]) -> Vec<[f64; 2]> {
    inputs.iter().map(|x| forward(x.view(), net, None).point).collect()
}

/// Trains the embedding with uniformly sampled triplets, keeping the epoch
/// with the lowest validation triplet loss, then fixes the native anchor
/// and measures the noise perturbation radius.
pub fn train_metric(
    train: &[LabeledClip],
    validation: &[LabeledClip],
    encoder: &LoadedEncoder,
    cfg: &MetricTrainConfig,
) -> Result<(MetricModel, MetricLog)> {
    cfg.validate()?;
    require_speaker_disjoint(train, validation)?;
    let train_labels: Vec<Label> = train.iter().map(|c| c.label()).collect();
    let val_labels: Vec<Label> = validation.iter().map(|c| c.label()).collect();
    // fail fast on populations too small to form triplets
    sample_triplets_by_label(&train_labels, 1, 0)?;
    let val_triplets = sample_triplets_by_label(&val_labels, cfg.validation_triplets, derive_seed(cfg.rng_seed, &[4]))?;

    let clean: Vec<Array2<f64>> = train
        .iter()
        .map(|c| Ok(encoder.encode(&c.clip)?.frames))
        .collect::<Result<_>>()?;
    let norm = FeatureNorm::fit(&clean)?;
    drop(clean);
    let k = encoder.config.chunk_size;
    let prep = |clips: &[LabeledClip], aug: Option<&AugmentationConfig>, epoch: usize| -> Result<Vec<Array2<f64>>> {
        clips
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let s = derive_seed(cfg.rng_seed, &[6, epoch as u64, i as u64]);
                Ok(prepare_augmented(&c.clip, encoder, &norm, aug, s)?.chunks)
            })
            .collect()
    };
    let val_inputs = prep(validation, None, 0)?;
    let clean_train = if cfg.augmentation.is_none() { Some(prep(train, None, 0)?) } else { None };

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[1]));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[2]));
    let mut net = EmbeddingNet::new(k * encoder.config.feature_dim, &cfg.embedding, &mut init_rng)?;
    let mut grads = net.zeros_like();
    let mut adam = Adam::new(cfg.learning_rate);

    let margin_degenerate = cfg.margin == 0.0;
    let mut log = MetricLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        margin_degenerate,
        warnings: Vec::new(),
    };
    if margin_degenerate {
        log.warnings.push(
            "margin is 0: the hinge is satisfied without separating the classes; loss values are not informative"
                .into(),
        );
    }
    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let owned;
        let inputs = match &clean_train {
            Some(v) => v,
            None => {
                owned = prep(train, cfg.augmentation.as_ref(), epoch)?;
                &owned
            }
        };
        let triplets = sample_triplets_by_label(
            &train_labels,
            cfg.triplets_per_epoch,
            derive_seed(cfg.rng_seed, &[5, epoch as u64]),
        )?;
        let mut loss_sum = 0.0;
        let mut ok = 0usize;
        for batch in triplets.chunks(cfg.batch_size) {
            grads.zero();
            // one forward pass (and one dropout mask) per distinct clip
            let mut traces: BTreeMap<usize, (EmbedTrace, [f64; 2])> = BTreeMap::new();
            for t in batch {
                for i in [t.anchor, t.positive, t.negative] {
                    if let std::collections::btree_map::Entry::Vacant(e) = traces.entry(i) {
                        let mask = (net.dropout_p > 0.0)
                            .then(|| dropout_mask(net.projection_dim(), net.dropout_p, &mut rng));
                        e.insert((forward(inputs[i].view(), &net, mask), [0.0; 2]));
                    }
                }
            }
            for t in batch {
                let p = [traces[&t.anchor].0.point, traces[&t.positive].0.point, traces[&t.negative].0.point];
                let (l, g) = triplet_point_grads(p, cfg.margin);
                loss_sum += l;
                ok += usize::from(satisfied(p, cfg.margin));
                for (i, gi) in [t.anchor, t.positive, t.negative].into_iter().zip(g) {
                    let acc = &mut traces.get_mut(&i).expect("traced").1;
                    acc[0] += gi[0];
                    acc[1] += gi[1];
                }
            }
            for (i, (trace, d)) in &traces {
                if d[0] != 0.0 || d[1] != 0.0 {
                    backward(inputs[*i].view(), &net, trace, *d, &mut grads);
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut net, &grads);
        }
        if !net.all_finite() {
            return Err(Error::Dataset(format!("metric training diverged at epoch {epoch}")));
        }
        let (val_loss, val_satisfaction) = triplet_stats(&embed_all(&net, &val_inputs), &val_triplets, cfg.margin);
        log.epochs.push(MetricEpochLog {
            epoch,
            train_loss: loss_sum / triplets.len() as f64,
            train_satisfaction: ok as f64 / triplets.len() as f64,
            val_loss,
            val_satisfaction,
        });
        if val_loss < best.0 {
            best = (val_loss, net.clone());
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
    let net = best.1;

    // anchor over native training clips only, clean audio
    let native_inputs: Vec<Array2<f64>> = train
        .iter()
        .filter(|c| c.label() == Label::Native)
        .map(|c| Ok(prepare(&c.clip, encoder, &norm)?.chunks))
        .collect::<Result<_>>()?;
    let native_points: Vec<EmbeddingPoint> = embed_all(&net, &native_inputs)
        .into_iter()
        .map(|[x, y]| EmbeddingPoint { x, y })
        .collect();
    let anchor = native_anchor(&native_points)?;

    let noise_only = AugmentationConfig {
        noise_snr_db_range: Some([cfg.perturbation_snr_db; 2]),
        ..AugmentationConfig::identity()
    };
    let val_points = embed_all(&net, &val_inputs);
    let mut radius = 0.0f64;
    for (i, c) in validation.iter().enumerate() {
        for trial in 0..cfg.perturbation_trials {
            let noisy = augment(&c.clip, &noise_only.with_seed(derive_seed(cfg.rng_seed, &[7, i as u64, trial as u64])))?;
            let x = prepare(&noisy, encoder, &norm)?.chunks;
            let [px, py] = forward(x.view(), &net, None).point;
            radius = radius.max((px - val_points[i][0]).hypot(py - val_points[i][1]));
        }
    }

    Ok((
        MetricModel {
            feature_norm: norm,
            chunk_size: k,
            net,
            anchor,
            margin: cfg.margin,
            perturbation_radius: radius,
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvaluation {
    pub samples: usize,
    pub triplets: usize,
    pub satisfaction: f64,
    pub mean_loss: f64,
    /// Mean distance over pairs of distinct non-native clips.
    pub mean_intra_non_native: f64,
    /// Mean distance over (non-native, native) pairs.
    pub mean_cross_class: f64,
}

/// Held-out triplet satisfaction and class-distance summary.
pub fn evaluate_metric(
    model: &MetricModel,
    clips: &[LabeledClip],
    encoder: &LoadedEncoder,
    triplets: usize,
    seed: u64,
) -> Result<MetricEvaluation> {
    let labels: Vec<Label> = clips.iter().map(|c| c.label()).collect();
    let sampled = sample_triplets_by_label(&labels, triplets, seed)?;
    let points: Vec<[f64; 2]> = clips
        .iter()
        .map(|c| {
            let p = model.embed_clip(&c.clip, encoder)?;
            Ok([p.x, p.y])
        })
        .collect::<Result<_>>()?;
    let (mean_loss, satisfaction) = triplet_stats(&points, &sampled, model.margin);
    let d = |a: usize, b: usize| (points[a][0] - points[b][0]).hypot(points[a][1] - points[b][1]);
    let nn: Vec<usize> = (0..clips.len()).filter(|&i| labels[i] == Label::NonNative).collect();
    let na: Vec<usize> = (0..clips.len()).filter(|&i| labels[i] == Label::Native).collect();
    let (mut intra, mut n_intra) = (0.0, 0usize);
    for (x, &a) in nn.iter().enumerate() {
        for &b in &nn[x + 1..] {
            intra += d(a, b);
            n_intra += 1;
        }
    }
    let (mut cross, mut n_cross) = (0.0, 0usize);
    for &a in &nn {
        for &b in &na {
            cross += d(a, b);
            n_cross += 1;
        }
    }
    Ok(MetricEvaluation {
        samples: clips.len(),
        triplets: sampled.len(),
        satisfaction,
        mean_loss,
        mean_intra_non_native: intra / n_intra as f64,
        mean_cross_class: cross / n_cross as f64,
    })
}
