//! Learned distance to native speech.
//!
//! A recurrent encoder (mean-pooled over chunks) feeds a 512-unit ReLU layer.
//! That layer's output is scaled to unit length, mapped linearly to the plane
//! and multiplied by a fixed `output_scale`, so the reachable spread of the
//! plane is set by the scale rather than by how far training has grown the
//! weights. Training pulls non-native utterances
//! together and pushes native ones at least `m` further away:
//!
//! ```text
//! L = max(0, ‖f(a) − f(p)‖ − ‖f(a) − f(n)‖ + m)
//! ```
//!
//! The native anchor is the mean point of the native training clips, and
//! readings are reported with the anchor moved to the origin.

mod train;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use train::{evaluate_metric, train_metric, MetricEpochLog, MetricEvaluation, MetricLog, MetricModel, MetricTrainConfig};

use crate::encoder::ChunkedSequence;
use crate::error::{Error, Result};
use crate::manifest::{Label, UtteranceRecord};
use crate::nn::{uniform_matrix, uniform_vector, ParamBlocks, Recurrent, RecurrentTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub recurrent_hidden_dim: usize,
    pub projection_hidden_dim: usize,
    pub output_dim: usize,
    pub bidirectional: bool,
    pub dropout_p: f64,
    /// Multiplies the linear map applied to the unit-length hidden vector.
    pub output_scale: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            recurrent_hidden_dim: 128,
            projection_hidden_dim: 512,
            output_dim: 2,
            bidirectional: true,
            dropout_p: 0.5,
            output_scale: 10.0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recurrent_hidden_dim == 0 || self.projection_hidden_dim == 0 {
            return Err(Error::Config("hidden dimensions must be positive".into()));
        }
        if self.output_dim != 2 {
            return Err(Error::Config("the embedding plane is two-dimensional".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Config("output_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNet {
    pub recurrent: Recurrent,
    /// `P × h`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `2 × P`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub dropout_p: f64,
    pub output_scale: f64,
}

impl EmbeddingNet {
    pub fn new(input_dim: usize, cfg: &EmbeddingConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let recurrent = Recurrent::new(input_dim, cfg.recurrent_hidden_dim, cfg.bidirectional, rng);
        let h = recurrent.output_dim();
        let p = cfg.projection_hidden_dim;
        let b1 = 1.0 / (h as f64).sqrt();
        let b2 = 1.0 / (p as f64).sqrt();
        Ok(Self {
            w1: uniform_matrix(p, h, b1, rng),
            b1: uniform_vector(p, b1, rng),
            w2: uniform_matrix(cfg.output_dim, p, b2, rng),
            b2: uniform_vector(cfg.output_dim, b2, rng),
            recurrent,
            dropout_p: cfg.dropout_p,
            output_scale: cfg.output_scale,
        })
    }

    pub fn zeros(input_dim: usize, cfg: &EmbeddingConfig) -> Self {
        let recurrent = Recurrent::zeros(input_dim, cfg.recurrent_hidden_dim, cfg.bidirectional);
        let h = recurrent.output_dim();
        Self {
            w1: Array2::zeros((cfg.projection_hidden_dim, h)),
            b1: Array1::zeros(cfg.projection_hidden_dim),
            w2: Array2::zeros((cfg.output_dim, cfg.projection_hidden_dim)),
            b2: Array1::zeros(cfg.output_dim),
            recurrent,
            dropout_p: cfg.dropout_p,
            output_scale: cfg.output_scale,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            recurrent: self.recurrent.zeros_like(),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.len()),
            dropout_p: self.dropout_p,
            output_scale: self.output_scale,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.recurrent.input_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.ncols() == self.recurrent.output_dim()
            && self.b1.len() == self.w1.nrows()
            && self.w2.dim() == (2, self.w1.nrows())
            && self.b2.len() == 2;
        if !ok {
            return Err(Error::Dimension("embedding parameter shapes are inconsistent".into()));
        }
        if !self.all_finite() || !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Checkpoint("embedding parameters are not finite".into()));
        }
        Ok(())
    }
}

impl ParamBlocks for EmbeddingNet {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = self.recurrent.blocks();
        out.push(("w1".into(), self.w1.view().into_dyn()));
        out.push(("b1".into(), self.b1.view().into_dyn()));
        out.push(("w2".into(), self.w2.view().into_dyn()));
        out.push(("b2".into(), self.b2.view().into_dyn()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.recurrent.blocks_mut();
        out.push(self.w1.view_mut().into_dyn());
        out.push(self.b1.view_mut().into_dyn());
        out.push(self.w2.view_mut().into_dyn());
        out.push(self.b2.view_mut().into_dyn());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub x: f64,
    pub y: f64,
}

impl EmbeddingPoint {
    pub const ORIGIN: EmbeddingPoint = EmbeddingPoint { x: 0.0, y: 0.0 };

    pub fn distance(&self, other: &EmbeddingPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn minus(&self, other: &EmbeddingPoint) -> EmbeddingPoint {
        EmbeddingPoint {
            x: self.x - other.x,
            y: self.y - other.y,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

pub(crate) struct EmbedTrace {
    rec: RecurrentTrace,
    pooled: Array1<f64>,
    pre: Array1<f64>,
    /// ReLU output over its (floored) length.
    unit: Array1<f64>,
    norm: f64,
    /// `unit` after dropout.
    hidden: Array1<f64>,
    mask: Option<Array1<f64>>,
    pub point: [f64; 2],
}

const MIN_NORM: f64 = 1e-6;

pub(crate) fn forward(x: ArrayView2<'_, f64>, net: &EmbeddingNet, mask: Option<Array1<f64>>) -> EmbedTrace {
    let rec = net.recurrent.forward(x);
    let pooled = rec.states.mean_axis(Axis(0)).expect("nonempty sequence");
    let pre = net.w1.dot(&pooled) + &net.b1;
    let relu = pre.mapv(|v| v.max(0.0));
    let norm = relu.dot(&relu).sqrt().max(MIN_NORM);
    let unit = relu / norm;
    let mut hidden = unit.clone();
    if let Some(m) = &mask {
        hidden *= m;
    }
    let y = net.w2.dot(&hidden) * net.output_scale + &net.b2;
    EmbedTrace {
        rec,
        pooled,
        pre,
        unit,
        norm,
        hidden,
        mask,
        point: [y[0], y[1]],
    }
}

pub(crate) fn backward(
    x: ArrayView2<'_, f64>,
    net: &EmbeddingNet,
    trace: &EmbedTrace,
    d_point: [f64; 2],
    grads: &mut EmbeddingNet,
) {
    let dy = Array1::from(d_point.to_vec());
    grads.b2 += &dy;
    let s = net.output_scale;
    grads.w2 += &(outer(&dy, &trace.hidden) * s);
    let mut d_unit = net.w2.t().dot(&dy) * s;
    if let Some(m) = &trace.mask {
        d_unit *= m;
    }
    // through r / max(‖r‖, floor); below the floor the map is linear
    let d_relu = if trace.norm > MIN_NORM {
        let radial = trace.unit.dot(&d_unit);
        (d_unit - &trace.unit * radial) / trace.norm
    } else {
        d_unit / MIN_NORM
    };
    let d_pre: Array1<f64> = d_relu
        .iter()
        .zip(&trace.pre)
        .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
        .collect();
    grads.b1 += &d_pre;
    grads.w1 += &outer(&d_pre, &trace.pooled);
    let d_pooled = net.w1.t().dot(&d_pre);
    let t = x.nrows();
    let d_states = Array2::from_shape_fn((t, d_pooled.len()), |(_, j)| d_pooled[j] / t as f64);
    net.recurrent
        .backward(x, &trace.rec, d_states.view(), &mut grads.recurrent);
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view()
        .insert_axis(Axis(1))
        .dot(&b.view().insert_axis(Axis(0)))
}

/// Inference embedding, dropout off.
pub fn embed(chunks: &ChunkedSequence, net: &EmbeddingNet) -> Result<EmbeddingPoint> {
    embed_matrix(chunks.view(), net)
}

pub fn embed_matrix(x: ArrayView2<'_, f64>, net: &EmbeddingNet) -> Result<EmbeddingPoint> {
    if x.nrows() == 0 {
        return Err(Error::Dimension("empty chunk sequence".into()));
    }
    if x.ncols() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "chunks have width {}, embedding net expects {}",
            x.ncols(),
            net.input_dim()
        )));
    }
    let [px, py] = forward(x, net, None).point;
    Ok(EmbeddingPoint { x: px, y: py })
}

/// `max(0, d_ap − d_an + m)`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Indices into the slice the triplet was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn records<'a>(&self, records: &'a [UtteranceRecord]) -> [&'a UtteranceRecord; 3] {
        [&records[self.anchor], &records[self.positive], &records[self.negative]]
    }
}

/// Uniform over valid triplets: anchor and positive are distinct
/// non-native items, the negative is native.
pub fn sample_triplets_by_label(labels: &[Label], count: usize, rng_seed: u64) -> Result<Vec<Triplet>> {
    let non_native: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::NonNative).collect();
    let native: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Native).collect();
    if non_native.len() < 2 || native.is_empty() {
        return Err(Error::Dataset(format!(
            "triplets need at least 2 non-native and 1 native clip, have {} and {}",
            non_native.len(),
            native.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..count)
        .map(|_| {
            let a = rng.random_range(0..non_native.len());
            // draw from the remaining n − 1 and skip over the anchor
            let mut p = rng.random_range(0..non_native.len() - 1);
            if p >= a {
                p += 1;
            }
            Triplet {
                anchor: non_native[a],
                positive: non_native[p],
                negative: native[rng.random_range(0..native.len())],
            }
        })
        .collect())
}

pub fn sample_triplets(records: &[UtteranceRecord], count: usize, rng_seed: u64) -> Result<Vec<Triplet>> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    sample_triplets_by_label(&labels, count, rng_seed)
}

/// Coordinate-wise mean.
pub fn native_anchor(points: &[EmbeddingPoint]) -> Result<EmbeddingPoint> {
    if points.is_empty() {
        return Err(Error::Dataset("native anchor needs at least one native clip".into()));
    }
    let n = points.len() as f64;
    Ok(EmbeddingPoint {
        x: points.iter().map(|p| p.x).sum::<f64>() / n,
        y: points.iter().map(|p| p.y).sum::<f64>() / n,
    })
}

/// A learner point in display coordinates, where the anchor is the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReading {
    pub user_point: EmbeddingPoint,
    pub anchor_point: EmbeddingPoint,
    pub distance: f64,
}

impl DistanceReading {
    pub fn new(raw_user: EmbeddingPoint, raw_anchor: EmbeddingPoint) -> Self {
        let user_point = raw_user.minus(&raw_anchor);
        Self {
            user_point,
            anchor_point: EmbeddingPoint::ORIGIN,
            distance: user_point.distance(&EmbeddingPoint::ORIGIN),
        }
    }
}
