//! Attention-pooled recurrent classifier.
//!
//! ```text
//! H = BiLSTM(z′)                  T′ × h
//! M = tanh(W_A1 Hᵀ)               a × T′
//! α = softmax(W_A2 M)             T′
//! c = Hᵀ α                        h
//! p = softmax(W_S c + b_S)        2
//! ```
//!
//! Dropout (inverted, training only) is applied to the pooled vector `c`.

mod calibration;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use calibration::{
    calibrated_probabilities, expected_calibration_error, fit_calibration, fit_temperature,
    CalibrationModel, ECE_BINS, TEMPERATURE_RANGE,
};
pub use train::{evaluate, train, EpochLog, ScorerEvaluation, ScorerModel, TrainConfig, TrainingLog};

use crate::audio::AudioClip;
use crate::encoder::{ChunkedSequence, LoadedEncoder};
use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::nn::{softmax, uniform_matrix, uniform_vector, ParamBlocks, Recurrent, RecurrentTrace};

/// Probability clamp inside the focal log.
pub const FOCAL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub recurrent_hidden_dim: usize,
    pub attention_hidden_dim: usize,
    pub bidirectional: bool,
    pub dropout_p: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            recurrent_hidden_dim: 128,
            attention_hidden_dim: 32,
            bidirectional: true,
            dropout_p: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recurrent_hidden_dim == 0 || self.attention_hidden_dim == 0 {
            return Err(Error::Config("hidden dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub recurrent: Recurrent,
    /// `a × h`.
    pub w_a1: Array2<f64>,
    /// `1 × a`.
    pub w_a2: Array2<f64>,
    /// `2 × h`.
    pub w_s: Array2<f64>,
    pub b_s: Array1<f64>,
    pub dropout_p: f64,
}

impl ClassifierParams {
    /// Uniform ±1/√fan_in initialization for every block.
    pub fn new(input_dim: usize, cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let recurrent = Recurrent::new(input_dim, cfg.recurrent_hidden_dim, cfg.bidirectional, rng);
        let h = recurrent.output_dim();
        let a = cfg.attention_hidden_dim;
        let bh = 1.0 / (h as f64).sqrt();
        let ba = 1.0 / (a as f64).sqrt();
        Ok(Self {
            w_a1: uniform_matrix(a, h, bh, rng),
            w_a2: uniform_matrix(1, a, ba, rng),
            w_s: uniform_matrix(2, h, bh, rng),
            b_s: uniform_vector(2, bh, rng),
            recurrent,
            dropout_p: cfg.dropout_p,
        })
    }

    pub fn zeros(input_dim: usize, cfg: &ClassifierConfig) -> Self {
        let recurrent = Recurrent::zeros(input_dim, cfg.recurrent_hidden_dim, cfg.bidirectional);
        let h = recurrent.output_dim();
        Self {
            w_a1: Array2::zeros((cfg.attention_hidden_dim, h)),
            w_a2: Array2::zeros((1, cfg.attention_hidden_dim)),
            w_s: Array2::zeros((2, h)),
            b_s: Array1::zeros(2),
            recurrent,
            dropout_p: cfg.dropout_p,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            recurrent: self.recurrent.zeros_like(),
            w_a1: Array2::zeros(self.w_a1.raw_dim()),
            w_a2: Array2::zeros(self.w_a2.raw_dim()),
            w_s: Array2::zeros(self.w_s.raw_dim()),
            b_s: Array1::zeros(2),
            dropout_p: self.dropout_p,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.recurrent.input_dim()
    }

    pub fn hidden_state_dim(&self) -> usize {
        self.recurrent.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_state_dim();
        let a = self.w_a1.nrows();
        let ok = self.w_a1.ncols() == h
            && self.w_a2.dim() == (1, a)
            && self.w_s.dim() == (2, h)
            && self.b_s.len() == 2;
        if !ok {
            return Err(Error::Dimension("classifier parameter shapes are inconsistent".into()));
        }
        if !self.all_finite() {
            return Err(Error::Checkpoint("classifier parameters are not finite".into()));
        }
        Ok(())
    }
}

impl ParamBlocks for ClassifierParams {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = self.recurrent.blocks();
        out.push(("w_a1".into(), self.w_a1.view().into_dyn()));
        out.push(("w_a2".into(), self.w_a2.view().into_dyn()));
        out.push(("w_s".into(), self.w_s.view().into_dyn()));
        out.push(("b_s".into(), self.b_s.view().into_dyn()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.recurrent.blocks_mut();
        out.push(self.w_a1.view_mut().into_dyn());
        out.push(self.w_a2.view_mut().into_dyn());
        out.push(self.w_s.view_mut().into_dyn());
        out.push(self.b_s.view_mut().into_dyn());
        out
    }
}

/// Per-chunk attention weights α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionVector {
    pub weights: Vec<f64>,
}

impl AttentionVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub logits: [f64; 2],
    pub probabilities: [f64; 2],
    pub predicted_label: Label,
    pub attention: AttentionVector,
    /// `H`, `T′ × h`.
    pub hidden_states: Array2<f64>,
    /// `c = Hᵀα`.
    pub pooled: Array1<f64>,
}

/// `(M, α)` for hidden states `h` (`T′ × hidden`).
fn attention_parts(h: ArrayView2<'_, f64>, w_a1: &Array2<f64>, w_a2: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    // stored as T′ × a, the transpose of M
    let m = h.dot(&w_a1.t()).mapv(f64::tanh);
    let scores = m.dot(&w_a2.row(0));
    (m, softmax(scores.as_slice().expect("contiguous")))
}

pub fn attention_weights(h: ArrayView2<'_, f64>, params: &ClassifierParams) -> Result<AttentionVector> {
    if h.nrows() == 0 {
        return Err(Error::Dimension("attention over an empty sequence".into()));
    }
    if h.ncols() != params.w_a1.ncols() || params.w_a2.dim() != (1, params.w_a1.nrows()) {
        return Err(Error::Dimension(format!(
            "hidden states have width {}, W_A1 is {}×{}, W_A2 is {}×{}",
            h.ncols(),
            params.w_a1.nrows(),
            params.w_a1.ncols(),
            params.w_a2.nrows(),
            params.w_a2.ncols()
        )));
    }
    Ok(AttentionVector {
        weights: attention_parts(h, &params.w_a1, &params.w_a2).1,
    })
}

/// `c = Hᵀα`, the attention-weighted sum of hidden states.
pub fn pool(h: ArrayView2<'_, f64>, alpha: &AttentionVector) -> Array1<f64> {
    h.t().dot(&ArrayView1::from(&alpha.weights[..]))
}

/// Argmax with ties going to index 0 (native).
pub fn predicted_label(probabilities: [f64; 2]) -> Label {
    if probabilities[0] >= probabilities[1] {
        Label::Native
    } else {
        Label::NonNative
    }
}

fn head(params: &ClassifierParams, c: ArrayView1<'_, f64>) -> ([f64; 2], [f64; 2]) {
    let z = params.w_s.dot(&c) + &params.b_s;
    let logits = [z[0], z[1]];
    let p = softmax(&logits);
    (logits, [p[0], p[1]])
}

fn check_input(x: ArrayView2<'_, f64>, params: &ClassifierParams) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Dimension("empty chunk sequence".into()));
    }
    if x.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "chunks have width {}, classifier expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Inference forward pass; dropout is off.
pub fn classify_matrix(x: ArrayView2<'_, f64>, params: &ClassifierParams) -> Result<ClassifierOutput> {
    check_input(x, params)?;
    let hidden_states = params.recurrent.forward(x).states;
    let attention = attention_weights(hidden_states.view(), params)?;
    let pooled = pool(hidden_states.view(), &attention);
    let (logits, probabilities) = head(params, pooled.view());
    Ok(ClassifierOutput {
        logits,
        probabilities,
        predicted_label: predicted_label(probabilities),
        attention,
        hidden_states,
        pooled,
    })
}

pub fn classify(chunks: &ChunkedSequence, params: &ClassifierParams) -> Result<ClassifierOutput> {
    classify_matrix(chunks.view(), params)
}

/// `−(1 − p)^γ · ln p` for `p = probabilities[label]`, with `p` clamped to
/// at least [`FOCAL_EPSILON`].
pub fn focal_loss(probabilities: [f64; 2], label: Label, gamma: f64) -> f64 {
    let p = probabilities[label.index()].clamp(FOCAL_EPSILON, 1.0);
    let loss = -(1.0 - p).powf(gamma) * p.ln();
    // −0 for p = 1
    loss.max(0.0)
}

/// d(focal loss)/d(logits).
pub fn focal_loss_grad_logits(probabilities: [f64; 2], label: Label, gamma: f64) -> [f64; 2] {
    let y = label.index();
    let q = probabilities[y];
    if q < FOCAL_EPSILON {
        // flat region of the clamp
        return [0.0, 0.0];
    }
    let one_minus = 1.0 - q;
    // d/dz_j = g · (δ_jy − p_j) with g = q · dL/dq
    let modulating = if gamma == 0.0 || one_minus <= 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0) * q * q.ln()
    };
    let g = modulating - one_minus.powf(gamma);
    let mut out = [0.0; 2];
    for (j, o) in out.iter_mut().enumerate() {
        let delta = if j == y { 1.0 } else { 0.0 };
        *o = g * (delta - probabilities[j]);
    }
    out
}

/// Everything the backward pass needs from one training forward pass.
pub(crate) struct ForwardTrace {
    rec: RecurrentTrace,
    m: Array2<f64>,
    alpha: Vec<f64>,
    c_dropped: Array1<f64>,
    mask: Option<Array1<f64>>,
    pub probabilities: [f64; 2],
}

pub(crate) fn forward_train(
    x: ArrayView2<'_, f64>,
    params: &ClassifierParams,
    mask: Option<Array1<f64>>,
) -> ForwardTrace {
    let rec = params.recurrent.forward(x);
    let (m, alpha) = attention_parts(rec.states.view(), &params.w_a1, &params.w_a2);
    let c = rec.states.t().dot(&ArrayView1::from(&alpha[..]));
    let c_dropped = match &mask {
        Some(mk) => &c * mk,
        None => c,
    };
    let (_, probabilities) = head(params, c_dropped.view());
    ForwardTrace {
        rec,
        m,
        alpha,
        c_dropped,
        mask,
        probabilities,
    }
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
pub(crate) fn backward(
    x: ArrayView2<'_, f64>,
    params: &ClassifierParams,
    trace: &ForwardTrace,
    d_logits: [f64; 2],
    grads: &mut ClassifierParams,
) {
    let dz = Array1::from(d_logits.to_vec());
    let h = &trace.rec.states;
    grads.b_s += &dz;
    grads.w_s += &outer(&dz, &trace.c_dropped);
    let mut dc = params.w_s.t().dot(&dz);
    if let Some(mk) = &trace.mask {
        dc *= mk;
    }
    // c = Hᵀα
    let alpha = ArrayView1::from(&trace.alpha[..]);
    let mut d_h = outer(&alpha.to_owned(), &dc);
    let d_alpha = h.dot(&dc);
    let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_scores: Array1<f64> = alpha
        .iter()
        .zip(&d_alpha)
        .map(|(a, d)| a * (d - weighted))
        .collect();
    // scores = M_T · w_a2
    grads.w_a2.row_mut(0).scaled_add(1.0, &trace.m.t().dot(&d_scores));
    let d_m = outer(&d_scores, &params.w_a2.row(0).to_owned());
    let d_pre = &d_m * &trace.m.mapv(|v| 1.0 - v * v);
    grads.w_a1 += &d_pre.t().dot(h);
    d_h += &d_pre.dot(&params.w_a1);
    params
        .recurrent
        .backward(x, &trace.rec, d_h.view(), &mut grads.recurrent);
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view()
        .insert_axis(Axis(1))
        .dot(&b.view().insert_axis(Axis(0)))
}

/// Focal loss of one example and its gradient, accumulated into `grads`.
/// Returns the loss and the (dropped-out) forward probabilities. With
/// `mask = None` the loss is `focal_loss(classify_matrix(x).probabilities)`.
pub fn loss_and_grad(
    x: ArrayView2<'_, f64>,
    label: Label,
    params: &ClassifierParams,
    gamma: f64,
    mask: Option<Array1<f64>>,
    grads: &mut ClassifierParams,
) -> (f64, [f64; 2]) {
    let trace = forward_train(x, params, mask);
    let loss = focal_loss(trace.probabilities, label, gamma);
    let d_logits = focal_loss_grad_logits(trace.probabilities, label, gamma);
    backward(x, params, &trace, d_logits, grads);
    (loss, trace.probabilities)
}

/// Calibrated nativeness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronunciationScore {
    /// Calibrated P(native).
    pub p_native: f64,
    /// `round(100 · p_native)`.
    pub display: u8,
}

impl PronunciationScore {
    pub fn from_logits(logits: [f64; 2], temperature: f64) -> Self {
        let p = calibrated_probabilities(logits, temperature)[Label::Native.index()];
        Self {
            p_native: p,
            display: (100.0 * p).round().clamp(0.0, 100.0) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub score: PronunciationScore,
    pub output: ClassifierOutput,
    pub chunk_stride_s: f64,
}

impl ScoreResult {
    pub fn attention(&self) -> &AttentionVector {
        &self.output.attention
    }
}

/// Classifies a canonical clip and applies the calibration temperature.
pub fn score(
    clip: &AudioClip,
    model: &ScorerModel,
    calibration: &CalibrationModel,
    encoder: &LoadedEncoder,
) -> Result<ScoreResult> {
    let chunks = model.prepare(clip, encoder)?;
    let output = classify(&chunks, &model.params)?;
    Ok(ScoreResult {
        score: PronunciationScore::from_logits(output.logits, calibration.temperature),
        output,
        chunk_stride_s: chunks.chunk_stride_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn tiny(rng: &mut ChaCha8Rng) -> ClassifierParams {
        let cfg = ClassifierConfig {
            recurrent_hidden_dim: 3,
            attention_hidden_dim: 5,
            bidirectional: true,
            dropout_p: 0.5,
        };
        ClassifierParams::new(7, &cfg, rng).unwrap()
    }

    #[test]
    fn uniform_attention_when_w_a2_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = tiny(&mut rng);
        p.w_a2.fill(0.0);
        let h = uniform_matrix(4, 6, 1.0, &mut rng);
        let a = attention_weights(h.view(), &p).unwrap();
        assert!(a.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let one = attention_weights(h.slice(ndarray::s![..1, ..]), &p).unwrap();
        assert_eq!(one.weights, vec![1.0]);
    }

    #[test]
    fn attention_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = tiny(&mut rng);
        p.w_a1 = array![[0.5, -1.0], [2.0, 0.25]];
        p.w_a2 = array![[1.5, -0.5]];
        let h = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let a = attention_weights(h.view(), &p).unwrap();
        // row t: e_t = 1.5·tanh(0.5h0 − h1) − 0.5·tanh(2h0 + 0.25h1)
        let e = [
            1.5 * 0.5f64.tanh() - 0.5 * 2.0f64.tanh(),
            1.5 * (-1.0f64).tanh() - 0.5 * 0.25f64.tanh(),
            1.5 * (-0.5f64).tanh() - 0.5 * 2.25f64.tanh(),
        ];
        let z: f64 = e.iter().map(|v| v.exp()).sum();
        for (w, ei) in a.weights.iter().zip(e) {
            assert!((w - ei.exp() / z).abs() < 1e-12);
        }
        assert!(attention_weights(array![[1.0, 2.0, 3.0]].view(), &p).is_err());
    }

    #[test]
    fn zero_head_ties_to_native() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = tiny(&mut rng);
        p.w_s.fill(0.0);
        p.b_s.fill(0.0);
        let x = uniform_matrix(4, 7, 1.0, &mut rng);
        let out = classify_matrix(x.view(), &p).unwrap();
        assert_eq!(out.probabilities, [0.5, 0.5]);
        assert_eq!(out.predicted_label, Label::Native);
        assert!(classify_matrix(uniform_matrix(4, 6, 1.0, &mut rng).view(), &p).is_err());
    }

    #[test]
    fn stubbed_head_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = tiny(&mut rng);
        p.w_s.fill(0.0);
        p.b_s = array![3f64.ln(), 0.0];
        let x = uniform_matrix(3, 7, 1.0, &mut rng);
        let out = classify_matrix(x.view(), &p).unwrap();
        assert!((out.probabilities[0] - 0.75).abs() < 1e-12);
        assert!((out.probabilities[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pooled_vector_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = tiny(&mut rng);
        let x = uniform_matrix(6, 7, 1.0, &mut rng);
        let out = classify_matrix(x.view(), &p).unwrap();
        for j in 0..out.pooled.len() {
            let mut s = 0.0;
            for t in 0..6 {
                s += out.attention.weights[t] * out.hidden_states[[t, j]];
            }
            assert!((s - out.pooled[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_values() {
        for g in [0.0, 0.5, 2.0, 5.0] {
            assert_eq!(focal_loss([1.0, 0.0], Label::Native, g), 0.0);
        }
        assert!((focal_loss([0.5, 0.5], Label::NonNative, 0.0) - 2f64.ln()).abs() < 1e-15);
        let expected = 0.01 * -(0.9f64.ln());
        assert!((focal_loss([0.9, 0.1], Label::Native, 2.0) - expected).abs() < 1e-15);
        assert!((focal_loss([1.0, 0.0], Label::NonNative, 0.0) - -(FOCAL_EPSILON.ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_gradient_matches_finite_difference_in_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let z = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let gamma = rng.random_range(0.0..4.0);
            let label = Label::from_index(rng.random_range(0..2));
            let probs = |z: [f64; 2]| {
                let p = softmax(&z);
                [p[0], p[1]]
            };
            let g = focal_loss_grad_logits(probs(z), label, gamma);
            let eps = 1e-6;
            for j in 0..2 {
                let mut up = z;
                up[j] += eps;
                let mut down = z;
                down[j] -= eps;
                let num = (focal_loss(probs(up), label, gamma) - focal_loss(probs(down), label, gamma))
                    / (2.0 * eps);
                assert!((num - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{num} vs {}", g[j]);
            }
        }
    }

    fn loss(x: &Array2<f64>, p: &ClassifierParams, mask: &Array1<f64>, label: Label) -> f64 {
        let trace = forward_train(x.view(), p, Some(mask.clone()));
        focal_loss(trace.probabilities, label, 2.0)
    }

    #[test]
    fn full_loss_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ClassifierConfig {
            recurrent_hidden_dim: 4,
            attention_hidden_dim: 6,
            bidirectional: true,
            dropout_p: 0.5,
        };
        let mut p = ClassifierParams::new(5, &cfg, &mut rng).unwrap();
        // a head large enough that the focal modulation matters
        p.w_s.mapv_inplace(|v| v * 6.0);
        let x = uniform_matrix(4, 5, 1.5, &mut rng);
        let mask = array![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0];
        for label in Label::ALL {
            let mut grads = p.zeros_like();
            loss_and_grad(x.view(), label, &p, 2.0, Some(mask.clone()), &mut grads);
            let names: Vec<String> = grads.blocks().into_iter().map(|(n, _)| n).collect();
            let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|(_, b)| b.iter().copied().collect()).collect();
            let eps = 1e-6;
            for (bi, a_block) in analytic.iter().enumerate() {
                let mut diff = 0.0;
                let mut norm_a = 0.0;
                let mut norm_n = 0.0;
                for (idx, &a) in a_block.iter().enumerate() {
                    let mut probe = p.clone();
                    *probe.blocks_mut()[bi].iter_mut().nth(idx).unwrap() += eps;
                    let up = loss(&x, &probe, &mask, label);
                    *probe.blocks_mut()[bi].iter_mut().nth(idx).unwrap() -= 2.0 * eps;
                    let down = loss(&x, &probe, &mask, label);
                    let n = (up - down) / (2.0 * eps);
                    diff += (n - a) * (n - a);
                    norm_a += a * a;
                    norm_n += n * n;
                }
                let rel = diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12);
                assert!(rel < 1e-4, "{}: relative error {rel}", names[bi]);
            }
        }
    }

    #[test]
    fn score_from_logits() {
        let s = PronunciationScore::from_logits([0.0, 0.0], 3.7);
        assert_eq!(s.p_native, 0.5);
        assert_eq!(s.display, 50);
        let s = PronunciationScore::from_logits([2.0, 0.0], 2.0);
        assert!((s.p_native - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(s.display, 73);
    }
}
