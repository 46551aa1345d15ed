//! Temperature scaling fitted on validation negative log-likelihood.

use serde::{Deserialize, Serialize};

use super::{classify, predicted_label, ScorerModel};
use crate::dataset::{require_both_classes, LabeledClip};
use crate::encoder::LoadedEncoder;
use crate::error::{Error, Result};
use crate::manifest::Label;
use crate::nn::softmax;

/// Search interval for the temperature.
pub const TEMPERATURE_RANGE: [f64; 2] = [0.05, 20.0];
pub const ECE_BINS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub samples: usize,
    /// Set when every logit pair had the same margin, leaving the
    /// temperature unidentifiable; the temperature is then 1.
    pub degenerate: bool,
}

impl CalibrationModel {
    /// Temperature 1, unfitted (`samples = 0`, zeroed metadata).
    pub fn identity() -> Self {
        Self {
            temperature: 1.0,
            nll_before: 0.0,
            nll_after: 0.0,
            ece_before: 0.0,
            ece_after: 0.0,
            samples: 0,
            degenerate: false,
        }
    }
}

pub fn calibrated_probabilities(logits: [f64; 2], temperature: f64) -> [f64; 2] {
    let p = softmax(&[logits[0] / temperature, logits[1] / temperature]);
    [p[0], p[1]]
}

fn mean_nll(logits: &[[f64; 2]], labels: &[Label], temperature: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, y)| {
            // log-softmax without forming probabilities
            let a = z[0] / temperature;
            let b = z[1] / temperature;
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            lse - [a, b][y.index()]
        })
        .sum();
    total / logits.len() as f64
}

/// Expected calibration error over [`ECE_BINS`]-style equal-width confidence
/// bins: Σ_b (n_b / n) · |accuracy_b − confidence_b|.
pub fn expected_calibration_error(probabilities: &[[f64; 2]], labels: &[Label], bins: usize) -> f64 {
    assert!(bins > 0);
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0.0; bins];
    for (p, y) in probabilities.iter().zip(labels) {
        let c = p[0].max(p[1]);
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if predicted_label(*p) == *y {
            correct[b] += 1.0;
        }
    }
    let n = probabilities.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (count[b] as f64 / n) * (correct[b] / count[b] as f64 - conf[b] / count[b] as f64).abs())
        .sum()
}

const GOLDEN_ITERATIONS: usize = 200;

/// Minimizes mean NLL over log-temperature by golden-section search.
/// NLL is convex in 1/T, hence unimodal in ln T.
pub fn fit_temperature(logits: &[[f64; 2]], labels: &[Label]) -> Result<CalibrationModel> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Dataset(
            "calibration needs a nonempty set of logits with one label each".into(),
        ));
    }
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Dataset("non-finite logits".into()));
    }
    let probs_at = |t: f64| -> Vec<[f64; 2]> {
        logits.iter().map(|z| calibrated_probabilities(*z, t)).collect()
    };
    let nll_before = mean_nll(logits, labels, 1.0);
    let ece_before = expected_calibration_error(&probs_at(1.0), labels, ECE_BINS);

    let margin0 = logits[0][0] - logits[0][1];
    let degenerate = logits.iter().all(|z| ((z[0] - z[1]) - margin0).abs() <= 1e-12);
    let temperature = if degenerate {
        1.0
    } else {
        let f = |log_t: f64| mean_nll(logits, labels, log_t.exp());
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (TEMPERATURE_RANGE[0].ln(), TEMPERATURE_RANGE[1].ln());
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..GOLDEN_ITERATIONS {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
            if b - a < 1e-12 {
                break;
            }
        }
        ((a + b) / 2.0).exp()
    };
    Ok(CalibrationModel {
        temperature,
        nll_before,
        nll_after: mean_nll(logits, labels, temperature),
        ece_before,
        ece_after: expected_calibration_error(&probs_at(temperature), labels, ECE_BINS),
        samples: logits.len(),
        degenerate,
    })
}

/// Classifies every validation clip and fits the temperature.
pub fn fit_calibration(
    model: &ScorerModel,
    validation: &[LabeledClip],
    encoder: &LoadedEncoder,
) -> Result<CalibrationModel> {
    require_both_classes(validation, "validation")?;
    let mut logits = Vec::with_capacity(validation.len());
    for c in validation {
        let chunks = model.prepare(&c.clip, encoder)?;
        logits.push(classify(&chunks, &model.params)?.logits);
    }
    let labels: Vec<Label> = validation.iter().map(|c| c.label()).collect();
    fit_temperature(&logits, &labels)
}
