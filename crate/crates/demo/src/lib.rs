//! Browser demo. Three views over the core library, compiled to WebAssembly:
//!
//! - `augmentation_preview`: a synthetic utterance before and after one
//!   training perturbation.
//! - `difference_view`: attention standardization and segment extraction on
//!   an attention profile built from a synthetic clip's known noise bursts.
//! - `loss_curves`: focal loss against cross-entropy, and the effect of a
//!   calibration temperature on P(native).
//!
//! Every export returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page can show them.

use nativeness::audio::{augment, envelope, normalize, AugmentationConfig, AudioClip, CANONICAL_RATE};
use nativeness::differ::{segments_from_z, standardize, DiffConfig};
use nativeness::encoder::EncoderConfig;
use nativeness::manifest::Label;
use nativeness::scorer::{calibrated_probabilities, focal_loss, AttentionVector};
use nativeness::synth::{synthesize, Speaker, SynthConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn utterance(seed: u32, label: Label) -> (AudioClip, Vec<(f64, f64)>) {
    let speaker = Speaker {
        id: "demo".into(),
        label,
        f0: 110.0 + f64::from(seed % 7) * 15.0,
    };
    let u = synthesize(&speaker, &SynthConfig::default(), u64::from(seed));
    (normalize(&u.clip).expect("synthetic clips are nonempty"), u.bursts)
}

/// `transform` is one of `noise` (amount = SNR in dB), `gain` (dB),
/// `pitch` (semitones) or `silence` (fraction of the clip).
pub fn augmentation_preview_value(seed: u32, transform: &str, amount: f64, points: usize) -> Result<Value, String> {
    let mut cfg = AugmentationConfig::identity().with_seed(u64::from(seed));
    match transform {
        "noise" => cfg.noise_snr_db_range = Some([amount, amount]),
        "gain" => cfg.gain_db_range = [amount, amount],
        "pitch" => cfg.pitch_shift_semitones_range = [amount, amount],
        "silence" => cfg.silence_fraction_max = amount,
        other => return Err(format!("unknown transform {other:?}")),
    }
    let (clean, _) = utterance(seed, Label::NonNative);
    let out = augment(&clean, &cfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "duration_s": clean.duration_s(),
        "clean": envelope(&clean.samples, points),
        "augmented": envelope(&out.samples, points),
        "clean_rms": clean.rms(),
        "augmented_rms": out.rms(),
    }))
}

#[wasm_bindgen]
pub fn augmentation_preview(seed: u32, transform: &str, amount: f64, points: usize) -> String {
    respond(augmentation_preview_value(seed, transform, amount, points))
}

/// Attention over fixed-stride chunks: a random baseline, with extra weight
/// on chunks that overlap a noise burst, scaled by `focus`.
fn burst_attention(bursts: &[(f64, f64)], chunks: usize, stride: f64, focus: f64, seed: u32) -> AttentionVector {
    // small deterministic jitter, no RNG crate needed for a display
    let mut state = u64::from(seed).wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let raw: Vec<f64> = (0..chunks)
        .map(|i| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let jitter = (state >> 11) as f64 / (1u64 << 53) as f64;
            let (lo, hi) = (i as f64 * stride, (i + 1) as f64 * stride);
            let hit = bursts.iter().any(|&(s, e)| s < hi && e > lo);
            (0.5 + jitter + if hit { focus } else { 0.0 }).max(1e-6)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    AttentionVector {
        weights: raw.into_iter().map(|w| w / total).collect(),
    }
}

pub fn difference_view_value(seed: u32, focus: f64, z_threshold: f64, merge_gap: usize, points: usize) -> Result<Value, String> {
    if !(focus.is_finite() && focus >= 0.0) {
        return Err("focus must be a nonnegative number".into());
    }
    let (clip, bursts) = utterance(seed, Label::NonNative);
    let stride = EncoderConfig::default().chunk_stride_s();
    let chunks = (clip.duration_s() / stride).round() as usize;
    let alpha = burst_attention(&bursts, chunks, stride, focus, seed);
    let cfg = DiffConfig {
        z_threshold,
        merge_gap_chunks: merge_gap,
        ..DiffConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let z = standardize(&alpha, cfg.min_std);
    let segments = segments_from_z(&z, stride, &cfg);
    Ok(json!({
        "duration_s": clip.duration_s(),
        "chunk_stride_s": stride,
        "waveform": envelope(&clip.samples, points),
        "attention": alpha.weights,
        "z": z,
        "bursts": bursts,
        "segments": segments,
    }))
}

#[wasm_bindgen]
pub fn difference_view(seed: u32, focus: f64, z_threshold: f64, merge_gap: usize, points: usize) -> String {
    respond(difference_view_value(seed, focus, z_threshold, merge_gap, points))
}

pub fn loss_curves_value(gamma: f64, temperature: f64, points: usize) -> Result<Value, String> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err("gamma must be a nonnegative number".into());
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err("temperature must be positive".into());
    }
    let n = points.max(2);
    let p: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    let focal: Vec<f64> = p.iter().map(|&q| focal_loss([q, 1.0 - q], Label::Native, gamma)).collect();
    let ce: Vec<f64> = p.iter().map(|&q| focal_loss([q, 1.0 - q], Label::Native, 0.0)).collect();
    // logit margin native − non-native on [-8, 8]
    let margin: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
    let raw: Vec<f64> = margin.iter().map(|&m| calibrated_probabilities([m / 2.0, -m / 2.0], 1.0)[0]).collect();
    let calibrated: Vec<f64> = margin
        .iter()
        .map(|&m| calibrated_probabilities([m / 2.0, -m / 2.0], temperature)[0])
        .collect();
    Ok(json!({
        "p": p,
        "focal": focal,
        "cross_entropy": ce,
        "margin": margin,
        "p_native_raw": raw,
        "p_native_calibrated": calibrated,
    }))
}

#[wasm_bindgen]
pub fn loss_curves(gamma: f64, temperature: f64, points: usize) -> String {
    respond(loss_curves_value(gamma, temperature, points))
}

/// Sample rate of every clip the demo produces.
#[wasm_bindgen]
pub fn sample_rate() -> u32 {
    CANONICAL_RATE
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn augmentation_shapes_and_errors() {
        let v = parse(augmentation_preview(3, "gain", 6.0, 200));
        assert_eq!(v["clean"].as_array().unwrap().len(), 200);
        assert_eq!(v["augmented"].as_array().unwrap().len(), 200);
        let ratio = v["augmented_rms"].as_f64().unwrap() / v["clean_rms"].as_f64().unwrap();
        assert!((20.0 * ratio.log10() - 6.0).abs() < 0.1, "{ratio}");
        assert!(parse(augmentation_preview(3, "reverb", 1.0, 10))["error"].is_string());
        assert!(parse(augmentation_preview(3, "silence", 1.5, 10))["error"].is_string());
        // same inputs, same output
        assert_eq!(augmentation_preview(9, "noise", 10.0, 50), augmentation_preview(9, "noise", 10.0, 50));
    }

    #[test]
    fn focused_attention_lands_on_bursts() {
        let v = parse(difference_view(4, 6.0, 1.0, 1, 100));
        let bursts: Vec<(f64, f64)> = serde_json::from_value(v["bursts"].clone()).unwrap();
        let segs = v["segments"].as_array().unwrap();
        assert!(!bursts.is_empty() && !segs.is_empty());
        for s in segs {
            let (a, b) = (s["start_s"].as_f64().unwrap(), s["end_s"].as_f64().unwrap());
            assert!(bursts.iter().any(|&(lo, hi)| lo < b && hi > a), "segment {a}..{b} misses {bursts:?}");
        }
        let w: f64 = v["attention"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn higher_threshold_never_adds_segments_time() {
        let covered = |t: f64| -> f64 {
            let v = parse(difference_view(2, 1.0, t, 0, 10));
            v["segments"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| s["end_s"].as_f64().unwrap() - s["start_s"].as_f64().unwrap())
                .sum()
        };
        assert!(covered(0.0) >= covered(1.0) && covered(1.0) >= covered(2.0));
    }

    #[test]
    fn loss_curve_values() {
        let v = parse(loss_curves(2.0, 2.0, 10));
        let p = v["p"].as_array().unwrap();
        assert_eq!(p.len(), 10);
        // p = 1 at the end of the axis
        assert_eq!(v["focal"][9].as_f64().unwrap(), 0.0);
        // γ = 2 at p = 0.9: 0.01 · (−ln 0.9)
        assert!((v["focal"][8].as_f64().unwrap() - 0.01 * -(0.9f64.ln())).abs() < 1e-12);
        assert!((v["cross_entropy"][4].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
        // a temperature above 1 pulls probabilities toward 1/2
        let raw = v["p_native_raw"][9].as_f64().unwrap();
        let cal = v["p_native_calibrated"][9].as_f64().unwrap();
        assert!(0.5 < cal && cal < raw);
        assert!(parse(loss_curves(-1.0, 1.0, 5))["error"].is_string());
        assert!(parse(loss_curves(1.0, 0.0, 5))["error"].is_string());
    }
}
