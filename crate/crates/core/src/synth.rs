//! Synthetic native / non-native corpus.
//!
//! Each speaker has a fixed pitch and class. An utterance is a run of
//! harmonic "syllables" shaped by two formants. Non-native speakers get a
//! brighter spectrum (harmonics above 1.5 kHz boosted) and one or two short
//! band-limited noise bursts between 2.5 and 4 kHz, the localized events the
//! attention map is expected to find.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{save_clip, AudioClip, CANONICAL_RATE};
use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, Label, Split, UtteranceRecord};

pub const SENTENCES: [&str; 5] = [
    "The quick brown fox jumps over the lazy dog.",
    "She sells sea shells by the sea shore.",
    "I would like a cup of coffee, please.",
    "Where is the nearest train station?",
    "Thank you very much for your help.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub non_native_fraction: f64,
    pub clips_per_speaker: usize,
    /// Boost of non-native harmonics above 1.5 kHz, as an amplitude factor.
    pub brightness_gain: f64,
    pub bursts: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 200,
            validation: 50,
            test: 50,
            non_native_fraction: 0.6,
            clips_per_speaker: 5,
            brightness_gain: 4.0,
            bursts: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub id: String,
    pub label: Label,
    pub f0: f64,
}

/// Ground truth for one generated clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub clip: AudioClip,
    /// `[start, end)` of each noise burst in seconds.
    pub bursts: Vec<(f64, f64)>,
}

const VOWELS: [(f64, f64); 6] = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (300.0, 870.0),
    (530.0, 1840.0),
    (660.0, 1720.0),
    (490.0, 1350.0),
];

fn harmonic_amplitude(freq: f64, f1: f64, f2: f64, bright: f64) -> f64 {
    let formants = (-((freq - f1) / 180.0).powi(2)).exp() + 0.6 * (-((freq - f2) / 250.0).powi(2)).exp();
    let base = formants + 0.08 / (1.0 + freq / 500.0);
    // smooth step from 1.2 to 1.8 kHz
    let s = ((freq - 1200.0) / 600.0).clamp(0.0, 1.0);
    base * (1.0 + (bright - 1.0) * s * s * (3.0 - 2.0 * s))
}

/// Adds a sin²-windowed sum of harmonics of `f0` over `[start, start+len)`.
fn add_syllable(out: &mut [f64], start: usize, len: usize, f0: f64, vowel: (f64, f64), bright: f64, rng: &mut ChaCha8Rng) {
    let rate = f64::from(CANONICAL_RATE);
    let end = (start + len).min(out.len());
    let mut n = 1;
    while n as f64 * f0 < 7_500.0 {
        let f = n as f64 * f0;
        let amp = harmonic_amplitude(f, vowel.0, vowel.1, bright);
        let w = 2.0 * std::f64::consts::PI * f / rate;
        let (sw, cw) = w.sin_cos();
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        // rotate (cos, sin) by w each sample
        let (mut c, mut s) = (phase.cos(), phase.sin());
        for (i, o) in out[start..end].iter_mut().enumerate() {
            let env = (std::f64::consts::PI * i as f64 / len as f64).sin();
            *o += amp * env * env * s;
            let c2 = c * cw - s * sw;
            s = s * cw + c * sw;
            c = c2;
        }
        n += 1;
    }
}

fn add_burst(out: &mut [f64], start: usize, len: usize, level: f64, rng: &mut ChaCha8Rng) {
    let rate = f64::from(CANONICAL_RATE);
    let end = (start + len).min(out.len());
    let mut f = 2_500.0;
    while f <= 4_000.0 {
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let w = 2.0 * std::f64::consts::PI * f / rate;
        for (i, o) in out[start..end].iter_mut().enumerate() {
            let env = (std::f64::consts::PI * i as f64 / len as f64).sin();
            *o += level * env * env * (w * i as f64 + phase).sin();
        }
        f += 25.0;
    }
}

/// One utterance of 2.8 to 4.2 s (so both padding and truncation occur
/// downstream), peak-normalized to a random level in [0.3, 0.8].
pub fn synthesize(speaker: &Speaker, cfg: &SynthConfig, seed: u64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = f64::from(CANONICAL_RATE);
    let duration: f64 = rng.random_range(2.8..4.2);
    let n = (duration * rate) as usize;
    let mut out = vec![0.0f64; n];
    let non_native = speaker.label == Label::NonNative;
    let bright = if non_native { cfg.brightness_gain } else { 1.0 };

    let mut syllables = Vec::new();
    let mut t = rng.random_range(0.05..0.25);
    while t < duration - 0.3 {
        let len_s: f64 = rng.random_range(0.18..0.4);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        // gentle declination across the utterance
        let f0 = speaker.f0 * (1.06 - 0.12 * t / duration) * rng.random_range(0.97..1.03);
        let start = (t * rate) as usize;
        let len = (len_s * rate) as usize;
        add_syllable(&mut out, start, len, f0, vowel, bright, &mut rng);
        syllables.push((start, len));
        t += len_s + rng.random_range(0.04..0.15);
    }

    let mut bursts = Vec::new();
    if non_native && cfg.bursts && !syllables.is_empty() {
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let count = rng.random_range(1..=2usize).min(syllables.len());
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < count {
            let i = rng.random_range(0..syllables.len());
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
        for i in chosen {
            let (s, l) = syllables[i];
            let len = ((rng.random_range(0.12..0.22) * rate) as usize).min(l);
            let start = s + (l - len) / 2;
            // 61 partials, each around 1/20 of the voiced peak
            add_burst(&mut out, start, len, peak * 0.05, &mut rng);
            bursts.push((start as f64 / rate, (start + len) as f64 / rate));
        }
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let level: f64 = rng.random_range(0.3..0.8);
    let floor = 10f64.powf(-50.0 / 20.0);
    let samples = out
        .iter()
        .map(|v| (v / peak * level + floor * rng.random_range(-1.0..1.0)) as f32)
        .collect();
    Utterance {
        clip: AudioClip::new(samples, CANONICAL_RATE),
        bursts,
    }
}

fn speakers_for(split: Split, clips: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(Speaker, usize)> {
    let per = cfg.clips_per_speaker.max(1);
    let n_speakers = clips.div_ceil(per);
    let n_non_native = ((n_speakers as f64) * cfg.non_native_fraction).round() as usize;
    let mut out = Vec::new();
    let mut remaining = clips;
    for i in 0..n_speakers {
        let label = if i < n_non_native { Label::NonNative } else { Label::Native };
        let f0 = rng.random_range(95.0..230.0);
        let count = per.min(remaining);
        remaining -= count;
        out.push((
            Speaker {
                id: format!("{}-{:03}", split.as_str(), i),
                label,
                f0,
            },
            count,
        ));
    }
    out
}

/// Generates every clip in memory, in manifest order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(UtteranceRecord, Utterance)>> {
    if cfg.train == 0 || cfg.validation == 0 || !(0.0..=1.0).contains(&cfg.non_native_fraction) {
        return Err(Error::Config("synthetic corpus needs nonempty train/validation splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5E]));
    let mut out = Vec::new();
    for (split, count) in [(Split::Train, cfg.train), (Split::Validation, cfg.validation), (Split::Test, cfg.test)] {
        for (speaker, clips) in speakers_for(split, count, cfg, &mut rng) {
            for j in 0..clips {
                let idx = out.len() as u64;
                let utt = synthesize(&speaker, cfg, derive_seed(cfg.seed, &[1, idx]));
                let record = UtteranceRecord {
                    clip_ref: format!("clips/{}_{j:02}.wav", speaker.id),
                    label: speaker.label,
                    speaker_id: speaker.id.clone(),
                    text: Some(SENTENCES[(idx as usize) % SENTENCES.len()].to_string()),
                    split,
                };
                out.push((record, utt));
            }
        }
    }
    Ok(out)
}

/// Writes `clips/*.wav` and `manifest.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Vec<UtteranceRecord>> {
    let clips_dir = dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    let items = generate(cfg)?;
    for (record, utt) in &items {
        save_clip(record.resolve(dir), &utt.clip)?;
    }
    let records: Vec<UtteranceRecord> = items.into_iter().map(|(r, _)| r).collect();
    write_manifest(dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
