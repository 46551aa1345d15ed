//! Audio clips, canonicalization and resampling.

mod augment;
mod io;
mod wav;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentationConfig};
pub use io::{decode_audio, encode_wav_f32, encode_wav_pcm16, load_clip, save_clip};

use crate::error::{Error, Result};

/// Canonical sample rate in Hz.
pub const CANONICAL_RATE: u32 = 16_000;
/// Canonical clip duration in seconds.
pub const CANONICAL_SECONDS: f64 = 4.0;
/// Samples in a canonical clip.
pub const CANONICAL_LEN: usize = 64_000;

const MIN_RATE: u32 = 4_000;
const MAX_RATE: u32 = 384_000;

/// A mono waveform. Multi-channel input is downmixed when decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_canonical(&self) -> bool {
        self.sample_rate == CANONICAL_RATE
            && self.samples.len() == CANONICAL_LEN
            && self.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0)
    }

    pub fn ensure_canonical(&self) -> Result<()> {
        if self.sample_rate != CANONICAL_RATE {
            return Err(Error::NotCanonical(format!(
                "sample rate {} Hz, expected {CANONICAL_RATE}",
                self.sample_rate
            )));
        }
        if self.samples.len() != CANONICAL_LEN {
            return Err(Error::NotCanonical(format!(
                "{} samples, expected {CANONICAL_LEN}",
                self.samples.len()
            )));
        }
        if self.samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::NotCanonical("samples outside [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (sum / samples.len() as f64).sqrt()
}

/// Brings a clip to the canonical format: 16 kHz, exactly 4 s (zero-padded or
/// truncated at the end), peak amplitude at most 1.
///
/// Non-finite samples are replaced by silence. Clips already within [-1, 1]
/// keep their level, which makes the operation idempotent.
pub fn normalize(clip: &AudioClip) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyClip);
    }
    let mut samples = if clip.sample_rate == CANONICAL_RATE {
        clip.samples.clone()
    } else {
        resample(&clip.samples, clip.sample_rate, CANONICAL_RATE)?
    };
    fit_length(&mut samples, CANONICAL_LEN);
    for s in samples.iter_mut() {
        if !s.is_finite() {
            *s = 0.0;
        }
    }
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        let scale = 1.0 / peak;
        for s in samples.iter_mut() {
            *s = (*s * scale).clamp(-1.0, 1.0);
        }
    }
    Ok(AudioClip::new(samples, CANONICAL_RATE))
}

/// Zero-pads or truncates at the end.
pub(crate) fn fit_length(samples: &mut Vec<f32>, len: usize) {
    samples.resize(len, 0.0);
}

/// Band-limited sample-rate conversion.
pub fn resample(samples: &[f32], from_rate: u32, to_rate: u32) -> Result<Vec<f32>> {
    for rate in [from_rate, to_rate] {
        if !(MIN_RATE..=MAX_RATE).contains(&rate) {
            return Err(Error::UnsupportedSampleRate(rate));
        }
    }
    if from_rate == to_rate {
        return Ok(samples.to_vec());
    }
    let out_len = ((samples.len() as u64 * to_rate as u64 + from_rate as u64 / 2) / from_rate as u64)
        as usize;
    Ok(resample_by_step(
        samples,
        from_rate as f64 / to_rate as f64,
        out_len,
    ))
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Reads `samples` at positions `n * step` for `n in 0..out_len` using
/// Hann-windowed sinc interpolation. A step above 1 lowers the cutoff to avoid
/// aliasing.
pub(crate) fn resample_by_step(samples: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    if (step - 1.0).abs() < 1e-12 {
        let mut out = samples.to_vec();
        fit_length(&mut out, out_len);
        return out;
    }
    let cutoff = if step > 1.0 { 1.0 / step } else { 1.0 };
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let n_in = samples.len() as isize;
    let theta_s = std::f64::consts::PI * cutoff;
    let theta_w = std::f64::consts::PI / half_width;
    let (sin_s, cos_s) = theta_s.sin_cos();
    let (sin_w, cos_w) = theta_w.sin_cos();
    (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n_in - 1);
            if lo > hi {
                return 0.0;
            }
            // sin/cos of the sinc and window arguments advance by a fixed
            // rotation as x = t − k drops by one per tap
            let x0 = t - lo as f64;
            let (mut ss, mut cs) = (theta_s * x0).sin_cos();
            let (mut sw, mut cw) = (theta_w * x0).sin_cos();
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let x = t - k as f64;
                let kernel = if x.abs() < 1e-9 {
                    cutoff
                } else {
                    ss / (std::f64::consts::PI * x)
                };
                acc += f64::from(samples[k as usize]) * kernel * (0.5 + 0.5 * cw);
                let ss2 = ss * cos_s - cs * sin_s;
                cs = cs * cos_s + ss * sin_s;
                ss = ss2;
                let sw2 = sw * cos_w - cw * sin_w;
                cw = cw * cos_w + sw * sin_w;
                sw = sw2;
            }
            acc as f32
        })
        .collect()
}

/// Max-abs envelope with at most `points` buckets, used for waveform display.
pub fn envelope(samples: &[f32], points: usize) -> Vec<f32> {
    if samples.is_empty() || points == 0 {
        return Vec::new();
    }
    let points = points.min(samples.len());
    (0..points)
        .map(|i| {
            let start = i * samples.len() / points;
            let end = ((i + 1) * samples.len() / points).max(start + 1);
            samples[start..end]
                .iter()
                .fold(0.0f32, |m, s| m.max(s.abs()))
        })
        .collect()
}
