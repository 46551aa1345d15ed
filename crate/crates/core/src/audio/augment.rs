//! Training-time perturbations: background Gaussian noise, gain, pitch shift
//! and a silenced span.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{fit_length, resample_by_step, rms, AudioClip, CANONICAL_LEN, CANONICAL_RATE};
use crate::error::{Error, Result};

/// Parameter ranges for [`augment`]. Each transform draws its own parameter
/// uniformly from its range.
///
/// `noise_snr_db_range: None` disables the noise transform; the other
/// transforms are disabled by degenerate ranges at 0 (and
/// `silence_fraction_max = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub noise_snr_db_range: Option<[f64; 2]>,
    pub gain_db_range: [f64; 2],
    pub pitch_shift_semitones_range: [f64; 2],
    pub silence_fraction_max: f64,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            noise_snr_db_range: Some([5.0, 30.0]),
            gain_db_range: [-6.0, 6.0],
            pitch_shift_semitones_range: [-2.0, 2.0],
            silence_fraction_max: 0.1,
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// A configuration under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            noise_snr_db_range: None,
            gain_db_range: [0.0, 0.0],
            pitch_shift_semitones_range: [0.0, 0.0],
            silence_fraction_max: 0.0,
            rng_seed: 0,
        }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ranges = vec![
            ("gain_db_range", self.gain_db_range),
            ("pitch_shift_semitones_range", self.pitch_shift_semitones_range),
        ];
        if let Some(r) = self.noise_snr_db_range {
            ranges.push(("noise_snr_db_range", r));
        }
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} must satisfy lo <= hi")));
            }
        }
        if !(0.0..1.0).contains(&self.silence_fraction_max) {
            return Err(Error::Config(
                "silence_fraction_max must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters drawn for one call, in draw order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    gain_db: f64,
    semitones: f64,
    snr_db: Option<f64>,
    silence: Option<(usize, usize)>,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    // always consume one draw so the stream does not depend on which ranges
    // are degenerate
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

fn draw(cfg: &AugmentationConfig, n: usize, rng: &mut ChaCha8Rng) -> Draw {
    let gain_db = uniform(rng, cfg.gain_db_range);
    let semitones = uniform(rng, cfg.pitch_shift_semitones_range);
    let snr = uniform(rng, cfg.noise_snr_db_range.unwrap_or([0.0, 0.0]));
    let frac = uniform(rng, [0.0, cfg.silence_fraction_max]);
    let start_u: f64 = rng.random();
    let silence = if cfg.silence_fraction_max > 0.0 {
        let max_len = ((cfg.silence_fraction_max * n as f64).floor() as usize).max(1);
        let len = ((frac * n as f64).round() as usize).clamp(1, max_len);
        let start = ((start_u * (n - len + 1) as f64) as usize).min(n - len);
        Some((start, len))
    } else {
        None
    };
    Draw {
        gain_db,
        semitones,
        snr_db: cfg.noise_snr_db_range.map(|_| snr),
        silence,
    }
}

/// Applies pitch shift, gain, background noise and silencing, in that order,
/// each with an independently drawn parameter. Output stays canonical.
pub fn augment(clip: &AudioClip, cfg: &AugmentationConfig) -> Result<AudioClip> {
    clip.ensure_canonical()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let d = draw(cfg, CANONICAL_LEN, &mut rng);

    let mut samples = if d.semitones != 0.0 {
        // reading the input faster raises the pitch; length is then restored
        let step = 2f64.powf(d.semitones / 12.0);
        let out_len = (CANONICAL_LEN as f64 / step).round() as usize;
        let mut s = resample_by_step(&clip.samples, step, out_len.min(CANONICAL_LEN));
        fit_length(&mut s, CANONICAL_LEN);
        s
    } else {
        clip.samples.clone()
    };

    if d.gain_db != 0.0 {
        let g = 10f64.powf(d.gain_db / 20.0);
        for s in samples.iter_mut() {
            *s = (f64::from(*s) * g) as f32;
        }
    }

    if let Some(snr_db) = d.snr_db {
        let signal_rms = rms(&samples);
        if signal_rms > 0.0 {
            let sigma = signal_rms / 10f64.powf(snr_db / 20.0);
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for s in samples.iter_mut() {
                *s = (f64::from(*s) + normal.sample(&mut rng)) as f32;
            }
        }
    }

    if let Some((start, len)) = d.silence {
        samples[start..start + len].fill(0.0);
    }

    for s in samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(AudioClip::new(samples, CANONICAL_RATE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_clip() -> AudioClip {
        // strictly positive so zeroed spans are unambiguous
        let samples = (0..CANONICAL_LEN)
            .map(|i| (0.4 + 0.3 * (i as f64 * 0.05).sin()) as f32)
            .collect();
        AudioClip::new(samples, CANONICAL_RATE)
    }

    #[test]
    fn identity_config_is_identity() {
        let clip = test_clip();
        let out = augment(&clip, &AugmentationConfig::identity().with_seed(99)).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn gain_scales_rms() {
        let clip = test_clip();
        let cfg = AugmentationConfig {
            gain_db_range: [-6.0, -6.0],
            ..AugmentationConfig::identity()
        };
        let out = augment(&clip, &cfg).unwrap();
        let expected = clip.rms() * 10f64.powf(-6.0 / 20.0);
        let rel = (out.rms() - expected).abs() / expected;
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn silence_is_one_contiguous_span() {
        let clip = test_clip();
        let cfg = AugmentationConfig {
            silence_fraction_max: 0.25,
            rng_seed: 17,
            ..AugmentationConfig::identity()
        };
        let out = augment(&clip, &cfg).unwrap();
        let zeros: Vec<usize> = out
            .samples
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect();
        assert!(!zeros.is_empty());
        assert!(zeros.len() <= CANONICAL_LEN / 4);
        assert!(zeros.windows(2).all(|w| w[1] == w[0] + 1), "not contiguous");
        // untouched elsewhere
        for (i, (a, b)) in out.samples.iter().zip(&clip.samples).enumerate() {
            if !zeros.contains(&i) {
                assert_eq!(a, b);
            }
        }
        let again = augment(&clip, &cfg).unwrap();
        assert_eq!(
            out.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
            again.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn noise_hits_requested_snr() {
        let clip = test_clip();
        let cfg = AugmentationConfig {
            noise_snr_db_range: Some([20.0, 20.0]),
            ..AugmentationConfig::identity()
        };
        let out = augment(&clip, &cfg).unwrap();
        let noise: Vec<f32> = out
            .samples
            .iter()
            .zip(&clip.samples)
            .map(|(a, b)| a - b)
            .collect();
        let snr = 20.0 * (clip.rms() / rms(&noise)).log10();
        assert!((snr - 20.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn pitch_shift_moves_frequency() {
        // 200 Hz tone shifted up an octave should correlate with a 400 Hz tone
        let tone = |f: f64| -> Vec<f32> {
            (0..CANONICAL_LEN)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin()) as f32)
                .collect()
        };
        let clip = AudioClip::new(tone(200.0), CANONICAL_RATE);
        let cfg = AugmentationConfig {
            pitch_shift_semitones_range: [12.0, 12.0],
            ..AugmentationConfig::identity()
        };
        let out = augment(&clip, &cfg).unwrap();
        assert_eq!(out.samples.len(), CANONICAL_LEN);
        // the second half is padding
        assert!(out.samples[32_100..].iter().all(|&s| s == 0.0));
        let target = tone(400.0);
        let dot: f64 = out.samples[1000..31_000]
            .iter()
            .zip(&target[1000..31_000])
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum();
        let norm = rms(&out.samples[1000..31_000]) * rms(&target[1000..31_000]) * 30_000.0;
        assert!(dot / norm > 0.99, "correlation {}", dot / norm);
    }

    #[test]
    fn rejects_non_canonical_and_bad_config() {
        let short = AudioClip::new(vec![0.0; 100], CANONICAL_RATE);
        assert!(augment(&short, &AugmentationConfig::default()).is_err());
        let bad = AugmentationConfig {
            gain_db_range: [3.0, -3.0],
            ..AugmentationConfig::default()
        };
        assert!(augment(&test_clip(), &bad).is_err());
        let bad = AugmentationConfig {
            silence_fraction_max: 1.0,
            ..AugmentationConfig::default()
        };
        assert!(augment(&test_clip(), &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn preserves_format_and_is_pure(seed in any::<u64>(), snr in 0.0f64..40.0, gain in -12.0f64..12.0) {
            let clip = test_clip();
            let cfg = AugmentationConfig {
                noise_snr_db_range: Some([snr, snr + 5.0]),
                gain_db_range: [gain, gain + 1.0],
                rng_seed: seed,
                ..AugmentationConfig::default()
            };
            let a = augment(&clip, &cfg).unwrap();
            prop_assert!(a.is_canonical());
            let b = augment(&clip, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
