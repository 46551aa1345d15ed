//! Deterministic log-mel filterbank features.
//!
//! Frame `i` covers samples `[i·hop, i·hop + 400)` (25 ms at 16 kHz), with
//! samples past the end of the clip read as zero, so a clip of `N` samples
//! yields exactly `floor(N / hop)` frames. For a canonical 4 s clip at a
//! 20 ms hop that is 200 frames.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::FeatureSequence;
use crate::audio::CANONICAL_RATE;
use crate::error::{Error, Result};

pub const WINDOW_SAMPLES: usize = 400;
const FFT_SIZE: usize = 1024;
/// Power floor before the log; an all-zero frame maps to `ln(ENERGY_FLOOR)`.
pub const ENERGY_FLOOR: f64 = 1e-10;

pub struct LogMel {
    bands: usize,
    hop: usize,
    window: Vec<f64>,
    /// `bands × (FFT_SIZE / 2 + 1)`.
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("bands", &self.bands)
            .field("hop", &self.hop)
            .finish()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl LogMel {
    pub fn new(bands: usize, frame_stride_s: f64) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Config("mel band count must be positive".into()));
        }
        let hop_f = frame_stride_s * CANONICAL_RATE as f64;
        let hop = hop_f.round() as usize;
        if hop == 0 || (hop_f - hop as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "frame stride {frame_stride_s} s is not a whole number of samples"
            )));
        }
        let window = (0..WINDOW_SAMPLES)
            .map(|n| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SAMPLES as f64).cos()
            })
            .collect();

        let n_bins = FFT_SIZE / 2 + 1;
        let nyquist = CANONICAL_RATE as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = CANONICAL_RATE as f64 / FFT_SIZE as f64;
        let filters = Array2::from_shape_fn((bands, n_bins), |(m, b)| {
            let f = b as f64 * bin_hz;
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            }
        });
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Ok(Self {
            bands,
            hop,
            window,
            filters,
            fft,
        })
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.hop
    }

    pub fn encode(&self, samples: &[f32]) -> FeatureSequence {
        let t = self.frame_count(samples.len());
        let n_bins = FFT_SIZE / 2 + 1;
        let mut frames = Array2::zeros((t, self.bands));
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut power = ndarray::Array1::zeros(n_bins);
        for i in 0..t {
            let start = i * self.hop;
            for (j, slot) in buf.iter_mut().enumerate() {
                let v = if j < WINDOW_SAMPLES {
                    samples
                        .get(start + j)
                        .map_or(0.0, |&s| f64::from(s) * self.window[j])
                } else {
                    0.0
                };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (b, p) in power.iter_mut().enumerate() {
                *p = buf[b].norm_sqr();
            }
            let energies = self.filters.dot(&power);
            for (m, e) in energies.iter().enumerate() {
                frames[[i, m]] = e.max(ENERGY_FLOOR).ln();
            }
        }
        FeatureSequence {
            frames,
            frame_stride_s: self.hop as f64 / CANONICAL_RATE as f64,
            frame_offset_s: WINDOW_SAMPLES as f64 / 2.0 / CANONICAL_RATE as f64,
        }
    }
}
