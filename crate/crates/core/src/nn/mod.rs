//! Small dense-network toolkit with hand-written gradients: LSTM layers,
//! Adam and the parameter-block traversal shared by both models.

mod adam;
mod lstm;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use lstm::{Lstm, LstmTrace, Recurrent, RecurrentTrace};

/// Named parameter tensors in a fixed order. Gradients are stored in a value
/// of the same type, so the two traversals line up block for block.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn blocks_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    fn zero(&mut self) {
        for mut b in self.blocks_mut() {
            b.fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for mut b in self.blocks_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }

    fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` block-wise.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for (mut dst, (_, s)) in self.blocks_mut().into_iter().zip(src) {
            dst += &s;
        }
    }
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub(crate) fn uniform_vector(len: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..=bound))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverted dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub(crate) fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    if p <= 0.0 {
        return Array1::ones(len);
    }
    let keep = 1.0 / (1.0 - p);
    Array1::from_shape_simple_fn(len, || if rng.random::<f64>() < p { 0.0 } else { keep })
}
