use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, uniform_matrix, uniform_vector, ParamBlocks};

/// Single-direction LSTM. Gate blocks are stacked in the order
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    /// `4H × I`.
    pub w_ih: Array2<f64>,
    /// `4H × H`.
    pub w_hh: Array2<f64>,
    /// `4H`.
    pub bias: Array1<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// `T × H` hidden states.
    pub h: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    /// `T × 4H` post-activation gates.
    gates: Array2<f64>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform_matrix(4 * hidden, input, bound, rng),
            w_hh: uniform_matrix(4 * hidden, hidden, bound, rng),
            bias: uniform_vector(4 * hidden, bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> LstmTrace {
        let t_len = x.nrows();
        let hd = self.hidden_dim();
        let pre = x.dot(&self.w_ih.t()) + &self.bias;
        let mut h = Array2::zeros((t_len, hd));
        let mut c = Array2::zeros((t_len, hd));
        let mut tanh_c = Array2::zeros((t_len, hd));
        let mut gates = Array2::zeros((t_len, 4 * hd));
        let mut h_prev = Array1::zeros(hd);
        let mut c_prev = Array1::<f64>::zeros(hd);
        for t in 0..t_len {
            let z = &pre.row(t) + &self.w_hh.dot(&h_prev);
            let mut g = gates.row_mut(t);
            for j in 0..hd {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[hd + j]);
                let c_g = z[2 * hd + j].tanh();
                let o_g = sigmoid(z[3 * hd + j]);
                g[j] = i_g;
                g[hd + j] = f_g;
                g[2 * hd + j] = c_g;
                g[3 * hd + j] = o_g;
                let c_new = f_g * c_prev[j] + i_g * c_g;
                let tc = c_new.tanh();
                c[[t, j]] = c_new;
                tanh_c[[t, j]] = tc;
                h[[t, j]] = o_g * tc;
            }
            h_prev.assign(&h.row(t));
            c_prev.assign(&c.row(t));
        }
        LstmTrace {
            h,
            c,
            tanh_c,
            gates,
        }
    }

    /// Backpropagates `d_h` (gradient w.r.t. every hidden state) and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        trace: &LstmTrace,
        d_h: ArrayView2<'_, f64>,
        grads: &mut Lstm,
    ) {
        let t_len = x.nrows();
        let hd = self.hidden_dim();
        let mut d_gates = Array2::zeros((t_len, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..t_len).rev() {
            let g = trace.gates.row(t);
            {
                let mut dg = d_gates.row_mut(t);
                for j in 0..hd {
                    let (i_g, f_g, c_g, o_g) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let tc = trace.tanh_c[[t, j]];
                    let c_prev = if t > 0 { trace.c[[t - 1, j]] } else { 0.0 };
                    let dh = d_h[[t, j]] + dh_next[j];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                    dg[j] = dc * c_g * i_g * (1.0 - i_g);
                    dg[hd + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dg[2 * hd + j] = dc * i_g * (1.0 - c_g * c_g);
                    dg[3 * hd + j] = d_o * o_g * (1.0 - o_g);
                    dc_next[j] = dc * f_g;
                }
            }
            dh_next = self.w_hh.t().dot(&d_gates.row(t));
        }
        grads.w_ih += &d_gates.t().dot(&x);
        if t_len > 1 {
            grads.w_hh += &d_gates
                .slice(s![1.., ..])
                .t()
                .dot(&trace.h.slice(s![..t_len - 1, ..]));
        }
        grads.bias += &d_gates.sum_axis(Axis(0));
    }
}

impl ParamBlocks for Lstm {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("w_ih".into(), self.w_ih.view().into_dyn()),
            ("w_hh".into(), self.w_hh.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.w_ih.view_mut().into_dyn(),
            self.w_hh.view_mut().into_dyn(),
            self.bias.view_mut().into_dyn(),
        ]
    }
}

/// One LSTM, or two running in opposite directions with their per-step
/// states concatenated `[forward, backward]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recurrent {
    pub forward: Lstm,
    pub backward: Option<Lstm>,
}

#[derive(Debug, Clone)]
pub struct RecurrentTrace {
    /// `T × output_dim`.
    pub states: Array2<f64>,
    forward: LstmTrace,
    backward: Option<(Array2<f64>, LstmTrace)>,
}

fn reversed(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl Recurrent {
    pub fn new(input: usize, hidden: usize, bidirectional: bool, rng: &mut ChaCha8Rng) -> Self {
        let forward = Lstm::new(input, hidden, rng);
        let backward = bidirectional.then(|| Lstm::new(input, hidden, rng));
        Self { forward, backward }
    }

    pub fn zeros(input: usize, hidden: usize, bidirectional: bool) -> Self {
        Self {
            forward: Lstm::zeros(input, hidden),
            backward: bidirectional.then(|| Lstm::zeros(input, hidden)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.as_ref().map(Lstm::zeros_like),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim() * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> RecurrentTrace {
        let fwd = self.forward.forward(x);
        match &self.backward {
            None => RecurrentTrace {
                states: fwd.h.clone(),
                forward: fwd,
                backward: None,
            },
            Some(bwd_lstm) => {
                let hd = self.forward.hidden_dim();
                let x_rev = reversed(x);
                let bwd = bwd_lstm.forward(x_rev.view());
                let mut states = Array2::zeros((x.nrows(), 2 * hd));
                states.slice_mut(s![.., ..hd]).assign(&fwd.h);
                states
                    .slice_mut(s![.., hd..])
                    .assign(&bwd.h.slice(s![..;-1, ..]));
                RecurrentTrace {
                    states,
                    forward: fwd,
                    backward: Some((x_rev, bwd)),
                }
            }
        }
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        trace: &RecurrentTrace,
        d_states: ArrayView2<'_, f64>,
        grads: &mut Recurrent,
    ) {
        let hd = self.forward.hidden_dim();
        self.forward.backward(
            x,
            &trace.forward,
            d_states.slice(s![.., ..hd]),
            &mut grads.forward,
        );
        if let (Some(lstm), Some((x_rev, bwd)), Some(g)) =
            (&self.backward, &trace.backward, grads.backward.as_mut())
        {
            let d_rev = reversed(d_states.slice(s![.., hd..]));
            lstm.backward(x_rev.view(), bwd, d_rev.view(), g);
        }
    }
}

impl ParamBlocks for Recurrent {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<_> = self
            .forward
            .blocks()
            .into_iter()
            .map(|(n, b)| (format!("lstm_fwd.{n}"), b))
            .collect();
        if let Some(b) = &self.backward {
            out.extend(b.blocks().into_iter().map(|(n, v)| (format!("lstm_bwd.{n}"), v)));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.forward.blocks_mut();
        if let Some(b) = &mut self.backward {
            out.extend(b.blocks_mut());
        }
        out
    }
}
