//! Inference for HuBERT / wav2vec 2.0 style encoders stored as a
//! `config.json` + `model.safetensors` pair (the layout written by the
//! `transformers` library).
//!
//! Both the post-norm "base" layout (`feat_extract_norm = "group"`) and the
//! pre-norm "large" layout (`feat_extract_norm = "layer"`,
//! `do_stable_layer_norm = true`) are supported. Computation is f32.

use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use safetensors::{Dtype, SafeTensors};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::FeatureSequence;
use crate::audio::CANONICAL_RATE;
use crate::error::{Error, Result};

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::EncoderCheckpoint(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
pub struct HubertConfig {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub conv_dim: Vec<usize>,
    pub conv_kernel: Vec<usize>,
    pub conv_stride: Vec<usize>,
    #[serde(default)]
    pub conv_bias: bool,
    pub num_conv_pos_embeddings: usize,
    pub num_conv_pos_embedding_groups: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_group")]
    pub feat_extract_norm: String,
    #[serde(default)]
    pub do_stable_layer_norm: bool,
    #[serde(default = "default_true")]
    pub feat_proj_layer_norm: bool,
    #[serde(default = "default_gelu")]
    pub hidden_act: String,
    #[serde(default = "default_gelu")]
    pub feat_extract_activation: String,
    #[serde(default)]
    pub conv_pos_batch_norm: bool,
}

fn default_eps() -> f64 {
    1e-5
}
fn default_group() -> String {
    "group".into()
}
fn default_true() -> bool {
    true
}
fn default_gelu() -> String {
    "gelu".into()
}

#[derive(Debug, Default, Deserialize)]
struct PreprocessorConfig {
    #[serde(default)]
    do_normalize: bool,
}

/// torch.nn.LayerNorm / GroupNorm default epsilon, used where the config's
/// `layer_norm_eps` does not apply.
const TORCH_NORM_EPS: f32 = 1e-5;

struct Linear {
    /// `out × in`.
    weight: Array2<f32>,
    bias: Array1<f32>,
}

impl Linear {
    fn forward(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

struct LayerNorm {
    gamma: Array1<f32>,
    beta: Array1<f32>,
    eps: f32,
}

impl LayerNorm {
    /// Normalizes each row.
    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f32;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gamma[j] + self.beta[j];
            }
        }
        out
    }
}

enum ConvNorm {
    None,
    /// One group per channel: normalize each channel over time.
    Group(LayerNorm),
    /// Normalize across channels at each time step.
    Layer(LayerNorm),
}

struct ConvLayer {
    /// `out × (in·kernel)`.
    weight: Array2<f32>,
    bias: Option<Array1<f32>>,
    kernel: usize,
    stride: usize,
    norm: ConvNorm,
}

/// `cols[c·K + j, t] = x[c, t·stride + j]`.
fn im2col(x: ArrayView2<'_, f32>, kernel: usize, stride: usize, out_len: usize) -> Array2<f32> {
    let c_in = x.nrows();
    let mut cols = Array2::zeros((c_in * kernel, out_len));
    for c in 0..c_in {
        let row = x.row(c);
        for j in 0..kernel {
            let mut dst = cols.row_mut(c * kernel + j);
            for t in 0..out_len {
                dst[t] = row[t * stride + j];
            }
        }
    }
    cols
}

impl ConvLayer {
    /// `x` is `channels × time`.
    fn forward(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        let len = x.ncols();
        if len < self.kernel {
            return Err(Error::Dimension(format!(
                "input of {len} steps is shorter than conv kernel {}",
                self.kernel
            )));
        }
        let out_len = (len - self.kernel) / self.stride + 1;
        let cols = im2col(x, self.kernel, self.stride, out_len);
        let mut y = self.weight.dot(&cols);
        if let Some(b) = &self.bias {
            y += &b.view().insert_axis(Axis(1));
        }
        match &self.norm {
            ConvNorm::None => {}
            ConvNorm::Group(ln) => {
                for (c, mut row) in y.rows_mut().into_iter().enumerate() {
                    let n = row.len() as f32;
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                    let inv = 1.0 / (var + ln.eps).sqrt();
                    row.mapv_inplace(|v| (v - mean) * inv * ln.gamma[c] + ln.beta[c]);
                }
            }
            ConvNorm::Layer(ln) => {
                let t = ln.forward(&y.t().to_owned());
                y = t.reversed_axes();
            }
        }
        y.mapv_inplace(gelu);
        Ok(y)
    }
}

struct PositionalConv {
    /// One `out_per_group × (in_per_group·kernel)` matrix per group.
    weights: Vec<Array2<f32>>,
    bias: Array1<f32>,
    kernel: usize,
}

impl PositionalConv {
    /// `x` is `time × hidden`; returns the same shape.
    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let (t, h) = x.dim();
        let groups = self.weights.len();
        let per_group = h / groups;
        let pad = self.kernel / 2;
        let mut padded = Array2::zeros((h, t + 2 * pad));
        padded.slice_mut(s![.., pad..pad + t]).assign(&x.t());
        let mut out = Array2::zeros((h, t));
        for (g, w) in self.weights.iter().enumerate() {
            let chans = padded.slice(s![g * per_group..(g + 1) * per_group, ..]);
            // an even kernel yields t + 1 outputs; the last one is discarded
            let cols = im2col(chans, self.kernel, 1, t);
            out.slice_mut(s![g * per_group..(g + 1) * per_group, ..])
                .assign(&w.dot(&cols));
        }
        out += &self.bias.view().insert_axis(Axis(1));
        out.mapv_inplace(gelu);
        out.reversed_axes()
    }
}

struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    attn_norm: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    final_norm: LayerNorm,
}

impl EncoderLayer {
    fn attention(&self, x: &Array2<f32>, heads: usize) -> Array2<f32> {
        let (t, h) = x.dim();
        let head_dim = h / heads;
        let scale = (head_dim as f32).powf(-0.5);
        let q = self.q.forward(x.view()) * scale;
        let k = self.k.forward(x.view());
        let v = self.v.forward(x.view());
        let mut ctx = Array2::zeros((t, h));
        for head in 0..heads {
            let cols = s![.., head * head_dim..(head + 1) * head_dim];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            for mut row in scores.rows_mut() {
                let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        self.out.forward(ctx.view())
    }

    fn feed_forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut hdn = self.ff_in.forward(x.view());
        hdn.mapv_inplace(gelu);
        self.ff_out.forward(hdn.view())
    }

    fn forward_post_norm(&self, x: &Array2<f32>, heads: usize) -> Array2<f32> {
        let hdn = x + &self.attention(x, heads);
        let hdn = self.attn_norm.forward(&hdn);
        let hdn = &hdn + &self.feed_forward(&hdn);
        self.final_norm.forward(&hdn)
    }

    fn forward_pre_norm(&self, x: &Array2<f32>, heads: usize) -> Array2<f32> {
        let hdn = x + &self.attention(&self.attn_norm.forward(x), heads);
        &hdn + &self.feed_forward(&self.final_norm.forward(&hdn))
    }
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

pub struct Hubert {
    config: HubertConfig,
    normalize_input: bool,
    conv: Vec<ConvLayer>,
    projection_norm: Option<LayerNorm>,
    projection: Linear,
    pos_conv: PositionalConv,
    encoder_norm: LayerNorm,
    layers: Vec<EncoderLayer>,
    digest: String,
}

struct TensorStore<'a> {
    tensors: SafeTensors<'a>,
    prefix: &'static str,
}

impl TensorStore<'_> {
    fn has(&self, name: &str) -> bool {
        self.tensors.tensor(&format!("{}{name}", self.prefix)).is_ok()
    }

    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .tensors
            .tensor(&full)
            .map_err(|_| ckpt_err(format!("missing tensor {full}")))?;
        if view.shape() != shape {
            return Err(ckpt_err(format!(
                "tensor {full} has shape {:?}, expected {shape:?}",
                view.shape()
            )));
        }
        let data = view.data();
        let values = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            Dtype::F16 => data
                .chunks_exact(2)
                .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::BF16 => data
                .chunks_exact(2)
                .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            other => return Err(ckpt_err(format!("tensor {full} has unsupported dtype {other:?}"))),
        };
        Ok(values)
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        Ok(Array1::from(self.get(name, &[len])?))
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        Array2::from_shape_vec((rows, cols), self.get(name, &[rows, cols])?)
            .map_err(|e| ckpt_err(e.to_string()))
    }

    fn linear(&self, name: &str, out: usize, inp: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{name}.weight"), out, inp)?,
            bias: self.vector(&format!("{name}.bias"), out)?,
        })
    }

    fn layer_norm(&self, name: &str, dim: usize, eps: f32) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{name}.weight"), dim)?,
            beta: self.vector(&format!("{name}.bias"), dim)?,
            eps,
        })
    }

    /// The positional conv may be stored fused, or weight-normalized over the
    /// kernel axis in either the old (`weight_g`/`weight_v`) or the
    /// parametrization (`original0`/`original1`) naming.
    fn weight_normed_conv(&self, base: &str, out: usize, inp: usize, k: usize) -> Result<Vec<f32>> {
        let pairs = [
            (
                format!("{base}.parametrizations.weight.original0"),
                format!("{base}.parametrizations.weight.original1"),
            ),
            (format!("{base}.weight_g"), format!("{base}.weight_v")),
        ];
        for (g_name, v_name) in pairs {
            if self.has(&g_name) {
                let g = self.get(&g_name, &[1, 1, k])?;
                let v = self.get(&v_name, &[out, inp, k])?;
                let mut norms = vec![0.0f32; k];
                for (idx, val) in v.iter().enumerate() {
                    norms[idx % k] += val * val;
                }
                return Ok(v
                    .iter()
                    .enumerate()
                    .map(|(idx, val)| g[idx % k] * val / norms[idx % k].sqrt())
                    .collect());
            }
        }
        self.get(&format!("{base}.weight"), &[out, inp, k])
    }
}

impl Hubert {
    /// Loads from a directory holding `config.json` and `model.safetensors`,
    /// or from a `.safetensors` file with `config.json` beside it.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, weights_path): (PathBuf, PathBuf) = if path.is_dir() {
            (path.to_path_buf(), path.join("model.safetensors"))
        } else {
            (
                path.parent().unwrap_or(Path::new(".")).to_path_buf(),
                path.to_path_buf(),
            )
        };
        let config_path = dir.join("config.json");
        let config_text = std::fs::read_to_string(&config_path)
            .map_err(|e| ckpt_err(format!("{}: {e}", config_path.display())))?;
        let config: HubertConfig = serde_json::from_str(&config_text)
            .map_err(|e| ckpt_err(format!("{}: {e}", config_path.display())))?;
        let normalize_input = match std::fs::read_to_string(dir.join("preprocessor_config.json")) {
            Ok(text) => serde_json::from_str::<PreprocessorConfig>(&text)
                .map_err(|e| ckpt_err(format!("preprocessor_config.json: {e}")))?
                .do_normalize,
            Err(_) => false,
        };
        let bytes = std::fs::read(&weights_path)
            .map_err(|e| ckpt_err(format!("{}: {e}", weights_path.display())))?;
        Self::from_parts(config, normalize_input, &bytes)
    }

    pub fn from_parts(config: HubertConfig, normalize_input: bool, weights: &[u8]) -> Result<Self> {
        validate_config(&config)?;
        let tensors =
            SafeTensors::deserialize(weights).map_err(|e| ckpt_err(format!("corrupt safetensors: {e}")))?;
        let prefix = if tensors
            .tensor("hubert.feature_projection.projection.weight")
            .is_ok()
        {
            "hubert."
        } else {
            ""
        };
        let store = TensorStore { tensors, prefix };
        let cfg = &config;
        let eps = cfg.layer_norm_eps as f32;
        let h = cfg.hidden_size;

        let mut conv = Vec::with_capacity(cfg.conv_dim.len());
        let mut in_ch = 1;
        for (i, &out_ch) in cfg.conv_dim.iter().enumerate() {
            let k = cfg.conv_kernel[i];
            let name = format!("feature_extractor.conv_layers.{i}");
            let weight = Array2::from_shape_vec(
                (out_ch, in_ch * k),
                store.get(&format!("{name}.conv.weight"), &[out_ch, in_ch, k])?,
            )
            .map_err(|e| ckpt_err(e.to_string()))?;
            let bias = if cfg.conv_bias {
                Some(store.vector(&format!("{name}.conv.bias"), out_ch)?)
            } else {
                None
            };
            let norm = match (cfg.feat_extract_norm.as_str(), i) {
                ("group", 0) => {
                    ConvNorm::Group(store.layer_norm(&format!("{name}.layer_norm"), out_ch, TORCH_NORM_EPS)?)
                }
                ("group", _) => ConvNorm::None,
                _ => ConvNorm::Layer(store.layer_norm(&format!("{name}.layer_norm"), out_ch, TORCH_NORM_EPS)?),
            };
            conv.push(ConvLayer {
                weight,
                bias,
                kernel: k,
                stride: cfg.conv_stride[i],
                norm,
            });
            in_ch = out_ch;
        }

        let projection_norm = if cfg.feat_proj_layer_norm {
            Some(store.layer_norm("feature_projection.layer_norm", in_ch, eps)?)
        } else {
            None
        };
        let projection = store.linear("feature_projection.projection", h, in_ch)?;

        let groups = cfg.num_conv_pos_embedding_groups;
        let kp = cfg.num_conv_pos_embeddings;
        let per_group = h / groups;
        let flat = store.weight_normed_conv("encoder.pos_conv_embed.conv", h, per_group, kp)?;
        let group_weights = (0..groups)
            .map(|g| {
                let start = g * per_group * per_group * kp;
                Array2::from_shape_vec(
                    (per_group, per_group * kp),
                    flat[start..start + per_group * per_group * kp].to_vec(),
                )
                .map_err(|e| ckpt_err(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let pos_conv = PositionalConv {
            weights: group_weights,
            bias: store.vector("encoder.pos_conv_embed.conv.bias", h)?,
            kernel: kp,
        };
        let encoder_norm = store.layer_norm("encoder.layer_norm", h, eps)?;

        let layers = (0..cfg.num_hidden_layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                Ok(EncoderLayer {
                    q: store.linear(&format!("{p}.attention.q_proj"), h, h)?,
                    k: store.linear(&format!("{p}.attention.k_proj"), h, h)?,
                    v: store.linear(&format!("{p}.attention.v_proj"), h, h)?,
                    out: store.linear(&format!("{p}.attention.out_proj"), h, h)?,
                    attn_norm: store.layer_norm(&format!("{p}.layer_norm"), h, eps)?,
                    ff_in: store.linear(
                        &format!("{p}.feed_forward.intermediate_dense"),
                        cfg.intermediate_size,
                        h,
                    )?,
                    ff_out: store.linear(
                        &format!("{p}.feed_forward.output_dense"),
                        h,
                        cfg.intermediate_size,
                    )?,
                    final_norm: store.layer_norm(&format!("{p}.final_layer_norm"), h, eps)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            normalize_input,
            conv,
            projection_norm,
            projection,
            pos_conv,
            encoder_norm,
            layers,
            digest: hex::encode(Sha256::digest(weights)),
            config,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_hidden_layers
    }

    pub fn weights_digest(&self) -> &str {
        &self.digest
    }

    /// Total stride of the convolutional front end, in samples.
    pub fn hop(&self) -> usize {
        self.config.conv_stride.iter().product()
    }

    /// Samples seen by one output frame.
    pub fn receptive_field(&self) -> usize {
        self.config
            .conv_kernel
            .iter()
            .zip(&self.config.conv_stride)
            .rev()
            .fold(1, |r, (&k, &s)| (r - 1) * s + k)
    }

    pub fn frame_stride_s(&self) -> f64 {
        self.hop() as f64 / CANONICAL_RATE as f64
    }

    /// Every hidden state: index 0 is the transformer input, index `L` the
    /// final output.
    pub fn hidden_states(&self, samples: &[f32]) -> Result<Vec<Array2<f32>>> {
        let mut wave: Vec<f32> = samples.to_vec();
        if self.normalize_input {
            let n = wave.len() as f32;
            let mean = wave.iter().sum::<f32>() / n;
            let var = wave.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + 1e-7).sqrt();
            wave.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        let mut x = Array2::from_shape_vec((1, wave.len()), wave).expect("row vector");
        for layer in &self.conv {
            x = layer.forward(x.view())?;
        }
        let mut x = x.reversed_axes().as_standard_layout().into_owned();
        if let Some(ln) = &self.projection_norm {
            x = ln.forward(&x);
        }
        let x = self.projection.forward(x.view());
        let mut x = &x + &self.pos_conv.forward(&x);

        let heads = self.config.num_attention_heads;
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        if self.config.do_stable_layer_norm {
            for layer in &self.layers {
                states.push(x.clone());
                x = layer.forward_pre_norm(&x, heads);
            }
            states.push(self.encoder_norm.forward(&x));
        } else {
            x = self.encoder_norm.forward(&x);
            for layer in &self.layers {
                states.push(x.clone());
                x = layer.forward_post_norm(&x, heads);
            }
            states.push(x);
        }
        Ok(states)
    }

    pub fn encode(&self, samples: &[f32], layer: Option<usize>) -> Result<FeatureSequence> {
        let mut states = self.hidden_states(samples)?;
        let idx = layer.unwrap_or(self.layers.len());
        if idx >= states.len() {
            return Err(Error::Config(format!("layer {idx} out of range")));
        }
        let chosen = states.swap_remove(idx);
        Ok(FeatureSequence {
            frames: chosen.mapv(f64::from),
            frame_stride_s: self.frame_stride_s(),
            frame_offset_s: self.receptive_field() as f64 / 2.0 / CANONICAL_RATE as f64,
        })
    }
}

fn validate_config(cfg: &HubertConfig) -> Result<()> {
    let n = cfg.conv_dim.len();
    if n == 0 || cfg.conv_kernel.len() != n || cfg.conv_stride.len() != n {
        return Err(ckpt_err("conv_dim, conv_kernel and conv_stride must have equal nonzero length"));
    }
    if !matches!(cfg.feat_extract_norm.as_str(), "group" | "layer") {
        return Err(ckpt_err(format!(
            "unsupported feat_extract_norm {:?}",
            cfg.feat_extract_norm
        )));
    }
    if cfg.hidden_act != "gelu" || cfg.feat_extract_activation != "gelu" {
        return Err(ckpt_err("only gelu activations are supported"));
    }
    if cfg.conv_pos_batch_norm {
        return Err(ckpt_err("batch-normalized positional conv is not supported"));
    }
    if cfg.num_attention_heads == 0
        || !cfg.hidden_size.is_multiple_of(cfg.num_attention_heads)
        || cfg.num_conv_pos_embedding_groups == 0
        || !cfg.hidden_size.is_multiple_of(cfg.num_conv_pos_embedding_groups)
    {
        return Err(ckpt_err("hidden_size must divide evenly into heads and conv groups"));
    }
    Ok(())
}
