//! Self-attention distillation feature extractor.
//!
//! A `160×4` segment is lifted to `d_model` channels by a width-3
//! convolution plus a positional encoding, then passed through `n_layers`
//! blocks of multi-head attention followed by a conv/ELU/max-pool step that
//! halves the sequence length.

use diffcore::{Padding, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{N_CHANNELS, SEGMENT_LEN};
use crate::error::{Result, SkdanError};

/// Width of the embedding and distillation convolutions.
pub const SAD_KERNEL: usize = 3;

/// Denominator base of the positional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalBase {
    /// `2n` with `n` the sequence length.
    #[default]
    TwiceLength,
    /// The customary constant 10000.
    Classic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SadConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub positional_base: PositionalBase,
    /// Attention sublayers present; off for the "no attention" ablation.
    #[serde(default = "yes")]
    pub attention: bool,
    /// Distillation (length-halving) present; off keeps the full length.
    #[serde(default = "yes")]
    pub distillation: bool,
}

fn yes() -> bool {
    true
}

impl Default for SadConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 2,
            n_layers: 2,
            positional_base: PositionalBase::TwiceLength,
            attention: true,
            distillation: true,
        }
    }
}

impl SadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(SkdanError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(SkdanError::Config(format!(
                "d_model must be even, got {}",
                self.d_model
            )));
        }
        if self.distillation && SEGMENT_LEN >> self.n_layers.min(63) < 1 {
            return Err(SkdanError::Config(format!(
                "{} layers leave no sequence",
                self.n_layers
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Sequence length after the extractor for a `SEGMENT_LEN` input.
    pub fn output_len(&self) -> usize {
        if self.distillation {
            SEGMENT_LEN >> self.n_layers
        } else {
            SEGMENT_LEN
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SadLayerParams<T> {
    /// Empty when attention is disabled.
    pub heads: Vec<HeadParams<T>>,
    /// Kernel and bias, absent when distillation is disabled.
    pub distill: Option<(T, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SadParams<T> {
    pub embed_kernel: T,
    pub embed_bias: T,
    pub layers: Vec<SadLayerParams<T>>,
}

impl<T> SadParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> SadParams<U> {
        SadParams {
            embed_kernel: f(&self.embed_kernel),
            embed_bias: f(&self.embed_bias),
            layers: self
                .layers
                .iter()
                .map(|l| SadLayerParams {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadParams {
                            wq: f(&h.wq),
                            wk: f(&h.wk),
                            wv: f(&h.wv),
                        })
                        .collect(),
                    distill: l.distill.as_ref().map(|(w, b)| (f(w), f(b))),
                })
                .collect(),
        }
    }

    /// Mutable references in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed_kernel, &mut self.embed_bias];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.extend([&mut h.wq, &mut h.wk, &mut h.wv]);
            }
            if let Some((w, b)) = &mut l.distill {
                out.extend([w, b]);
            }
        }
        out
    }
}

/// Uniform in `±√(6/(fan_in+fan_out))`.
pub(crate) fn glorot<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub(crate) fn conv_init<R: Rng + ?Sized>(
    k: usize,
    c_in: usize,
    c_out: usize,
    rng: &mut R,
) -> (Tensor, Tensor) {
    (
        glorot(&[k, c_in, c_out], k * c_in, k * c_out, rng),
        Tensor::zeros(&[c_out]),
    )
}

impl SadParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &SadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let dk = cfg.head_dim();
        let (embed_kernel, embed_bias) = conv_init(SAD_KERNEL, N_CHANNELS, d, rng);
        let layers = (0..cfg.n_layers)
            .map(|_| SadLayerParams {
                heads: if cfg.attention {
                    (0..cfg.n_heads)
                        .map(|_| HeadParams {
                            wq: glorot(&[d, dk], d, dk, rng),
                            wk: glorot(&[d, dk], d, dk, rng),
                            wv: glorot(&[d, dk], d, dk, rng),
                        })
                        .collect()
                } else {
                    Vec::new()
                },
                distill: cfg.distillation.then(|| conv_init(SAD_KERNEL, d, d, rng)),
            })
            .collect();
        Ok(Self {
            embed_kernel,
            embed_bias,
            layers,
        })
    }
}

/// `P[k,2j] = sin(k/b^{2j/d})`, `P[k,2j+1] = cos(k/b^{2j/d})`.
pub fn positional_encoding(n: usize, d_model: usize, base: PositionalBase) -> Result<Tensor> {
    if n == 0 || d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(SkdanError::Config(format!(
            "positional encoding needs n ≥ 1 and even d_model, got n={n}, d_model={d_model}"
        )));
    }
    let b = match base {
        PositionalBase::TwiceLength => 2.0 * n as f64,
        PositionalBase::Classic => 10_000.0,
    };
    let mut data = vec![0.0; n * d_model];
    for k in 0..n {
        for j in 0..d_model / 2 {
            let angle = k as f64 / b.powf(2.0 * j as f64 / d_model as f64);
            data[k * d_model + 2 * j] = angle.sin();
            data[k * d_model + 2 * j + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![n, d_model], data)?)
}

/// `G = P + Conv1d(X)` with same padding.
pub fn embed_input(
    tape: &mut Tape,
    x: Var,
    params: &SadParams<Var>,
    cfg: &SadConfig,
) -> Result<Var> {
    let (n, c) = tape.value(x).dims2();
    if c != N_CHANNELS {
        return Err(SkdanError::Tensor(diffcore::DiffError::Dimension {
            op: "embed_input",
            left: tape.value(x).shape().to_vec(),
            right: vec![n, N_CHANNELS],
        }));
    }
    let conv = tape.conv1d(x, params.embed_kernel, params.embed_bias, Padding::Same)?;
    let pe = tape.leaf(positional_encoding(n, cfg.d_model, cfg.positional_base)?);
    Ok(tape.add(conv, pe)?)
}

/// Concatenated per-head `softmax(QKᵀ/√d_k)·V`, plus each head's weight matrix.
pub fn multi_head_attention(
    tape: &mut Tape,
    g: Var,
    heads: &[HeadParams<Var>],
) -> Result<(Var, Vec<Var>)> {
    let mut outputs = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    for h in heads {
        let q = tape.matmul(g, h.wq)?;
        let k = tape.matmul(g, h.wk)?;
        let v = tape.matmul(g, h.wv)?;
        let dk = tape.value(q).dims2().1;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let a = tape.softmax_rows(scores);
        outputs.push(tape.matmul(a, v)?);
        weights.push(a);
    }
    Ok((tape.concat_cols(&outputs)?, weights))
}

/// `MaxPool(ELU(Conv1d(H)))` with pool window and stride 2.
pub fn distill(tape: &mut Tape, h: Var, kernel: Var, bias: Var) -> Result<Var> {
    let n = tape.value(h).dims2().0;
    if n < 2 {
        return Err(SkdanError::Tensor(diffcore::DiffError::Length {
            op: "distill",
            detail: format!("sequence of length {n} cannot be halved"),
        }));
    }
    let c = tape.conv1d(h, kernel, bias, Padding::Same)?;
    let e = tape.elu(c);
    Ok(tape.maxpool1d(e, 2, 2)?)
}

/// Feature map of one segment, `L×d_model`.
pub fn extract_features(
    tape: &mut Tape,
    x: Var,
    params: &SadParams<Var>,
    cfg: &SadConfig,
) -> Result<Var> {
    let mut h = embed_input(tape, x, params, cfg)?;
    for layer in &params.layers {
        if !layer.heads.is_empty() {
            h = multi_head_attention(tape, h, &layer.heads)?.0;
        }
        if let Some((w, b)) = layer.distill {
            h = distill(tape, h, w, b)?;
        }
    }
    Ok(h)
}
