//! Convolutional SOH regressor with a smoothness penalty.

use diffcore::{Padding, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkdanError};
use crate::sad::{conv_init, glorot};

pub const POOL_SIZE: usize = 4;
pub const POOL_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kernel_size: usize,
    /// Output channels of the two conv blocks.
    pub conv_channels: [usize; 2],
    pub fnn_width: usize,
    pub dropout: f64,
    /// Scale of the Gaussian input perturbation in the smoothness loss.
    pub gamma_noise: f64,
    /// Conv blocks present; off for the plain feed-forward ablation.
    #[serde(default = "yes")]
    pub conv: bool,
}

fn yes() -> bool {
    true
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            conv_channels: [32, 16],
            fnn_width: 32,
            dropout: 0.2,
            gamma_noise: 0.01,
            conv: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(SkdanError::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SkdanError::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if !(self.gamma_noise >= 0.0) {
            return Err(SkdanError::Config(format!(
                "gamma_noise must be ≥ 0, got {}",
                self.gamma_noise
            )));
        }
        if self.fnn_width == 0 || self.conv_channels.contains(&0) {
            return Err(SkdanError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the flattened vector fed to the FNN for an `len×channels` feature map.
    pub fn flat_width(&self, len: usize, channels: usize) -> Result<usize> {
        if !self.conv {
            return Ok(len * channels);
        }
        let l1 = pooled_len(len)?;
        let l2 = pooled_len(l1)?;
        Ok(l2 * self.conv_channels[1])
    }
}

/// `⌊(L−4)/4⌋+1`.
pub fn pooled_len(len: usize) -> Result<usize> {
    if len < POOL_SIZE {
        return Err(SkdanError::Tensor(diffcore::DiffError::Length {
            op: "conv_block",
            detail: format!("sequence length {len} is shorter than the pool size {POOL_SIZE}"),
        }));
    }
    Ok((len - POOL_SIZE) / POOL_STRIDE + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams<T> {
    /// `(kernel, bias)` per conv block; empty in the feed-forward ablation.
    pub convs: Vec<(T, T)>,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<T> PredictorParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> PredictorParams<U> {
        PredictorParams {
            convs: self.convs.iter().map(|(w, b)| (f(w), f(b))).collect(),
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for (w, b) in &mut self.convs {
            out.extend([w, b]);
        }
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        out
    }
}

impl PredictorParams<Tensor> {
    /// Parameters for an `len×channels` feature map.
    pub fn init<R: Rng + ?Sized>(
        cfg: &PredictorConfig,
        len: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let convs = if cfg.conv {
            let [c1, c2] = cfg.conv_channels;
            vec![
                conv_init(cfg.kernel_size, channels, c1, rng),
                conv_init(cfg.kernel_size, c1, c2, rng),
            ]
        } else {
            Vec::new()
        };
        let flat = cfg.flat_width(len, channels)?;
        Ok(Self {
            convs,
            w1: glorot(&[flat, cfg.fnn_width], flat, cfg.fnn_width, rng),
            b1: Tensor::zeros(&[cfg.fnn_width]),
            w2: glorot(&[cfg.fnn_width, 1], cfg.fnn_width, 1, rng),
            b2: Tensor::zeros(&[1]),
        })
    }
}

/// Same-padded conv, ReLU, then max-pool with window and stride 4.
pub fn conv_block(tape: &mut Tape, f: Var, kernel: Var, bias: Var) -> Result<Var> {
    pooled_len(tape.value(f).dims2().0)?;
    let c = tape.conv1d(f, kernel, bias, Padding::Same)?;
    let r = tape.relu(c);
    Ok(tape.maxpool1d(r, POOL_SIZE, POOL_STRIDE)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Scalar SOH estimate (`1×1`) for one feature map.
///
/// Dropout after flattening is active only in [`Mode::Train`]; `rng` is
/// untouched in eval mode.
pub fn predict_soh<R: Rng + ?Sized>(
    tape: &mut Tape,
    features: Var,
    params: &PredictorParams<Var>,
    cfg: &PredictorConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let mut h = features;
    for &(w, b) in &params.convs {
        h = conv_block(tape, h, w, b)?;
    }
    let width = tape.value(h).len();
    let z = tape.reshape(h, &[1, width])?;
    let z = tape.dropout(z, cfg.dropout, rng, mode == Mode::Train)?;
    let hidden = tape.matmul(z, params.w1)?;
    let hidden = tape.add_row_bias(hidden, params.b1)?;
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, params.w2)?;
    Ok(tape.add_row_bias(out, params.b2)?)
}

/// Mean over the batch of `(f_p(F) − f_p(F + γδ))²`, both branches in eval
/// mode, with `δ` standard normal drawn from `rng`.
pub fn smooth_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    features: &[Var],
    params: &PredictorParams<Var>,
    cfg: &PredictorConfig,
    rng: &mut R,
) -> Result<Var> {
    if features.is_empty() {
        return Err(SkdanError::Data("smoothness loss of an empty batch".into()));
    }
    let mut diffs = Vec::with_capacity(features.len());
    for &f in features {
        let shape = tape.value(f).shape().to_vec();
        let n: usize = shape.iter().product();
        let noise = diffcore::rng::standard_normal(rng, n)
            .into_iter()
            .map(|z| cfg.gamma_noise * z)
            .collect();
        let delta = tape.leaf(Tensor::new(shape, noise)?);
        let perturbed = tape.add(f, delta)?;
        let clean = predict_soh(tape, f, params, cfg, Mode::Eval, rng)?;
        let noisy = predict_soh(tape, perturbed, params, cfg, Mode::Eval, rng)?;
        diffs.push(tape.sub(clean, noisy)?);
    }
    let d = tape.stack_rows(&diffs)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}
