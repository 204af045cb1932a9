//! Extractor + predictor pair and its on-disk container.
//!
//! ```text
//! magic "SKDANMD\0" | version u32 | config_len u32 | config JSON (utf-8)
//! n_params u32 | per parameter: ndim u32 | dims u64… | values f64…
//! ```
//!
//! Parameters follow declaration order: extractor embedding, then each
//! layer's heads (Q, K, V) and distillation conv, then predictor convs and
//! the two dense layers.

use std::path::Path;

use diffcore::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::bundle::{Reader, Writer};
use crate::datapipe::{N_CHANNELS, SEGMENT_LEN};
use crate::error::{Result, SkdanError};
use crate::predictor::{predict_soh, Mode, PredictorConfig, PredictorParams};
use crate::sad::{extract_features, SadConfig, SadParams};

pub const MODEL_MAGIC: &[u8; 8] = b"SKDANMD\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub sad: SadConfig,
    pub predictor: PredictorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.sad.validate()?;
        self.predictor.validate()?;
        self.predictor
            .flat_width(self.sad.output_len(), self.sad.d_model)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub sad: SadParams<T>,
    pub predictor: PredictorParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            sad: self.sad.map(f),
            predictor: self.predictor.map(f),
        }
    }

    /// Mutable references in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = self.sad.params_mut();
        out.extend(self.predictor.params_mut());
        out
    }

    pub fn to_vec(&self) -> Vec<T>
    where
        T: Clone,
    {
        let mut out = Vec::new();
        self.map(&mut |t| out.push(t.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkdanModel {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl SkdanModel {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let sad = SadParams::init(&config.sad, rng)?;
        let predictor = PredictorParams::init(
            &config.predictor,
            config.sad.output_len(),
            config.sad.d_model,
            rng,
        )?;
        Ok(Self {
            config,
            params: ModelParams { sad, predictor },
        })
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.params.map(&mut |t| tape.leaf(t.clone()))
    }

    pub fn n_weights(&self) -> usize {
        self.params.to_vec().iter().map(Tensor::len).sum()
    }

    /// Extracted feature map of one `160×4` input.
    pub fn features(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = self.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let f = extract_features(&mut tape, x, &pv.sad, &self.config.sad)?;
        Ok(tape.value(f).clone())
    }

    /// Eval-mode SOH estimates.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.bind(&mut tape);
        let base = tape.len();
        let mut rng = diffcore::rng::stream(0, 0);
        inputs
            .iter()
            .map(|input| {
                check_input(input)?;
                tape.truncate(base);
                let x = tape.leaf(input.clone());
                let f = extract_features(&mut tape, x, &pv.sad, &self.config.sad)?;
                let y = predict_soh(
                    &mut tape,
                    f,
                    &pv.predictor,
                    &self.config.predictor,
                    Mode::Eval,
                    &mut rng,
                )?;
                Ok(tape.value(y).item())
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.bytes(serde_json::to_string(&self.config)?.as_bytes());
        let params = self.params.to_vec();
        w.u32(params.len() as u32);
        for p in &params {
            w.u32(p.shape().len() as u32);
            for &d in p.shape() {
                w.u64(d as u64);
            }
            w.f64s(p.data());
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(buf, path);
        if r.take(8)? != MODEL_MAGIC {
            return Err(r.err("not a model file (bad magic)"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.err(format!("unsupported model version {version}")));
        }
        let config: ModelConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| r.err(format!("bad config header: {e}")))?;
        config.validate()?;
        // a freshly initialised model fixes the expected parameter layout
        let mut model = Self::init(config, &mut diffcore::rng::stream(0, 0))?;
        let n = r.u32()? as usize;
        let expected = model.params.to_vec().len();
        if n != expected {
            return Err(r.err(format!("{n} parameter blocks, config implies {expected}")));
        }
        for slot in model.params.params_mut() {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != slot.shape() {
                return Err(r.err(format!(
                    "parameter shape {shape:?}, expected {:?}",
                    slot.shape()
                )));
            }
            let data = r.f64s(slot.len())?;
            *slot = Tensor::new(shape, data)?;
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| SkdanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| SkdanError::io(path, e))?;
        Self::from_bytes(&buf, path)
    }
}

pub(crate) fn check_input(input: &Tensor) -> Result<()> {
    if input.shape() != [SEGMENT_LEN, N_CHANNELS] {
        return Err(SkdanError::Tensor(diffcore::DiffError::Dimension {
            op: "model input",
            left: input.shape().to_vec(),
            right: vec![SEGMENT_LEN, N_CHANNELS],
        }));
    }
    Ok(())
}
