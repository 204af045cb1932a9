//! Training, evaluation, hyperparameter search and experiment orchestration.

mod experiment;
mod metrics;
mod search;
mod train;

use serde::{Deserialize, Serialize};

pub use experiment::{
    feature_values, load_experiment, run_experiment, run_experiment_file, ExperimentFile,
    ExperimentReport, MeanStd, RepeatReport, SplitMode, KDE_GRID,
};
pub use metrics::{evaluate, evaluate_predictions, score_fn, score_mean, EvalReport};
pub use search::{
    random_search, validation_split, SearchConfig, SearchOutcome, SearchSpace, TrialResult,
};
pub use train::{fit, fit_with_validation, EpochLosses, Fitted, LossTrace};

use crate::error::{Result, SkdanError};
use crate::losses::{BankSpec, LossWeights};
use crate::model::ModelConfig;
use crate::predictor::PredictorConfig;
use crate::sad::{PositionalBase, SadConfig};

/// Everything a single training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub kernel_size: usize,
    pub conv_channels: [usize; 2],
    pub fnn_width: usize,
    pub dropout: f64,
    /// Smoothness weight β.
    pub beta: f64,
    /// MMD weight λ.
    pub lambda: f64,
    pub gamma_noise: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub positional_base: PositionalBase,
    pub kernel_bank: BankSpec,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 5.6e-5,
            n_layers: 2,
            d_model: 128,
            n_heads: 2,
            kernel_size: 3,
            conv_channels: [32, 16],
            fnn_width: 64,
            dropout: 0.3,
            beta: 0.05,
            lambda: 1.33,
            gamma_noise: 0.01,
            max_epochs: 200,
            seed: 0,
            positional_base: PositionalBase::TwiceLength,
            kernel_bank: BankSpec::default(),
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.n_layers == 0 {
            return Err(SkdanError::Config(
                "batch_size, max_epochs and n_layers must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SkdanError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.weights(&AblationFlags::default()).validate()?;
        self.model_config(&AblationFlags::default()).validate()
    }

    /// Architecture after applying the ablation switches.
    pub fn model_config(&self, flags: &AblationFlags) -> ModelConfig {
        ModelConfig {
            sad: SadConfig {
                d_model: self.d_model,
                n_heads: self.n_heads,
                n_layers: self.n_layers,
                positional_base: self.positional_base,
                attention: !flags.disable_attention,
                distillation: !flags.disable_distillation,
            },
            predictor: PredictorConfig {
                kernel_size: self.kernel_size,
                conv_channels: self.conv_channels,
                fnn_width: self.fnn_width,
                dropout: self.dropout,
                gamma_noise: self.gamma_noise,
                conv: !flags.fnn_predictor,
            },
        }
    }

    /// Loss weights after applying the ablation switches.
    pub fn weights(&self, flags: &AblationFlags) -> LossWeights {
        LossWeights {
            lambda: if flags.disable_adaptation {
                0.0
            } else {
                self.lambda
            },
            beta: if flags.disable_smoothness {
                0.0
            } else {
                self.beta
            },
        }
    }
}

/// Independent switches that remove one component each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub disable_attention: bool,
    pub disable_distillation: bool,
    /// Plain feed-forward predictor without conv blocks.
    pub fnn_predictor: bool,
    pub disable_smoothness: bool,
    /// λ forced to 0: no domain alignment.
    pub disable_adaptation: bool,
}
