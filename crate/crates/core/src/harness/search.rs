use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::fit_with_validation;
use super::{AblationFlags, HyperConfig};
use crate::datapipe::DomainDataset;
use crate::error::{Result, SkdanError};
use crate::losses::BankSpec;
use crate::sad::PositionalBase;

const SPLIT_STREAM: u64 = 0x5_711;
const DRAW_STREAM: u64 = 0xd2_a3;

/// Bounds for log-uniform draws and choice sets for discrete fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub lambda: (f64, f64),
    pub beta: (f64, f64),
    pub batch_size: Vec<usize>,
    pub n_layers: Vec<usize>,
    pub d_model: Vec<usize>,
    pub n_heads: Vec<usize>,
    pub kernel_size: Vec<usize>,
    pub fnn_width: Vec<usize>,
    pub dropout: Vec<f64>,
    pub conv_channels: [usize; 2],
    pub gamma_noise: f64,
    pub max_epochs: usize,
    pub positional_base: PositionalBase,
    pub kernel_bank: BankSpec,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-5, 1e-2),
            lambda: (0.1, 3.0),
            beta: (0.01, 0.5),
            batch_size: vec![16, 32, 64],
            n_layers: vec![1, 2, 3],
            d_model: vec![64, 128],
            n_heads: vec![2, 4],
            kernel_size: vec![3, 5, 7],
            fnn_width: vec![16, 32, 64],
            dropout: vec![0.2, 0.3, 0.4],
            conv_channels: [32, 16],
            gamma_noise: 0.01,
            max_epochs: 200,
            positional_base: PositionalBase::TwiceLength,
            kernel_bank: BankSpec::default(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("learning_rate", self.learning_rate),
            ("lambda", self.lambda),
            ("beta", self.beta),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(SkdanError::Config(format!(
                    "{name} range ({lo}, {hi}) must satisfy 0 < lo ≤ hi"
                )));
            }
        }
        let empty = [
            ("batch_size", self.batch_size.is_empty()),
            ("n_layers", self.n_layers.is_empty()),
            ("d_model", self.d_model.is_empty()),
            ("n_heads", self.n_heads.is_empty()),
            ("kernel_size", self.kernel_size.is_empty()),
            ("fnn_width", self.fnn_width.is_empty()),
            ("dropout", self.dropout.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(SkdanError::Config(format!("choice set {name} is empty")));
        }
        // every combination must be a valid configuration
        for &d in &self.d_model {
            for &h in &self.n_heads {
                for &k in &self.kernel_size {
                    let hp = HyperConfig {
                        d_model: d,
                        n_heads: h,
                        kernel_size: k,
                        ..self.draw(&mut diffcore::rng::stream(0, 0), 0)
                    };
                    hp.validate()?;
                }
            }
        }
        Ok(())
    }

    /// One configuration; `seed` becomes the run seed.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> HyperConfig {
        let log_uniform = |rng: &mut R, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..hi.ln()).exp()
            }
        };
        HyperConfig {
            learning_rate: log_uniform(rng, self.learning_rate),
            lambda: log_uniform(rng, self.lambda),
            beta: log_uniform(rng, self.beta),
            batch_size: *self.batch_size.choose(rng).expect("non-empty"),
            n_layers: *self.n_layers.choose(rng).expect("non-empty"),
            d_model: *self.d_model.choose(rng).expect("non-empty"),
            n_heads: *self.n_heads.choose(rng).expect("non-empty"),
            kernel_size: *self.kernel_size.choose(rng).expect("non-empty"),
            fnn_width: *self.fnn_width.choose(rng).expect("non-empty"),
            dropout: *self.dropout.choose(rng).expect("non-empty"),
            conv_channels: self.conv_channels,
            gamma_noise: self.gamma_noise,
            max_epochs: self.max_epochs,
            seed,
            positional_base: self.positional_base,
            kernel_bank: self.kernel_bank.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub n_trials: usize,
    pub master_seed: u64,
    /// Share of source samples held out for ranking.
    pub val_fraction: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            n_trials: 100,
            master_seed: 0,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub hyper: HyperConfig,
    /// `None` when training failed; see `error`.
    pub val_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: HyperConfig,
    /// Trials ranked by validation RMSE (failed trials last, then by id).
    pub leaderboard: Vec<TrialResult>,
}

/// Seeded split of a labeled domain into (train, validation).
pub fn validation_split(
    source: &DomainDataset,
    fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SkdanError::Config(format!(
            "validation fraction must be in (0,1), got {fraction}"
        )));
    }
    let n = source.len();
    let n_val = ((n as f64 * fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(SkdanError::Data(format!(
            "{n} source samples are too few to hold out a validation set"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut diffcore::rng::stream(seed, SPLIT_STREAM));
    let (val, train) = idx.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((source.subset(&train), source.subset(&val)))
}

/// Trains `n_trials` random configurations on the source training split and
/// ranks them by RMSE on the held-out source samples.
pub fn random_search(
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &SearchConfig,
    flags: &AblationFlags,
) -> Result<SearchOutcome> {
    if cfg.n_trials == 0 {
        return Err(SkdanError::Config(
            "random search needs at least one trial".into(),
        ));
    }
    cfg.space.validate()?;
    let (train, val) = validation_split(source, cfg.val_fraction, cfg.master_seed)?;
    let draws: Vec<HyperConfig> = (0..cfg.n_trials)
        .map(|t| {
            let mut rng = diffcore::rng::stream(cfg.master_seed, DRAW_STREAM + t as u64);
            cfg.space.draw(
                &mut rng,
                diffcore::rng::derive_seed(cfg.master_seed, t as u64),
            )
        })
        .collect();
    let mut leaderboard: Vec<TrialResult> = draws
        .into_par_iter()
        .enumerate()
        .map(|(trial, hyper)| {
            let outcome = fit_with_validation(&train, target, Some(&val), &hyper, flags);
            let (val_rmse, error) = match outcome {
                Ok(f) => (f.best_val_rmse, None),
                Err(e) => (None, Some(e.to_string())),
            };
            log::info!("trial {trial}: val RMSE {val_rmse:?}");
            TrialResult {
                trial,
                hyper,
                val_rmse,
                error,
            }
        })
        .collect();
    leaderboard.sort_by(|a, b| match (a.val_rmse, b.val_rmse) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.trial.cmp(&b.trial)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.trial.cmp(&b.trial),
    });
    let best = match leaderboard.first() {
        Some(TrialResult {
            val_rmse: Some(_),
            hyper,
            ..
        }) => hyper.clone(),
        _ => {
            return Err(SkdanError::Config(format!(
                "all {} trials failed; first error: {}",
                cfg.n_trials,
                leaderboard[0].error.as_deref().unwrap_or("unknown")
            )))
        }
    };
    Ok(SearchOutcome { best, leaderboard })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_brackets_reference_values() {
        let s = SearchSpace::default();
        for lr in [7.5e-4, 5.6e-5, 4.7e-3] {
            assert!(s.learning_rate.0 <= lr && lr <= s.learning_rate.1);
        }
        for l in [0.72, 1.33, 1.06] {
            assert!(s.lambda.0 <= l && l <= s.lambda.1);
        }
        for b in [0.08, 0.05, 0.12] {
            assert!(s.beta.0 <= b && b <= s.beta.1);
        }
        assert!(s.validate().is_ok());
    }

    #[test]
    fn draws_stay_in_bounds_and_repeat() {
        let s = SearchSpace::default();
        for t in 0..200 {
            let hp = s.draw(&mut diffcore::rng::stream(9, t), t);
            assert!((1e-5..=1e-2).contains(&hp.learning_rate));
            assert!(s.kernel_size.contains(&hp.kernel_size));
            assert!(hp.validate().is_ok());
            assert_eq!(hp, s.draw(&mut diffcore::rng::stream(9, t), t));
        }
    }

    #[test]
    fn invalid_spaces_are_config_errors() {
        let bad = SearchSpace {
            kernel_size: vec![2, 3],
            ..SearchSpace::default()
        };
        assert_eq!(bad.validate().unwrap_err().category(), "config");
        let empty = SearchSpace {
            dropout: vec![],
            ..SearchSpace::default()
        };
        assert!(empty.validate().is_err());
        let inverted = SearchSpace {
            lambda: (2.0, 1.0),
            ..SearchSpace::default()
        };
        assert!(inverted.validate().is_err());
    }
}
