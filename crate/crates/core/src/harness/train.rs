use std::fmt::Write as _;

use diffcore::{adam_step, AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::{AblationFlags, HyperConfig};
use crate::datapipe::DomainDataset;
use crate::error::{Result, SkdanError};
use crate::losses::overall_loss;
use crate::model::SkdanModel;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Loss components averaged over the steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub prediction: f64,
    pub mmd: f64,
    pub smooth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochLosses>,
}

impl LossTrace {
    pub const HEADER: &'static str = "epoch,l_pre,l_mmd,l_smooth,total";

    /// CSV rows without a header, each prefixed by `prefix` when given.
    pub fn csv_rows(&self, prefix: Option<&str>) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            if let Some(p) = prefix {
                out.push_str(p);
                out.push(',');
            }
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.prediction, e.mmd, e.smooth, e.total
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::HEADER, self.csv_rows(None))
    }

    pub fn last(&self) -> Option<&EpochLosses> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: SkdanModel,
    pub trace: LossTrace,
    /// Epoch whose parameters were kept when validating; otherwise the last.
    pub best_epoch: usize,
    pub best_val_rmse: Option<f64>,
}

/// Trains on labeled `source` while aligning features with `target`.
///
/// Only the inputs of `target` are read.
pub fn fit(
    source: &DomainDataset,
    target: &DomainDataset,
    hp: &HyperConfig,
    flags: &AblationFlags,
) -> Result<Fitted> {
    fit_with_validation(source, target, None, hp, flags)
}

/// [`fit`] that keeps the parameters with the lowest RMSE on `validation`.
pub fn fit_with_validation(
    source: &DomainDataset,
    target: &DomainDataset,
    validation: Option<&DomainDataset>,
    hp: &HyperConfig,
    flags: &AblationFlags,
) -> Result<Fitted> {
    hp.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(SkdanError::Data(format!(
            "training needs non-empty domains, got {} source and {} target samples",
            source.len(),
            target.len()
        )));
    }
    if !source.is_normalized() || !target.is_normalized() {
        return Err(SkdanError::Data(
            "training domains must be normalized first".into(),
        ));
    }
    let labels = source
        .labels()
        .filter(|_| source.labeled)
        .ok_or_else(|| SkdanError::Data("source domain must be labeled".into()))?;
    let src_inputs = source.inputs();
    let tgt_inputs = target.inputs();
    let weights = hp.weights(flags);

    let mut model = SkdanModel::init(
        hp.model_config(flags),
        &mut diffcore::rng::stream(hp.seed, INIT_STREAM),
    )?;
    // start the output bias at the mean label so early steps shape features
    // instead of chasing the offset
    let mean_label = labels.iter().sum::<f64>() / labels.len() as f64;
    model.params.predictor.b2 = Tensor::vector(&[mean_label]);

    let mut adam = AdamState::new(hp.learning_rate, model.params.to_vec().iter());
    let mut shuffle_rng = diffcore::rng::stream(hp.seed, SHUFFLE_STREAM);
    let mut noise_rng = diffcore::rng::stream(hp.seed, NOISE_STREAM);
    let mut src_order: Vec<usize> = (0..src_inputs.len()).collect();
    let mut tgt_order: Vec<usize> = (0..tgt_inputs.len()).collect();
    tgt_order.shuffle(&mut shuffle_rng);
    let mut tgt_pos = 0;

    let mut trace = LossTrace::default();
    let mut best: Option<(f64, usize, SkdanModel)> = None;
    for epoch in 1..=hp.max_epochs {
        src_order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in src_order.chunks(hp.batch_size) {
            let xs: Vec<Tensor> = chunk.iter().map(|&i| src_inputs[i].clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let n_t = chunk.len().min(tgt_inputs.len());
            let mut xt = Vec::with_capacity(n_t);
            for _ in 0..n_t {
                if tgt_pos == tgt_order.len() {
                    tgt_order.shuffle(&mut shuffle_rng);
                    tgt_pos = 0;
                }
                xt.push(tgt_inputs[tgt_order[tgt_pos]].clone());
                tgt_pos += 1;
            }

            let mut tape = Tape::new();
            let pv = model.bind(&mut tape);
            let terms = overall_loss(
                &mut tape,
                &pv,
                &model,
                &xs,
                &ys,
                &xt,
                weights,
                &hp.kernel_bank,
                &mut noise_rng,
            )?;
            let v = terms.values(&tape);
            for (term, value) in [
                ("L_pre", v.prediction),
                ("L_MMD", v.mmd),
                ("L_smooth", v.smooth),
                ("total", v.total),
            ] {
                if !value.is_finite() {
                    return Err(SkdanError::Training { epoch, term });
                }
            }
            let grads = tape.backward(terms.total)?;
            let vars = pv.to_vec();
            let grad_list: Vec<Tensor> = vars
                .iter()
                .map(|&var| grads.get_or_zeros(var, tape.value(var)))
                .collect();
            let mut params = model.params.params_mut();
            adam_step(&mut params, &grad_list, &mut adam)?;

            for (s, x) in sums
                .iter_mut()
                .zip([v.prediction, v.mmd, v.smooth, v.total])
            {
                *s += x;
            }
            steps += 1;
        }
        let k = steps as f64;
        trace.epochs.push(EpochLosses {
            epoch,
            prediction: sums[0] / k,
            mmd: sums[1] / k,
            smooth: sums[2] / k,
            total: sums[3] / k,
        });
        if let Some(val) = validation {
            let rmse = evaluate(&model, val)?.rmse;
            if !rmse.is_finite() {
                return Err(SkdanError::Training {
                    epoch,
                    term: "validation RMSE",
                });
            }
            if best.as_ref().is_none_or(|(b, _, _)| rmse < *b) {
                best = Some((rmse, epoch, model.clone()));
            }
        }
        log::debug!("epoch {epoch}: {:?}", trace.last());
    }

    Ok(match best {
        Some((rmse, epoch, m)) => Fitted {
            model: m,
            trace,
            best_epoch: epoch,
            best_val_rmse: Some(rmse),
        },
        None => Fitted {
            model,
            trace,
            best_epoch: hp.max_epochs,
            best_val_rmse: None,
        },
    })
}
