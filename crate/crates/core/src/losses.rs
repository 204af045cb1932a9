//! Training objective: source MSE, multi-kernel MMD between source and
//! target features, and the smoothness penalty.

use diffcore::{Tape, Tensor, Var, WeightedKernel};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkdanError};
use crate::model::{ModelParams, SkdanModel};
use crate::predictor::{predict_soh, smooth_loss, Mode};
use crate::sad::extract_features;

/// Gaussian kernels with mixing weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    sigmas: Vec<f64>,
    weights: Vec<f64>,
}

impl KernelBank {
    pub fn new(sigmas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() || sigmas.len() != weights.len() {
            return Err(SkdanError::Config(format!(
                "kernel bank needs matching non-empty bandwidths and weights, got {} and {}",
                sigmas.len(),
                weights.len()
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SkdanError::Config(format!(
                "bandwidths must be positive: {sigmas:?}"
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(SkdanError::Config(format!(
                "weights must be ≥ 0 and sum to 1: {weights:?}"
            )));
        }
        Ok(Self { sigmas, weights })
    }

    /// Equal weights over `sigmas`.
    pub fn uniform(sigmas: Vec<f64>) -> Result<Self> {
        let w = 1.0 / sigmas.len().max(1) as f64;
        let n = sigmas.len();
        Self::new(sigmas, vec![w; n])
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    /// Bandwidths at `multipliers` times the median pairwise distance of
    /// `rows`, equal weights. A zero median (all rows equal) falls back to 1.
    pub fn median_heuristic(rows: &Tensor, multipliers: &[f64]) -> Result<Self> {
        let median = median_pairwise_distance(rows);
        let base = if median > 0.0 { median } else { 1.0 };
        Self::uniform(multipliers.iter().map(|m| m * base).collect())
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernels(&self) -> Vec<WeightedKernel> {
        self.sigmas
            .iter()
            .zip(&self.weights)
            .map(|(&sigma, &weight)| WeightedKernel { sigma, weight })
            .collect()
    }
}

/// How each training step picks its kernel bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankSpec {
    /// Median pairwise distance of the joint batch times each multiplier.
    Median {
        multipliers: Vec<f64>,
    },
    Fixed(KernelBank),
}

impl Default for BankSpec {
    fn default() -> Self {
        Self::Median {
            multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl BankSpec {
    pub fn resolve(&self, joint_rows: &Tensor) -> Result<KernelBank> {
        match self {
            Self::Median { multipliers } => KernelBank::median_heuristic(joint_rows, multipliers),
            Self::Fixed(bank) => Ok(bank.clone()),
        }
    }
}

fn median_pairwise_distance(rows: &Tensor) -> f64 {
    let (n, d) = rows.dims2();
    let x = rows.data();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..d).map(|c| (x[i * d + c] - x[j * d + c]).powi(2)).sum();
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// MMD weight λ.
    pub lambda: f64,
    /// Smoothness weight β.
    pub beta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return Err(SkdanError::Config(format!(
                "loss weights must be non-negative, got λ={} β={}",
                self.lambda, self.beta
            )));
        }
        Ok(())
    }
}

/// Mean squared residual.
pub fn prediction_loss(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() || pred.is_empty() {
        return Err(SkdanError::Tensor(diffcore::DiffError::Dimension {
            op: "prediction_loss",
            left: vec![pred.len()],
            right: vec![label.len()],
        }));
    }
    Ok(pred
        .iter()
        .zip(label)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

fn stack(fs: &[Vec<f64>], ft: &[Vec<f64>]) -> Result<Tensor> {
    if fs.is_empty() || ft.is_empty() {
        return Err(SkdanError::Data(
            "mk_mmd needs non-empty source and target samples".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = fs.iter().chain(ft).cloned().collect();
    Ok(Tensor::from_rows(&rows)?)
}

/// Biased multi-kernel MMD estimate between two samples of feature vectors.
pub fn mk_mmd(fs: &[Vec<f64>], ft: &[Vec<f64>], bank: &KernelBank) -> Result<f64> {
    let joint = stack(fs, ft)?;
    let mut tape = Tape::new();
    let z = tape.leaf(joint);
    let m = tape.mk_mmd(z, fs.len(), &bank.kernels())?;
    Ok(tape.value(m).item())
}

/// [`mk_mmd`] with the bank picked from the joint sample by `spec`.
pub fn mk_mmd_with(fs: &[Vec<f64>], ft: &[Vec<f64>], spec: &BankSpec) -> Result<f64> {
    let bank = spec.resolve(&stack(fs, ft)?)?;
    mk_mmd(fs, ft, &bank)
}

/// Tape nodes of one evaluation of the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub prediction: Var,
    /// `None` when its weight is zero and the term was skipped.
    pub mmd: Option<Var>,
    pub smooth: Option<Var>,
}

/// Values of the objective and its terms; skipped terms read 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub prediction: f64,
    pub mmd: f64,
    pub smooth: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        LossValues {
            prediction: tape.value(self.prediction).item(),
            mmd: get(self.mmd),
            smooth: get(self.smooth),
            total: tape.value(self.total).item(),
        }
    }
}

/// Records `L_pre + λ·L_MMD + β·L_smooth` on `tape`.
///
/// Source predictions run in train mode (dropout on). MMD compares the
/// flattened feature maps of both batches, with kernel bandwidths treated as
/// constants. Terms whose weight is zero are not computed.
#[allow(clippy::too_many_arguments)]
pub fn overall_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    model: &SkdanModel,
    source: &[Tensor],
    labels: &[f64],
    target: &[Tensor],
    weights: LossWeights,
    bank: &BankSpec,
    rng: &mut R,
) -> Result<LossTerms> {
    weights.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(SkdanError::Data(
            "loss needs non-empty source and target batches".into(),
        ));
    }
    if labels.len() != source.len() {
        return Err(SkdanError::Data(format!(
            "{} labels for {} source samples",
            labels.len(),
            source.len()
        )));
    }
    let cfg = &model.config;
    let mut src_features = Vec::with_capacity(source.len());
    let mut preds = Vec::with_capacity(source.len());
    for x in source {
        crate::model::check_input(x)?;
        let xv = tape.leaf(x.clone());
        let f = extract_features(tape, xv, &params.sad, &cfg.sad)?;
        preds.push(predict_soh(
            tape,
            f,
            &params.predictor,
            &cfg.predictor,
            Mode::Train,
            rng,
        )?);
        src_features.push(f);
    }
    let p = tape.stack_rows(&preds)?;
    let y = tape.leaf(Tensor::new(vec![labels.len(), 1], labels.to_vec())?);
    let r = tape.sub(p, y)?;
    let sq = tape.mul(r, r)?;
    let prediction = tape.mean(sq);
    let mut total = prediction;

    let mut mmd = None;
    if weights.lambda > 0.0 {
        let mut rows = Vec::with_capacity(source.len() + target.len());
        for &f in &src_features {
            let width = tape.value(f).len();
            rows.push(tape.reshape(f, &[1, width])?);
        }
        for x in target {
            crate::model::check_input(x)?;
            let xv = tape.leaf(x.clone());
            let f = extract_features(tape, xv, &params.sad, &cfg.sad)?;
            let width = tape.value(f).len();
            rows.push(tape.reshape(f, &[1, width])?);
        }
        let joint = tape.stack_rows(&rows)?;
        let bank = bank.resolve(tape.value(joint))?;
        let m = tape.mk_mmd(joint, source.len(), &bank.kernels())?;
        let weighted = tape.scale(m, weights.lambda);
        total = tape.add(total, weighted)?;
        mmd = Some(m);
    }

    let mut smooth = None;
    if weights.beta > 0.0 {
        let s = smooth_loss(tape, &src_features, &params.predictor, &cfg.predictor, rng)?;
        let weighted = tape.scale(s, weights.beta);
        total = tape.add(total, weighted)?;
        smooth = Some(s);
    }

    Ok(LossTerms {
        total,
        prediction,
        mmd,
        smooth,
    })
}
