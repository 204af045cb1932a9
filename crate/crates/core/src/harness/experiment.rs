use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::search::{random_search, SearchConfig, TrialResult};
use super::train::{fit, LossTrace};
use super::{AblationFlags, HyperConfig};
use crate::datapipe::{kde_export, read_dataset, write_kde_csv, DomainDataset, CHANNEL_NAMES};
use crate::error::{Result, SkdanError};
use crate::model::SkdanModel;

/// Grid points of exported density curves.
pub const KDE_GRID: usize = 512;

/// How the target domain is divided between (unlabeled) training and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// `battery` when the target holds at least two batteries, else `none`.
    #[default]
    Auto,
    /// First half of the target batteries (by id) for training, rest for testing.
    Battery,
    /// Train on every target input and test on the same samples' labels.
    None,
}

fn default_repeats() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

fn default_channel() -> String {
    "v".into()
}

/// Experiment description. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Labeled target test set; overrides `split`.
    #[serde(default)]
    pub target_test: Option<PathBuf>,
    #[serde(default)]
    pub hyper: Option<HyperConfig>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub flags: AblationFlags,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split: SplitMode,
    /// Raw channel whose distribution is exported (`v`, `dv`, `dq` or `ic`).
    #[serde(default = "default_channel")]
    pub kde_channel: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_repeats: usize,
    pub master_seed: u64,
    pub flags: AblationFlags,
    pub hyper: HyperConfig,
    pub n_source: usize,
    pub n_target_train: usize,
    pub n_test: usize,
    pub rmse: MeanStd,
    pub mae: MeanStd,
    pub score: MeanStd,
    pub score_sum: MeanStd,
    pub repeats: Vec<RepeatReport>,
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SkdanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SkdanError::Config(format!("{}: {e}", path.display())))
}

/// Loads and runs an experiment file.
pub fn run_experiment_file(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let exp = load_experiment(path)?;
    run_experiment(&exp, path.parent().unwrap_or(Path::new(".")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| SkdanError::io(path, e))
}

/// Runs every repeat and writes `model.skdan`, `eval_report.json`,
/// `loss_trace.csv`, the KDE CSVs and, when searching, `leaderboard.json`
/// into the output directory.
pub fn run_experiment(exp: &ExperimentFile, base: &Path) -> Result<ExperimentReport> {
    if exp.n_repeats == 0 {
        return Err(SkdanError::Config("n_repeats must be at least 1".into()));
    }
    if exp.hyper.is_some() && exp.search.is_some() {
        return Err(SkdanError::Config(
            "give either `hyper` or `search`, not both".into(),
        ));
    }
    let channel = CHANNEL_NAMES
        .iter()
        .position(|c| *c == exp.kde_channel)
        .ok_or_else(|| SkdanError::Config(format!("unknown KDE channel `{}`", exp.kde_channel)))?;
    let mut paths = vec![
        ("source", resolve(base, &exp.source)),
        ("target", resolve(base, &exp.target)),
    ];
    if let Some(t) = &exp.target_test {
        paths.push(("target_test", resolve(base, t)));
    }
    for (name, p) in &paths {
        if !p.is_file() {
            return Err(SkdanError::Config(format!(
                "{name} dataset {} does not exist",
                p.display()
            )));
        }
    }
    if let Some(hp) = &exp.hyper {
        hp.validate()?;
    }

    let source = read_dataset(&paths[0].1)?;
    let target_all = read_dataset(&paths[1].1)?;
    let (target_train, test) = match paths.get(2) {
        Some((_, p)) => (target_all.without_labels(), read_dataset(p)?),
        None => split_target(&target_all, exp.split)?,
    };
    if !test.labeled {
        return Err(SkdanError::Data(
            "target test samples carry no labels".into(),
        ));
    }

    let out = resolve(base, &exp.output_dir);
    std::fs::create_dir_all(&out).map_err(|e| SkdanError::io(&out, e))?;

    let hyper = match &exp.search {
        Some(search) => {
            let cfg = SearchConfig {
                master_seed: exp.master_seed,
                ..search.clone()
            };
            let outcome = random_search(&source, &target_train, &cfg, &exp.flags)?;
            write_leaderboard(&out.join("leaderboard.json"), &outcome.leaderboard)?;
            outcome.best
        }
        None => exp.hyper.clone().unwrap_or_default(),
    };

    let runs: Vec<(u64, super::Fitted, EvalReport)> = (0..exp.n_repeats)
        .into_par_iter()
        .map(|r| {
            let seed = diffcore::rng::derive_seed(exp.master_seed, r as u64);
            let hp = HyperConfig {
                seed,
                ..hyper.clone()
            };
            let fitted = fit(&source, &target_train, &hp, &exp.flags)?;
            let report = evaluate(&fitted.model, &test)?;
            log::info!("repeat {r}: RMSE {:.5}", report.rmse);
            Ok((seed, fitted, report))
        })
        .collect::<Result<_>>()?;

    let pick = |f: fn(&EvalReport) -> f64| {
        MeanStd::of(&runs.iter().map(|(_, _, r)| f(r)).collect::<Vec<_>>())
    };
    let report = ExperimentReport {
        n_repeats: exp.n_repeats,
        master_seed: exp.master_seed,
        flags: exp.flags,
        hyper: hyper.clone(),
        n_source: source.len(),
        n_target_train: target_train.len(),
        n_test: test.len(),
        rmse: pick(|r| r.rmse),
        mae: pick(|r| r.mae),
        score: pick(|r| r.score),
        score_sum: pick(|r| r.score_sum),
        repeats: runs
            .iter()
            .enumerate()
            .map(|(repeat, (seed, _, r))| RepeatReport {
                repeat,
                seed: *seed,
                report: r.clone(),
            })
            .collect(),
    };

    write(
        &out.join("eval_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut trace = format!("repeat,{}\n", LossTrace::HEADER);
    for (r, (_, fitted, _)) in runs.iter().enumerate() {
        trace.push_str(&fitted.trace.csv_rows(Some(&r.to_string())));
    }
    write(&out.join("loss_trace.csv"), trace)?;

    let model = &runs[0].1.model;
    model.save(out.join("model.skdan"))?;
    let name = CHANNEL_NAMES[channel];
    write_kde_csv(
        out.join(format!("kde_source_{name}.csv")),
        &kde_export(&source.channel_values(channel), KDE_GRID)?,
    )?;
    write_kde_csv(
        out.join(format!("kde_target_{name}.csv")),
        &kde_export(&target_train.channel_values(channel), KDE_GRID)?,
    )?;
    write_kde_csv(
        out.join("kde_source_features.csv"),
        &kde_export(&feature_values(model, &source)?, KDE_GRID)?,
    )?;
    write_kde_csv(
        out.join("kde_target_features.csv"),
        &kde_export(&feature_values(model, &target_train)?, KDE_GRID)?,
    )?;
    Ok(report)
}

fn write_leaderboard(path: &Path, leaderboard: &[TrialResult]) -> Result<()> {
    write(path, serde_json::to_string_pretty(leaderboard)?)
}

/// Every entry of every extracted feature map.
pub fn feature_values(model: &SkdanModel, data: &DomainDataset) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for x in data.inputs() {
        out.extend_from_slice(model.features(&x)?.data());
    }
    Ok(out)
}

fn split_target(target: &DomainDataset, mode: SplitMode) -> Result<(DomainDataset, DomainDataset)> {
    let ids = target.battery_ids();
    let mode = match mode {
        SplitMode::Auto if ids.len() >= 2 => SplitMode::Battery,
        SplitMode::Auto => SplitMode::None,
        m => m,
    };
    match mode {
        SplitMode::Battery => {
            if ids.len() < 2 {
                return Err(SkdanError::Data(format!(
                    "battery split needs at least two target batteries, found {}",
                    ids.len()
                )));
            }
            let train_ids = &ids[..ids.len().div_ceil(2)];
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..target.len()).partition(|&i| train_ids.contains(&target.samples[i].battery_id));
            Ok((target.subset(&train).without_labels(), target.subset(&test)))
        }
        _ => Ok((target.without_labels(), target.clone())),
    }
}
