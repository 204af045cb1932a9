//! `skdan`: synthesize, preprocess, train, evaluate and compare battery
//! SOH transfer models from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use skdan_core::datapipe::{
    discover_batteries, kde_export, load_domain, normalize_domain, read_dataset, write_dataset,
    write_kde_csv, PipelineConfig, CHANNEL_NAMES,
};
use skdan_core::harness::{
    evaluate, feature_values, fit, random_search, run_experiment_file, AblationFlags, HyperConfig,
    SearchConfig, KDE_GRID,
};
use skdan_core::model::SkdanModel;
use skdan_core::synthgen::{synth_battery, SynthSpec};
use skdan_core::{Result, SkdanError};

#[derive(Parser)]
#[command(
    name = "skdan",
    version,
    about = "Battery SOH estimation with feature-level domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic batteries as CSV, metadata and label files.
    Simulate(SimulateArgs),
    /// Segment and normalize battery files into a dataset file.
    Preprocess(PreprocessArgs),
    /// Fit one configuration and save the model.
    Train(TrainArgs),
    /// Score a model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Random hyperparameter search ranked on held-out source samples.
    Search(SearchArgs),
    /// Run a full experiment file.
    Experiment(ExperimentArgs),
    /// Write a kernel density curve of one channel or of extracted features.
    ExportKde(ExportKdeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON generator spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "battery")]
    name: String,
    /// Number of batteries; battery i uses seed `spec.seed + i`.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Battery prefixes (`<prefix>.csv`, `<prefix>.meta.json`, `<prefix>.labels.csv`).
    prefixes: Vec<PathBuf>,
    /// Use every battery found in this directory.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Window depth in percent SOC; defaults to the full span of each battery.
    #[arg(long)]
    window_dod: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    step: f64,
    #[arg(long)]
    ic_smoothing: bool,
    /// Skip label files (target domain).
    #[arg(long)]
    unlabeled: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct FlagArgs {
    #[arg(long)]
    disable_attention: bool,
    #[arg(long)]
    disable_distillation: bool,
    #[arg(long)]
    fnn_predictor: bool,
    #[arg(long)]
    disable_smoothness: bool,
    #[arg(long)]
    disable_adaptation: bool,
}

impl FlagArgs {
    fn flags(&self) -> AblationFlags {
        AblationFlags {
            disable_attention: self.disable_attention,
            disable_distillation: self.disable_distillation,
            fnn_predictor: self.fnn_predictor,
            disable_smoothness: self.disable_smoothness,
            disable_adaptation: self.disable_adaptation,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// JSON hyperparameters; omitted fields take their defaults.
    #[arg(long)]
    hyper: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    flags: FlagArgs,
    #[arg(long, short)]
    out: PathBuf,
    /// Per-epoch loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// JSON search configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    flags: FlagArgs,
    /// Leaderboard JSON.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    file: PathBuf,
}

#[derive(Args)]
struct ExportKdeArgs {
    #[arg(long)]
    data: PathBuf,
    /// `v`, `dv`, `dq`, `ic`, or `features` (needs `--model`).
    #[arg(long, default_value = "v")]
    channel: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = KDE_GRID)]
    grid: usize,
    #[arg(long, short)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| SkdanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SkdanError::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| SkdanError::io(path, e))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec: SynthSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| SkdanError::io(&args.out_dir, e))?;
    let mut written = Vec::new();
    for i in 0..args.count {
        let spec = SynthSpec {
            seed: spec.seed + i,
            ..spec.clone()
        };
        let prefix = args.out_dir.join(format!("{}_{i}", args.name));
        synth_battery(&spec)?.write(&prefix)?;
        written.push(prefix);
    }
    print_json(&serde_json::json!({ "batteries": written }))
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let mut prefixes = args.prefixes;
    if let Some(dir) = &args.dir {
        prefixes.extend(discover_batteries(dir)?);
    }
    let cfg = PipelineConfig {
        window_dod: args.window_dod,
        step: args.step,
        ic_smoothing: args.ic_smoothing,
    };
    let data = normalize_domain(&load_domain(&prefixes, &cfg, !args.unlabeled)?)?;
    write_dataset(&args.out, &data)?;
    print_json(&serde_json::json!({
        "batteries": prefixes.len(),
        "samples": data.len(),
        "labeled": data.labeled,
        "out": args.out,
    }))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut hp: HyperConfig = match &args.hyper {
        Some(p) => read_json(p)?,
        None => HyperConfig::default(),
    };
    if let Some(seed) = args.seed {
        hp.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        hp.max_epochs = epochs;
    }
    let source = read_dataset(&args.source)?;
    let target = read_dataset(&args.target)?.without_labels();
    let fitted = fit(&source, &target, &hp, &args.flags.flags())?;
    fitted.model.save(&args.out)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, fitted.trace.to_csv()).map_err(|e| SkdanError::io(path, e))?;
    }
    print_json(&serde_json::json!({ "model": args.out, "final": fitted.trace.last() }))
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let model = SkdanModel::load(&args.model)?;
    let report = evaluate(&model, &read_dataset(&args.data)?)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn search(args: SearchArgs) -> Result<()> {
    let mut cfg: SearchConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SearchConfig::default(),
    };
    if let Some(n) = args.trials {
        cfg.n_trials = n;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let source = read_dataset(&args.source)?;
    let target = read_dataset(&args.target)?.without_labels();
    let outcome = random_search(&source, &target, &cfg, &args.flags.flags())?;
    write_json(&args.out, &outcome.leaderboard)?;
    print_json(&outcome.best)
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let report = run_experiment_file(&args.file)?;
    print_json(&serde_json::json!({
        "rmse": report.rmse,
        "mae": report.mae,
        "score": report.score,
        "score_sum": report.score_sum,
        "n_repeats": report.n_repeats,
    }))
}

fn export_kde(args: ExportKdeArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let values = if args.channel == "features" {
        let path = args
            .model
            .as_ref()
            .ok_or_else(|| SkdanError::Config("`--channel features` needs `--model`".into()))?;
        feature_values(&SkdanModel::load(path)?, &data)?
    } else {
        let c = CHANNEL_NAMES
            .iter()
            .position(|n| *n == args.channel)
            .ok_or_else(|| SkdanError::Config(format!("unknown channel `{}`", args.channel)))?;
        data.channel_values(c)
    };
    let curve = kde_export(&values, args.grid)?;
    write_kde_csv(&args.out, &curve)?;
    print_json(&serde_json::json!({
        "out": args.out,
        "bandwidth": curve.bandwidth,
        "integral": curve.integral(),
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Search(a) => search(a),
        Command::Experiment(a) => experiment(a),
        Command::ExportKde(a) => export_kde(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.category(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
