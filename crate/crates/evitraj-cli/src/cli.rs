//! Argument parsing and command dispatch. Every artifact-producing command
//! refuses to overwrite existing files unless `--force` is given, and echoes
//! its effective settings into the artifact manifest so a run can be
//! reconstructed from its outputs alone.
//!
//! Exit codes: 0 success, 1 bad invocation or bad data, 2 training
//! divergence — so sweep scripts can tell a numeric blow-up from a typo.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evitraj::anchors::{fit_anchors, flatten_future, load_anchors, save_anchors};
use evitraj::eval::{evaluate, stats_csv};
use evitraj::evidential::LossWeights;
use evitraj::model::{
    build_model, load_model, model_names, save_model, Selection, TrainConfig, TrainError,
};
use evitraj::persist::payload_hash;
use evitraj::scenegen::{
    generate_dataset, load_dataset, save_dataset, Experiment, GenConfig, Scene, Split,
};

use crate::config::Config;
use crate::report::{load_eval, write_report, NamedEval};

#[derive(Parser)]
#[command(
    name = "evitraj",
    version,
    about = "Trajectory prediction with evidential uncertainty: synthetic data, training, evaluation"
)]
pub struct CliArgs {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with ID and OOD splits.
    GenData(GenDataArgs),
    /// Fit the anchor trajectory set on a dataset's train split.
    FitAnchors(FitAnchorsArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test splits and write metric CSVs.
    Eval(EvalArgs),
    /// Combine evaluations into comparison tables and figures.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Holdout design: "speed" (fast scenes are OOD) or "map" (roundabout
    /// and right-hand-drive scenes are OOD).
    #[arg(long, default_value = "speed")]
    experiment: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on the per-split scene counts. Wins over `[data] scale`
    /// from --config.
    #[arg(long)]
    scale: Option<f64>,
    /// Map split only: fraction of the OOD partition filled with
    /// in-distribution straight-road scenes.
    #[arg(long)]
    leak_fraction: Option<f64>,
    /// Optional `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output basename; writes <out>.manifest and <out>.bin.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FitAnchorsArgs {
    /// Dataset basename from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Anchor count. Wins over `[anchors] classes` from --config.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output basename; writes <out>.manifest and <out>.bin.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Model kind: covernet, postcovernet, isap, or ensemble.
    #[arg(long)]
    model: String,
    /// Dataset basename from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Anchor basename from fit-anchors.
    #[arg(long)]
    anchors: PathBuf,
    /// Seeds both parameter init and the epoch shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epoch count. Wins over --config and the per-experiment default.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint basename; writes <out>.manifest and <out>.bin.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint basename from train.
    #[arg(long)]
    model_path: PathBuf,
    /// Dataset basename; evaluation runs on its test_id and test_ood splits.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.csv and stats.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation to include, as name=dir (repeatable). The name labels
    /// table rows and figure filenames.
    #[arg(long = "eval", required = true, value_name = "NAME=DIR")]
    evals: Vec<String>,
    /// Output directory for tables and figures.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, flag value, or config file.
    Usage(String),
    /// Missing or invalid artifacts on disk.
    Data(String),
    /// Training produced a non-finite loss.
    Diverged(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => f.write_str(m),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        CliError::Diverged(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Data(_) => 1,
            CliError::Diverged(_) => 2,
        }
    }
}

fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args = match CliArgs::try_parse() {
        Ok(a) => a,
        Err(e) => {
            // Help and version go to stdout and exit 0; anything else is a
            // usage error. clap's default code of 2 is reserved here for
            // divergence, so usage maps to 1.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(args.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenData(a) => run_gen_data(a),
        Cmd::FitAnchors(a) => run_fit_anchors(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Report(a) => run_report(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(CliError::Usage),
        None => Ok(Config::default()),
    }
}

fn run_gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let experiment = Experiment::from_name(&a.experiment).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown experiment {:?}; expected speed or map",
            a.experiment
        ))
    })?;
    let mut gc = GenConfig {
        experiment,
        seed: a.seed,
        ..GenConfig::default()
    };
    if let Some(v) = a.scale.or(cfg.data_scale) {
        gc.scale = v;
    }
    if let Some(v) = cfg.data_speed_threshold {
        gc.speed_threshold = v;
    }
    if let Some(v) = a.leak_fraction.or(cfg.data_leak_fraction) {
        gc.leak_fraction = v;
    }
    let ds = generate_dataset(&gc).map_err(data)?;

    let mut meta = BTreeMap::new();
    meta.insert("experiment".into(), experiment.name().to_string());
    meta.insert("seed".into(), gc.seed.to_string());
    meta.insert("scale".into(), gc.scale.to_string());
    meta.insert("speed_threshold".into(), gc.speed_threshold.to_string());
    meta.insert("leak_fraction".into(), gc.leak_fraction.to_string());
    for (k, v) in cfg.echo() {
        meta.insert(k, v.to_string());
    }
    save_dataset(&a.out, &ds, &meta, a.force).map_err(data)?;
    let c = ds.counts();
    println!(
        "wrote {} scenes to {} (train {} / val_id {} / test_id {} / val_ood {} / test_ood {})",
        ds.scenes.len(),
        a.out.display(),
        c[0],
        c[1],
        c[2],
        c[3],
        c[4]
    );
    Ok(())
}

fn run_fit_anchors(a: FitAnchorsArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let (ds, _) = load_dataset(&a.data).map_err(data)?;
    let train = ds.split_scenes(Split::Train);
    let classes = a.classes.or(cfg.anchors_classes).unwrap_or(64);
    if train.len() < classes {
        return Err(CliError::Data(format!(
            "train split has {} scenes but {classes} anchors were requested",
            train.len()
        )));
    }
    let futures: Vec<Vec<f64>> = train.iter().map(|s| flatten_future(s)).collect();
    let set = fit_anchors(&futures, classes, a.seed);

    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), a.seed.to_string());
    meta.insert("fit_scenes".into(), train.len().to_string());
    meta.insert("data_sha".into(), payload_hash(&a.data).map_err(data)?);
    for (k, v) in cfg.echo() {
        meta.insert(k, v.to_string());
    }
    save_anchors(&a.out, &set, &meta, a.force).map_err(data)?;
    println!(
        "fit {classes} anchors on {} train futures -> {}",
        train.len(),
        a.out.display()
    );
    Ok(())
}

/// Per-experiment training defaults. The map split gets a longer schedule
/// (its raster cues are subtler than a speed gap), and the evidential model
/// keeps its final weights on the speed split: its validation criterion
/// tracks the classification term alone, which can bottom out before the
/// density estimate has tightened around the training data.
fn defaults_for(experiment: &str, model: &str) -> (usize, Selection) {
    let epochs = if experiment == "map" { 50 } else { 25 };
    let selection = if experiment != "map" && model == "isap" {
        Selection::FinalEpoch
    } else {
        Selection::BestVal
    };
    (epochs, selection)
}

/// Reconstruction weights per experiment. The speed split upweights the
/// scene branch (its raster is nearly constant across scenes, so its
/// gradient is small); on the map split the raster carries the signal and
/// uniform weights suffice.
fn recon_weights_for(experiment: &str) -> LossWeights {
    if experiment == "map" {
        LossWeights {
            lambda_sc: 1.0,
            ..LossWeights::default()
        }
    } else {
        LossWeights::default()
    }
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    if !model_names().contains(&a.model.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown model {:?}; expected one of {}",
            a.model,
            model_names().join(", ")
        )));
    }
    let cfg_file = load_config(a.config.as_deref())?;
    let (ds, ds_meta) = load_dataset(&a.data).map_err(data)?;
    let (anchors, _) = load_anchors(&a.anchors).map_err(data)?;
    let experiment = ds_meta
        .get("experiment")
        .map(String::as_str)
        .unwrap_or("speed");

    let (default_epochs, default_selection) = defaults_for(experiment, &a.model);
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.or(cfg_file.train_epochs).unwrap_or(default_epochs),
        batch_size: cfg_file.train_batch_size.unwrap_or(base.batch_size),
        lr: cfg_file.train_lr.unwrap_or(base.lr),
        weight_decay: cfg_file.train_weight_decay.unwrap_or(base.weight_decay),
        seed: a.seed,
        selection: cfg_file.train_selection.unwrap_or(default_selection),
    };
    let train: Vec<Scene> = ds.split_scenes(Split::Train).into_iter().cloned().collect();
    let val: Vec<Scene> = ds.split_scenes(Split::ValId).into_iter().cloned().collect();
    log::info!(
        "training {} on {} scenes ({} val) for {} epochs",
        a.model,
        train.len(),
        val.len(),
        cfg.epochs
    );
    let mut model = build_model(&a.model, anchors, a.seed).map_err(data)?;
    let weights = recon_weights_for(experiment);
    model.set_loss_weights(weights.clone());
    let stats = model.train(&train, &val, &cfg)?;

    let mut meta = BTreeMap::new();
    meta.insert("experiment".into(), experiment.to_string());
    meta.insert("recon.lambda_agent".into(), weights.lambda_agent.to_string());
    meta.insert("recon.lambda_map".into(), weights.lambda_map.to_string());
    meta.insert("recon.lambda_sc".into(), weights.lambda_sc.to_string());
    meta.insert("train.seed".into(), cfg.seed.to_string());
    meta.insert("train.epochs".into(), cfg.epochs.to_string());
    meta.insert("train.batch_size".into(), cfg.batch_size.to_string());
    meta.insert("train.lr".into(), cfg.lr.to_string());
    meta.insert("train.weight_decay".into(), cfg.weight_decay.to_string());
    let sel_name = match cfg.selection {
        Selection::FinalEpoch => "final",
        Selection::BestVal => "best_val",
    };
    meta.insert("train.selection".into(), sel_name.to_string());
    meta.insert("selected_epoch".into(), stats.selected_epoch.to_string());
    if let Some(l) = stats.train_loss.last() {
        meta.insert("final_train_loss".into(), format!("{l:.9}"));
    }
    if let Some(l) = stats.val_loss.last() {
        meta.insert("final_val_loss".into(), format!("{l:.9}"));
    }
    meta.insert("data_sha".into(), payload_hash(&a.data).map_err(data)?);
    meta.insert("anchors_sha".into(), payload_hash(&a.anchors).map_err(data)?);
    for (k, v) in cfg_file.echo() {
        meta.insert(k, v.to_string());
    }
    save_model(&a.out, &*model, &meta, a.force).map_err(data)?;
    println!(
        "trained {} for {} epochs (kept epoch {}); checkpoint at {}",
        a.model,
        cfg.epochs,
        stats.selected_epoch,
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model_path).map_err(data)?;
    let (ds, _) = load_dataset(&a.data).map_err(data)?;
    let id: Vec<Scene> = ds
        .split_scenes(Split::TestId)
        .into_iter()
        .cloned()
        .collect();
    let ood: Vec<Scene> = ds
        .split_scenes(Split::TestOod)
        .into_iter()
        .cloned()
        .collect();
    if id.is_empty() || ood.is_empty() {
        return Err(CliError::Data("dataset has an empty test split".into()));
    }
    let artifacts = evaluate(&*model, &id, &ood);

    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    write_new(&a.out.join("report.csv"), &artifacts.report.to_csv(), a.force)?;
    write_new(&a.out.join("stats.csv"), &stats_csv(&artifacts), a.force)?;
    let fmt_cell = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "--".to_string(),
    };
    println!(
        "evaluated {} on {} ID / {} OOD scenes: top1 {} | ood_auroc_epistemic {} | alpha0_ratio {}",
        model.kind(),
        id.len(),
        ood.len(),
        fmt_cell(artifacts.report.id_value("top1_accuracy")),
        fmt_cell(artifacts.report.ood_value("ood_auroc_epistemic")),
        fmt_cell(artifacts.report.ood_value("alpha0_ratio")),
    );
    Ok(())
}

fn write_new(path: &Path, content: &str, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Data(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn parse_eval_spec(spec: &str) -> Result<(&str, &Path), CliError> {
    let (name, dir) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--eval {spec:?}: expected name=dir")))?;
    let valid = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !valid {
        // Names become filenames (fig_conf_speed_<name>.svg), so keep them tame.
        return Err(CliError::Usage(format!(
            "eval name {name:?} must be alphanumeric, _ or -"
        )));
    }
    Ok((name, Path::new(dir)))
}

fn run_report(a: ReportArgs) -> Result<(), CliError> {
    let mut evals: Vec<NamedEval> = Vec::new();
    for spec in &a.evals {
        let (name, dir) = parse_eval_spec(spec)?;
        evals.push(load_eval(name, dir).map_err(CliError::Data)?);
    }
    let files = write_report(&a.out, &evals, a.force).map_err(CliError::Data)?;
    println!("wrote {} report files to {}", files.len(), a.out.display());
    Ok(())
}
