//! Command implementations behind the `loadcast` binary.
//!
//! Each command reads its inputs, writes CSV outputs plus a `<command>.manifest`
//! (flat `key=value`) into `--out-dir`, and reports failures through
//! [`CliError`], whose variants map onto the process exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use loadcast_core::checkpoint::{self, Checkpoint, CheckpointError};
use loadcast_core::data_ingest::{
    log1p_series, parse_aemo_csv, read_canonical_csv, repair_gaps, write_canonical_csv,
    IngestError, LoadSeries, DEFAULT_MAX_GAP, ISO_FORMAT,
};
use loadcast_core::features::{
    extract_window, future_features, FeatureError, FeatureMatrix, FeatureWindows, WindowConfig,
    DEFAULT_PREDICT_WINDOW, DEFAULT_SPLIT, DEFAULT_TRAINING_WINDOW, N_COLUMNS,
};
use loadcast_core::models::{
    prepare_window, Model, ModelConfig, ModelError, ModelKind, Standardizer,
};
use loadcast_core::nn::{Activation, Initializer, LossKind, Tensor};
use loadcast_core::train_eval::{
    compare_initializers, evaluate_mape, featurize_series, fit_scaler, postprocess_predictions,
    step_loss_csv, train, ExperimentData, TrainConfig, TrainError, TrainedModel,
};
use sha2::{Digest, Sha256};

pub mod manifest;

use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn data_err(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::InvalidConfig(_) | ModelError::UnknownKind(_) => CliError::Usage(e.to_string()),
        ModelError::Nn(_) => CliError::Numerical(e.to_string()),
    }
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Model(m) => model_err(m),
        TrainError::InvalidConfig(_) | TrainError::InvalidExperiment(_) => {
            CliError::Usage(e.to_string())
        }
        TrainError::NoWindows | TrainError::ZeroActual { .. } => CliError::Data(e.to_string()),
        TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "loadcast",
    version,
    about = "GRU day-ahead load forecasting with swappable output-layer initializers"
)]
pub struct Cli {
    /// Seed for model initialization (train).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for data-parallel work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long = "out-dir", global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse AEMO price-and-demand CSVs into one canonical series.
    Ingest(IngestArgs),
    /// Build the feature matrix and the window index.
    Featurize(FeaturizeArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train every (initializer, seed) arm and tabulate test MAPE.
    Compare(CompareArgs),
    /// Forecast the half-hours after the end of a series.
    Forecast(ForecastArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub region: Option<String>,
    /// Longest run of missing half-hours that is interpolated.
    #[arg(long = "max-gap", default_value_t = DEFAULT_MAX_GAP)]
    pub max_gap: usize,
    /// Keep rows at or after this time (`YYYY-MM-DDTHH:MM:SS`).
    #[arg(long, value_parser = parse_time)]
    pub start: Option<NaiveDateTime>,
    /// Keep rows strictly before this time.
    #[arg(long, value_parser = parse_time)]
    pub end: Option<NaiveDateTime>,
}

fn parse_time(s: &str) -> Result<NaiveDateTime, String> {
    NaiveDateTime::parse_from_str(s, ISO_FORMAT)
        .map_err(|e| format!("{s:?}: {e} (expected {ISO_FORMAT})"))
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Canonical series CSV written by `ingest`.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long = "training-window", default_value_t = DEFAULT_TRAINING_WINDOW)]
    pub training_window: usize,
    #[arg(long = "predict-window", default_value_t = DEFAULT_PREDICT_WINDOW)]
    pub predict_window: usize,
    /// Defaults to the predict window.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Train, validation and test fractions of the feature rows.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = DEFAULT_SPLIT)]
    pub split: Vec<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelFlags {
    #[arg(long, default_value = "model1")]
    pub model: ModelKind,
    #[arg(long, default_value_t = loadcast_core::models::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long = "fc-activation", default_value = "identity")]
    pub fc_activation: Activation,
}

#[derive(Debug, Args, Clone)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long = "n-repeat", default_value_t = 3)]
    pub n_repeat: usize,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub beta: f64,
    #[arg(long = "asgd-start-epoch", default_value_t = 20)]
    pub asgd_start_epoch: usize,
    #[arg(long, default_value = "ssmape")]
    pub loss: LossKind,
    /// Z-score demand-valued inputs and targets with statistics of the
    /// training rows; `false` trains directly on `ln(1 + MW)`.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub standardize: bool,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            n_repeat: self.n_repeat,
            eta: self.eta,
            epsilon: self.epsilon,
            beta: self.beta,
            asgd_start_epoch: self.asgd_start_epoch,
            loss: self.loss,
            seed,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct FeatureInputs {
    /// Defaults to `<out-dir>/features.csv`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Defaults to `<out-dir>/windows.csv`.
    #[arg(long)]
    pub windows: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: FeatureInputs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value = "zero")]
    pub init: Initializer,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: FeatureInputs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_delimiter = ',', default_values_t = Initializer::ALL)]
    pub inits: Vec<Initializer>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Canonical series CSV; the forecast starts right after its last row.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PREDICT_WINDOW)]
    pub horizon: usize,
}

/// Parses `args` and runs the command inside a pool of `--jobs` workers.
pub fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out_dir).map_err(|e| data_err(cli.out_dir.display(), e))?;
    with_pool(cli.jobs, || dispatch(cli, argv))
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R: Send>(_jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let mut m = Manifest::new(command_name(&cli.command), argv);
    m.set("seed", cli.seed);
    m.set("jobs", cli.jobs);
    m.set("out_dir", cli.out_dir.display());
    m.set("parallel", cfg!(feature = "parallel"));
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, a, &mut m),
        Command::Featurize(a) => cmd_featurize(cli, a, &mut m),
        Command::Train(a) => cmd_train(cli, a, &mut m),
        Command::Compare(a) => cmd_compare(cli, a, &mut m),
        Command::Forecast(a) => cmd_forecast(cli, a, &mut m),
    };
    m.set(
        "status",
        match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!(
                "error exit={} {}",
                e.exit_code(),
                e.to_string().replace('\n', " ")
            ),
        },
    );
    m.write(&cli.out_dir)?;
    result
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Featurize(_) => "featurize",
        Command::Train(_) => "train",
        Command::Compare(_) => "compare",
        Command::Forecast(_) => "forecast",
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn read_input(path: &Path, key: &str, m: &mut Manifest) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data_err(path.display(), e))?;
    m.set(format!("input.{key}"), path.display());
    m.set(format!("input.{key}.sha256"), sha256_hex(text.as_bytes()));
    Ok(text)
}

fn write_output(
    dir: &Path,
    name: &str,
    contents: &str,
    m: &mut Manifest,
) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| data_err(parent.display(), e))?;
    }
    fs::write(&path, contents).map_err(|e| data_err(path.display(), e))?;
    m.set(format!("output.{name}"), path.display());
    m.set(
        format!("output.{name}.sha256"),
        sha256_hex(contents.as_bytes()),
    );
    Ok(path)
}

pub fn cmd_ingest(cli: &Cli, a: &IngestArgs, m: &mut Manifest) -> Result<(), CliError> {
    m.set("region", a.region.as_deref().unwrap_or("(from file)"));
    m.set("max_gap", a.max_gap);
    let mut parts = Vec::with_capacity(a.inputs.len());
    for (i, path) in a.inputs.iter().enumerate() {
        let text = read_input(path, &format!("file{i}"), m)?;
        let part =
            parse_aemo_csv(&text, a.region.as_deref()).map_err(|e| data_err(path.display(), e))?;
        parts.push(part);
    }
    let mut merged = LoadSeries::merge(parts).map_err(|e| data_err("merging inputs", e))?;
    if a.start.is_some() || a.end.is_some() {
        let from = a.start.unwrap_or(NaiveDateTime::MIN);
        let to = a.end.unwrap_or(NaiveDateTime::MAX);
        m.set("start", from.format(ISO_FORMAT));
        m.set("end", to.format(ISO_FORMAT));
        merged = merged
            .slice_time(from, to)
            .map_err(|e| data_err("time slice", e))?;
    }
    let repaired = repair_gaps(&merged, a.max_gap).map_err(|e| data_err("gap repair", e))?;
    m.set("rows", repaired.len());
    m.set("region", repaired.region());
    write_output(
        &cli.out_dir,
        "series.csv",
        &write_canonical_csv(&repaired),
        m,
    )?;
    Ok(())
}

fn load_series(path: &Path, m: &mut Manifest) -> Result<LoadSeries, CliError> {
    let text = read_input(path, "series", m)?;
    read_canonical_csv(&text, "UNKNOWN").map_err(|e: IngestError| data_err(path.display(), e))
}

pub fn cmd_featurize(cli: &Cli, a: &FeaturizeArgs, m: &mut Manifest) -> Result<(), CliError> {
    let wcfg = WindowConfig {
        training_window: a.training_window,
        predict_window: a.predict_window,
        stride: a.stride.unwrap_or(a.predict_window),
    };
    let split: [f64; 3] = a
        .split
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage("--split takes exactly three fractions".into()))?;
    m.set("training_window", wcfg.training_window);
    m.set("predict_window", wcfg.predict_window);
    m.set("stride", wcfg.stride);
    m.set("split", join_f64(&split));
    wcfg.validate().map_err(feature_err)?;

    let series = load_series(&a.series, m)?;
    let transformed = log1p_series(&series).map_err(|e| data_err(a.series.display(), e))?;
    let (matrix, plan) = featurize_series(&transformed, split).map_err(feature_err)?;
    m.set("autocorr_year", matrix.autocorr.0.value);
    m.set("autocorr_quarter", matrix.autocorr.1.value);
    m.set("feature_rows", matrix.rows());

    let mut index =
        String::from("window_index,split,x_start,y_start,y_end,x_start_time,y_start_time\n");
    let mut n = 0;
    for (label, range) in [
        ("train", &plan.train),
        ("validation", &plan.validation),
        ("test", &plan.test),
    ] {
        let starts = if range.len() >= wcfg.span() {
            loadcast_core::features::window_starts(range.clone(), &wcfg).map_err(feature_err)?
        } else {
            Vec::new()
        };
        m.set(format!("windows.{label}"), starts.len());
        for s in starts {
            let y = s + wcfg.training_window;
            let _ = writeln!(
                index,
                "{n},{label},{s},{y},{},{},{}",
                y + wcfg.predict_window,
                matrix.timestamps[s].format(ISO_FORMAT),
                matrix.timestamps[y].format(ISO_FORMAT)
            );
            n += 1;
        }
    }
    write_output(&cli.out_dir, "features.csv", &matrix.to_csv(), m)?;
    write_output(&cli.out_dir, "windows.csv", &index, m)?;
    Ok(())
}

fn feature_err(e: FeatureError) -> CliError {
    match e {
        FeatureError::InvalidWindow { .. } | FeatureError::InvalidSplit(_) => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Data(e.to_string()),
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Windows read back from `features.csv` + `windows.csv`.
struct LoadedWindows {
    matrix: FeatureMatrix,
    config: WindowConfig,
    train: FeatureWindows,
    test: FeatureWindows,
}

fn load_windows(
    cli: &Cli,
    inputs: &FeatureInputs,
    m: &mut Manifest,
) -> Result<LoadedWindows, CliError> {
    let fpath = inputs
        .features
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("features.csv"));
    let wpath = inputs
        .windows
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("windows.csv"));
    let ftext = read_input(&fpath, "features", m)?;
    let wtext = read_input(&wpath, "windows", m)?;
    let matrix = FeatureMatrix::from_csv(&ftext).map_err(|e| data_err(fpath.display(), e))?;
    let bad =
        |line: usize, msg: &str| CliError::Data(format!("{}: line {line}: {msg}", wpath.display()));
    let mut config: Option<WindowConfig> = None;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, line) in wtext
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 5 {
            return Err(bad(i + 1, "expected at least 5 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, "bad row index"));
        let (xs, ys, ye) = (num(f[2])?, num(f[3])?, num(f[4])?);
        if !(xs < ys && ys < ye && ye <= matrix.rows()) {
            return Err(bad(i + 1, "window rows out of range"));
        }
        let cfg = WindowConfig {
            training_window: ys - xs,
            predict_window: ye - ys,
            stride: config.map_or(1, |c| c.stride),
        };
        match config {
            None => config = Some(cfg),
            Some(c)
                if c.training_window != cfg.training_window
                    || c.predict_window != cfg.predict_window =>
            {
                return Err(bad(i + 1, "windows have different sizes"))
            }
            _ => {}
        }
        let w = extract_window(&matrix, xs, &cfg);
        match f[1] {
            "train" => train.push(w),
            "test" => test.push(w),
            "validation" => {}
            other => return Err(bad(i + 1, &format!("unknown split {other:?}"))),
        }
    }
    let mut config =
        config.ok_or_else(|| CliError::Data(format!("{}: no windows", wpath.display())))?;
    config.stride = match (train.first(), train.get(1)) {
        (Some(a), Some(b)) => b.x_start - a.x_start,
        _ => config.predict_window,
    };
    Ok(LoadedWindows {
        matrix,
        config,
        train: FeatureWindows {
            config,
            windows: train,
        },
        test: FeatureWindows {
            config,
            windows: test,
        },
    })
}

fn model_config(flags: &ModelFlags, init: Initializer, w: &WindowConfig) -> ModelConfig {
    ModelConfig {
        kind: flags.model,
        input_dim: N_COLUMNS,
        hidden: flags.hidden,
        fc_activation: flags.fc_activation,
        fc_initializer: init,
        training_window: w.training_window,
        predict_window: w.predict_window,
    }
}

fn record_train_config(m: &mut Manifest, model: &ModelConfig, t: &TrainConfig, standardize: bool) {
    for (k, v) in loadcast_core::models::parse_key_values(&model.to_key_values()) {
        m.set(format!("model.{k}"), v);
    }
    for (k, v) in loadcast_core::models::parse_key_values(&t.to_key_values()) {
        if k != "seed" {
            m.set(format!("train.{k}"), v);
        }
    }
    m.set("train.standardize", standardize);
}

fn scaler_for(flags: &TrainFlags, loaded: &LoadedWindows) -> Standardizer {
    if flags.standardize {
        fit_scaler(&loaded.matrix, &loaded.train)
    } else {
        Standardizer::IDENTITY
    }
}

pub fn cmd_train(cli: &Cli, a: &TrainArgs, m: &mut Manifest) -> Result<(), CliError> {
    let loaded = load_windows(cli, &a.inputs, m)?;
    let mcfg = model_config(&a.model, a.init, &loaded.config);
    let tcfg = a.train.config(cli.seed);
    record_train_config(m, &mcfg, &tcfg, a.train.standardize);
    tcfg.validate().map_err(train_err)?;
    let model = Model::new(mcfg, cli.seed).map_err(model_err)?;
    let scaler = scaler_for(&a.train, &loaded);
    m.set("scaler_mean", scaler.mean);
    m.set("scaler_std", scaler.std);
    m.set("train_windows", loaded.train.len());
    let autocorr = loaded.matrix.autocorr;
    let step0 = Checkpoint {
        model: model.clone(),
        scaler,
        autocorr,
    };
    write_output(
        &cli.out_dir,
        "checkpoint_step0.txt",
        &checkpoint::save(&step0),
        m,
    )?;

    let trained = match train(model, &loaded.train, scaler, &tcfg) {
        Ok(t) => t,
        Err(TrainError::NonFiniteLoss {
            epoch,
            partial_steps,
        }) => {
            write_output(
                &cli.out_dir,
                "history.csv",
                &step_loss_csv(&partial_steps),
                m,
            )?;
            return Err(CliError::Numerical(format!(
                "non-finite loss in epoch {epoch}; partial history of {} steps kept",
                partial_steps.len()
            )));
        }
        Err(e) => return Err(train_err(e)),
    };
    write_output(
        &cli.out_dir,
        "history.csv",
        &step_loss_csv(&trained.step_losses),
        m,
    )?;
    write_output(
        &cli.out_dir,
        "epoch_history.csv",
        &epoch_csv(&trained.history),
        m,
    )?;
    write_output(
        &cli.out_dir,
        "variance_trace.csv",
        &trained.variance_trace.to_csv(),
        m,
    )?;
    let ckpt = Checkpoint {
        model: trained.model.clone(),
        scaler,
        autocorr,
    };
    write_output(&cli.out_dir, "checkpoint.txt", &checkpoint::save(&ckpt), m)?;
    if !loaded.test.is_empty() {
        match evaluate_mape(&trained, &loaded.test) {
            Ok(report) => {
                m.set("test_mean_mape_pct", report.mean_mape);
                m.set("test_std_mape_pct", report.std_mape);
                write_output(&cli.out_dir, "test_mape.csv", &report.to_csv(), m)?;
            }
            Err(e) => m.set("test_eval", e.to_string()),
        }
    }
    Ok(())
}

fn epoch_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

pub fn cmd_compare(cli: &Cli, a: &CompareArgs, m: &mut Manifest) -> Result<(), CliError> {
    let loaded = load_windows(cli, &a.inputs, m)?;
    let base = model_config(&a.model, Initializer::Zero, &loaded.config);
    let tcfg = a.train.config(0);
    record_train_config(m, &base, &tcfg, a.train.standardize);
    m.set(
        "inits",
        a.inits
            .iter()
            .map(|i| i.tag())
            .collect::<Vec<_>>()
            .join(","),
    );
    m.set(
        "seeds",
        a.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    let scaler = scaler_for(&a.train, &loaded);
    m.set("scaler_mean", scaler.mean);
    m.set("scaler_std", scaler.std);
    let data = ExperimentData {
        train: loaded.train,
        test: loaded.test,
        scaler,
    };
    let result =
        compare_initializers(&base, &tcfg, &data, &a.inits, &a.seeds).map_err(train_err)?;
    write_output(&cli.out_dir, "results.csv", &result.results_csv(), m)?;
    write_output(&cli.out_dir, "aggregate.csv", &result.aggregate_csv(), m)?;
    for row in &result.rows {
        let stem = format!("{}_seed{}", row.initializer, row.seed);
        write_output(
            &cli.out_dir,
            &format!("traces/loss_{stem}.csv"),
            &step_loss_csv(&row.step_losses),
            m,
        )?;
        if let Some(r) = row.report() {
            write_output(
                &cli.out_dir,
                &format!("traces/mape_{stem}.csv"),
                &r.to_csv(),
                m,
            )?;
        }
    }
    let ranking = result.ranking();
    m.set(
        "ranking",
        ranking
            .iter()
            .map(|(i, _)| i.tag())
            .collect::<Vec<_>>()
            .join(","),
    );
    let ok = result.rows.iter().filter(|r| r.report().is_some()).count();
    m.set("arms_completed", ok);
    m.set("arms_failed", result.rows.len() - ok);
    if ok == 0 {
        return Err(CliError::Numerical("every arm failed".into()));
    }
    Ok(())
}

pub fn cmd_forecast(cli: &Cli, a: &ForecastArgs, m: &mut Manifest) -> Result<(), CliError> {
    m.set("horizon", a.horizon);
    let ctext = read_input(&a.checkpoint, "checkpoint", m)?;
    let ckpt = checkpoint::load(&ctext).map_err(|e| match e {
        CheckpointError::Model(ModelError::InvalidConfig(_)) | CheckpointError::Malformed(_) => {
            data_err(a.checkpoint.display(), e)
        }
        other => CliError::Data(format!(
            "SchemaMismatch: {}: {other}",
            a.checkpoint.display()
        )),
    })?;
    let cfg = &ckpt.model.config;
    if cfg.input_dim != N_COLUMNS {
        return Err(CliError::Data(format!(
            "SchemaMismatch: checkpoint expects {} input columns, feature schema has {N_COLUMNS}",
            cfg.input_dim
        )));
    }
    if a.horizon == 0 || (cfg.kind == ModelKind::Model1 && a.horizon > cfg.predict_window) {
        return Err(CliError::Usage(format!(
            "horizon {} not supported by a {} checkpoint with predict window {}",
            a.horizon, cfg.kind, cfg.predict_window
        )));
    }
    let series = load_series(&a.series, m)?;
    let transformed = log1p_series(&series).map_err(|e| data_err(a.series.display(), e))?;
    let matrix = loadcast_core::features::build_feature_matrix_with(&transformed, ckpt.autocorr)
        .map_err(|e| data_err(a.series.display(), e))?;
    if matrix.rows() < cfg.training_window {
        return Err(CliError::Data(format!(
            "SchemaMismatch: series yields {} feature rows, checkpoint needs a {}-row input window",
            matrix.rows(),
            cfg.training_window
        )));
    }
    let start = matrix.rows() - cfg.training_window;
    let x = Tensor::new(
        vec![cfg.training_window, N_COLUMNS],
        matrix.data[start * N_COLUMNS..].to_vec(),
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    let (stamps, y_features) =
        future_features(&transformed, a.horizon, ckpt.autocorr).map_err(feature_err)?;
    let raw = loadcast_core::features::FeatureWindow {
        x_start: start,
        y_start: matrix.rows(),
        x,
        y_features,
        y_targets: vec![0.0; a.horizon],
    };
    let prepared = prepare_window(&raw, &ckpt.scaler);
    let trained = TrainedModel {
        model: ckpt.model.clone(),
        scaler: ckpt.scaler,
        history: Vec::new(),
        step_losses: Vec::new(),
        variance_trace: Default::default(),
        seed: ckpt.model.seed,
    };
    let params = trained.prediction_params();
    let transformed_pred = trained
        .predict_transformed(&params, &prepared)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    if transformed_pred.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("forecast is not finite".into()));
    }
    let mw = postprocess_predictions(&transformed_pred[..a.horizon]);
    let mut out = String::from("timestamp,forecast_mw\n");
    for (ts, v) in stamps.iter().zip(&mw) {
        let _ = writeln!(out, "{},{v}", ts.format(ISO_FORMAT));
    }
    m.set("forecast_start", stamps[0].format(ISO_FORMAT));
    write_output(&cli.out_dir, "forecast.csv", &out, m)?;
    Ok(())
}

/// Reads a manifest back into its key/value map.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data_err(path.display(), e))?;
    Ok(loadcast_core::models::parse_key_values(&text))
}
