//! Training loop, prediction post-processing, MAPE evaluation and the
//! multi-seed initializer comparison.

use std::fmt::Write as _;

use crate::data_ingest::expm1_inverse;
use crate::data_ingest::TransformedSeries;
use crate::exec::{self, Execution};
use crate::features::{
    annual_quarterly_autocorr, build_feature_matrix_with, make_windows_in, max_lag_steps,
    FeatureError, FeatureMatrix, FeatureWindows, SplitPlan, WindowConfig, DEMAND_COL,
    STEPS_PER_DAY,
};
use crate::models::{prepare_window, Model, ModelConfig, ModelError, PreparedWindow, Standardizer};
use crate::nn::{
    l2_activation_penalty, loss_mae, loss_ssmape, Initializer, LossKind, NnError, ParamSet,
    Parameter, Tape,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        /// Per-step losses recorded before the failure.
        partial_steps: Vec<f64>,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training windows")]
    NoWindows,
    #[error("actual demand {value} at window {window}, point {point} is not positive")]
    ZeroActual {
        window: usize,
        point: usize,
        value: f64,
    },
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(ModelError::Nn(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub n_repeat: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub asgd_start_epoch: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            n_repeat: 3,
            eta: 0.01,
            epsilon: 0.1,
            beta: 1e-4,
            asgd_start_epoch: 20,
            loss: LossKind::Ssmape,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.n_repeat < 1 {
            return bad("n_repeat must be at least 1".into());
        }
        if self.asgd_start_epoch > self.epochs {
            return bad(format!(
                "asgd_start_epoch {} exceeds epochs {}",
                self.asgd_start_epoch, self.epochs
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "epochs={}\nn_repeat={}\neta={}\nepsilon={}\nbeta={}\nasgd_start_epoch={}\nloss={}\nseed={}\n",
            self.epochs,
            self.n_repeat,
            self.eta,
            self.epsilon,
            self.beta,
            self.asgd_start_epoch,
            self.loss.tag(),
            self.seed
        )
    }
}

/// Raw and running-average values of a few output-layer weights, one entry
/// per optimizer step since averaging began.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarianceTrace {
    /// Flat indices into the output weight matrix.
    pub tracked: Vec<usize>,
    pub raw: Vec<Vec<f64>>,
    pub averaged: Vec<Vec<f64>>,
}

impl VarianceTrace {
    pub fn new(tracked: Vec<usize>) -> Self {
        Self {
            tracked,
            ..Self::default()
        }
    }

    pub fn record(&mut self, param: &Parameter) {
        let raw = self
            .tracked
            .iter()
            .map(|&i| param.value.data()[i])
            .collect();
        let avg = match &param.asgd_avg {
            Some(a) => self.tracked.iter().map(|&i| a.data()[i]).collect(),
            None => self
                .tracked
                .iter()
                .map(|&i| param.value.data()[i])
                .collect(),
        };
        self.raw.push(raw);
        self.averaged.push(avg);
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Trajectory of tracked weight `k`.
    pub fn raw_series(&self, k: usize) -> Vec<f64> {
        self.raw.iter().map(|r| r[k]).collect()
    }

    pub fn averaged_series(&self, k: usize) -> Vec<f64> {
        self.averaged.iter().map(|r| r[k]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for i in &self.tracked {
            let _ = write!(out, ",raw_w{i},avg_w{i}");
        }
        out.push('\n');
        for (s, (raw, avg)) in self.raw.iter().zip(&self.averaged).enumerate() {
            let _ = write!(out, "{s}");
            for (r, a) in raw.iter().zip(avg) {
                let _ = write!(out, ",{r},{a}");
            }
            out.push('\n');
        }
        out
    }
}

/// Number of output weights followed by [`VarianceTrace`].
pub const TRACKED_WEIGHTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub scaler: Standardizer,
    /// Mean loss per epoch.
    pub history: Vec<f64>,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub variance_trace: VarianceTrace,
    pub seed: u64,
}

impl TrainedModel {
    /// Parameters used for prediction: averaged output layer when available.
    pub fn prediction_params(&self) -> ParamSet {
        self.model.params.prediction_params()
    }

    /// Standardized predictions for one window.
    pub fn predict_standardized(
        &self,
        params: &ParamSet,
        window: &PreparedWindow,
    ) -> Result<Vec<f64>, TrainError> {
        let mut tape = Tape::new();
        let out = self.model.forward(params, window, &mut tape)?;
        Ok(tape.value(out.prediction).data().to_vec())
    }

    /// Transformed-scale (`ln(1 + MW)`) predictions for one window.
    pub fn predict_transformed(
        &self,
        params: &ParamSet,
        window: &PreparedWindow,
    ) -> Result<Vec<f64>, TrainError> {
        Ok(self
            .predict_standardized(params, window)?
            .into_iter()
            .map(|z| self.scaler.inverse(z))
            .collect())
    }
}

/// Loss for one window: forecast loss plus the activation penalty over every
/// recurrent output.
pub fn window_loss(
    model: &Model,
    params: &ParamSet,
    window: &PreparedWindow,
    cfg: &TrainConfig,
    tape: &mut Tape,
) -> Result<crate::nn::NodeId, TrainError> {
    let out = model.forward(params, window, tape)?;
    let target = tape.input(window.targets.clone());
    let forecast = match cfg.loss {
        LossKind::Ssmape => loss_ssmape(tape, out.prediction, target, cfg.epsilon)?,
        LossKind::Mae => loss_mae(tape, out.prediction, target)?,
    };
    if cfg.beta == 0.0 {
        return Ok(forecast);
    }
    let penalty = l2_activation_penalty(tape, &out.rnn_outputs, cfg.beta)?;
    Ok(tape.add(forecast, penalty)?)
}

pub fn prepare_windows(windows: &FeatureWindows, scaler: &Standardizer) -> Vec<PreparedWindow> {
    exec::map(&windows.windows, |w| prepare_window(w, scaler))
}

pub fn train(
    model: Model,
    windows: &FeatureWindows,
    scaler: Standardizer,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    let prepared = prepare_windows(windows, &scaler);
    train_prepared(model, &prepared, scaler, cfg)
}

/// Plain SGD over the windows in order, `n_repeat` passes per epoch. From
/// `asgd_start_epoch` on, every step also folds the output layer into its
/// running average.
pub fn train_prepared(
    mut model: Model,
    windows: &[PreparedWindow],
    scaler: Standardizer,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(TrainError::NoWindows);
    }
    let n_out = model.params.get(model.output.weight).value.len();
    let mut trace = VarianceTrace::new((0..TRACKED_WEIGHTS.min(n_out)).collect());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * cfg.n_repeat * windows.len());

    for epoch in 0..cfg.epochs {
        let averaging = epoch >= cfg.asgd_start_epoch;
        let mut epoch_sum = 0.0;
        for _ in 0..cfg.n_repeat {
            for window in windows {
                let mut tape = Tape::new();
                let loss = window_loss(&model, &model.params, window, cfg, &mut tape)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        partial_steps: step_losses,
                    });
                }
                tape.backward(loss, &mut model.params)?;
                model.params.sgd_step(cfg.eta)?;
                if model
                    .params
                    .iter()
                    .any(|p| p.value.data().iter().any(|v| !v.is_finite()))
                {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        partial_steps: step_losses,
                    });
                }
                if averaging {
                    model.params.asgd_accumulate();
                    trace.record(model.params.get(model.output.weight));
                }
                step_losses.push(value);
                epoch_sum += value;
            }
        }
        history.push(epoch_sum / (cfg.n_repeat * windows.len()) as f64);
    }
    let seed = model.seed;
    Ok(TrainedModel {
        model,
        scaler,
        history,
        step_losses,
        variance_trace: trace,
        seed,
    })
}

/// `expm1`, clip at zero, round half away from zero: integer megawatts.
pub fn postprocess_predictions(transformed: &[f64]) -> Vec<u64> {
    expm1_inverse(transformed)
        .into_iter()
        .map(|mw| mw.max(0.0).round() as u64)
        .collect()
}

/// `100/N · Σ |F − A| / A`.
pub fn mape_pct(forecast: &[f64], actual: &[f64]) -> f64 {
    let n = actual.len() as f64;
    100.0 / n
        * forecast
            .iter()
            .zip(actual)
            .map(|(f, a)| (f - a).abs() / a)
            .sum::<f64>()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n − 1` denominator); zero for fewer than two
/// values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn sample_variance(values: &[f64]) -> f64 {
    sample_std(values).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One MAPE per test window, in percent.
    pub per_window_mape: Vec<f64>,
    pub mean_mape: f64,
    pub std_mape: f64,
}

impl EvalReport {
    pub fn from_windows(per_window_mape: Vec<f64>) -> Self {
        Self {
            mean_mape: mean(&per_window_mape),
            std_mape: sample_std(&per_window_mape),
            per_window_mape,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_index,mape_pct\n");
        for (i, m) in self.per_window_mape.iter().enumerate() {
            let _ = writeln!(out, "{i},{m}");
        }
        out
    }
}

/// Megawatt forecasts and actuals for one window.
pub fn window_forecast(
    trained: &TrainedModel,
    params: &ParamSet,
    window: &PreparedWindow,
) -> Result<Vec<u64>, TrainError> {
    Ok(postprocess_predictions(
        &trained.predict_transformed(params, window)?,
    ))
}

pub fn evaluate_mape(
    trained: &TrainedModel,
    test_windows: &FeatureWindows,
) -> Result<EvalReport, TrainError> {
    evaluate_mape_with(Execution::default(), trained, test_windows)
}

/// One MAPE per window over its horizon, comparing post-processed integer
/// megawatts with the actual demand.
pub fn evaluate_mape_with(
    mode: Execution,
    trained: &TrainedModel,
    test_windows: &FeatureWindows,
) -> Result<EvalReport, TrainError> {
    let params = trained.prediction_params();
    let indexed: Vec<_> = test_windows.windows.iter().enumerate().collect();
    let per_window = exec::map_with(mode, &indexed, |(wi, w)| -> Result<f64, TrainError> {
        let actual = expm1_inverse(&w.y_targets);
        if let Some((point, &value)) = actual.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
            return Err(TrainError::ZeroActual {
                window: *wi,
                point,
                value,
            });
        }
        let prepared = prepare_window(w, &trained.scaler);
        let forecast: Vec<f64> = window_forecast(trained, &params, &prepared)?
            .into_iter()
            .map(|v| v as f64)
            .collect();
        Ok(mape_pct(&forecast, &actual))
    });
    let per_window = per_window.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_windows(per_window))
}

/// Builds the feature matrix with autocorrelations measured only on the
/// history that precedes the end of the training rows, and returns the
/// chronological split over feature rows.
pub fn featurize_series(
    series: &TransformedSeries,
    fractions: [f64; 3],
) -> Result<(FeatureMatrix, SplitPlan), FeatureError> {
    let first = max_lag_steps();
    let needed = first + 1;
    if series.len() < needed {
        return Err(FeatureError::SeriesTooShort {
            len: series.len(),
            needed,
        });
    }
    let split = SplitPlan::by_fractions_aligned(series.len() - first, fractions, STEPS_PER_DAY)?;
    let autocorr = annual_quarterly_autocorr(&series.values[..first + split.train.end])?;
    let matrix = build_feature_matrix_with(series, autocorr)?;
    Ok((matrix, split))
}

/// Fits the scaler on the demand of every row covered by the training
/// windows.
pub fn fit_scaler(matrix: &FeatureMatrix, train: &FeatureWindows) -> Standardizer {
    let start = train.windows.iter().map(|w| w.x_start).min();
    let end = train.windows.iter().map(|w| w.y_rows().end).max();
    match (start, end) {
        (Some(s), Some(e)) => {
            let demand: Vec<f64> = (s..e).map(|r| matrix.row(r)[DEMAND_COL]).collect();
            Standardizer::fit(&demand)
        }
        _ => Standardizer::IDENTITY,
    }
}

/// Training and test windows plus a scaler fitted on training demand.
pub fn experiment_data(
    matrix: &FeatureMatrix,
    split: &SplitPlan,
    windows: &WindowConfig,
) -> Result<ExperimentData, FeatureError> {
    let train = make_windows_in(matrix, split.train.clone(), windows)?;
    let scaler = fit_scaler(matrix, &train);
    Ok(ExperimentData {
        train,
        test: make_windows_in(matrix, split.test.clone(), windows)?,
        scaler,
    })
}

/// Inputs shared by every arm of a comparison.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: FeatureWindows,
    pub test: FeatureWindows,
    pub scaler: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArmOutcome {
    Completed(EvalReport),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub initializer: Initializer,
    pub seed: u64,
    pub outcome: ArmOutcome,
    /// Per-step training loss (possibly partial for failed arms).
    pub step_losses: Vec<f64>,
    /// Output weight matrix right after initialization.
    pub initial_output_weight: Vec<f64>,
}

impl ArmResult {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            ArmOutcome::Completed(r) => Some(r),
            ArmOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub initializer: Initializer,
    /// Mean over seeds of each arm's mean MAPE.
    pub average_mape: f64,
    /// Sample standard deviation of those means across seeds.
    pub std_mape: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ArmResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentResult {
    /// Recomputes the per-initializer aggregate from the arm rows.
    pub fn aggregate_rows(rows: &[ArmResult], order: &[Initializer]) -> Vec<AggregateRow> {
        order
            .iter()
            .map(|&init| {
                let arms: Vec<_> = rows.iter().filter(|r| r.initializer == init).collect();
                let means: Vec<f64> = arms
                    .iter()
                    .filter_map(|r| r.report())
                    .map(|r| r.mean_mape)
                    .collect();
                AggregateRow {
                    initializer: init,
                    average_mape: if means.is_empty() {
                        f64::NAN
                    } else {
                        mean(&means)
                    },
                    std_mape: sample_std(&means),
                    completed: means.len(),
                    failed: arms.len() - means.len(),
                }
            })
            .collect()
    }

    /// Columns `initializer,seed,mean_mape_pct,std_mape_pct,status`.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("initializer,seed,mean_mape_pct,std_mape_pct,status\n");
        for r in &self.rows {
            match &r.outcome {
                ArmOutcome::Completed(rep) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},ok",
                        r.initializer, r.seed, rep.mean_mape, rep.std_mape
                    );
                }
                ArmOutcome::Failed(msg) => {
                    let _ = writeln!(
                        out,
                        "{},{},,,failed: {}",
                        r.initializer,
                        r.seed,
                        msg.replace(',', ";")
                    );
                }
            }
        }
        out
    }

    /// Columns `initializer,average_mape_pct,std_pct`.
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("initializer,average_mape_pct,std_pct\n");
        for a in &self.aggregate {
            let _ = writeln!(out, "{},{},{}", a.initializer, a.average_mape, a.std_mape);
        }
        out
    }

    /// Initializers with at least one completed arm, best (lowest) first.
    pub fn ranking(&self) -> Vec<(Initializer, f64)> {
        let mut v: Vec<_> = self
            .aggregate
            .iter()
            .filter(|a| a.completed > 0)
            .map(|a| (a.initializer, a.average_mape))
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1));
        v
    }
}

pub fn step_loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

/// Trains and evaluates one (initializer, seed) arm.
pub fn run_arm(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &ExperimentData,
    initializer: Initializer,
    seed: u64,
) -> ArmResult {
    let mut cfg = model_cfg.clone();
    cfg.fc_initializer = initializer;
    let mut tcfg = train_cfg.clone();
    tcfg.seed = seed;
    let model = match Model::new(cfg, seed) {
        Ok(m) => m,
        Err(e) => {
            return ArmResult {
                initializer,
                seed,
                outcome: ArmOutcome::Failed(e.to_string()),
                step_losses: Vec::new(),
                initial_output_weight: Vec::new(),
            }
        }
    };
    let initial_output_weight = model.params.get(model.output.weight).value.data().to_vec();
    let prepared = prepare_windows(&data.train, &data.scaler);
    let trained = train_prepared(model, &prepared, data.scaler, &tcfg);
    let (outcome, step_losses) = match trained {
        Ok(t) => {
            let outcome = match evaluate_mape_with(Execution::Sequential, &t, &data.test) {
                Ok(r) => ArmOutcome::Completed(r),
                Err(e) => ArmOutcome::Failed(e.to_string()),
            };
            (outcome, t.step_losses)
        }
        Err(TrainError::NonFiniteLoss {
            epoch,
            partial_steps,
        }) => (
            ArmOutcome::Failed(format!("non-finite loss in epoch {epoch}")),
            partial_steps,
        ),
        Err(e) => (ArmOutcome::Failed(e.to_string()), Vec::new()),
    };
    ArmResult {
        initializer,
        seed,
        outcome,
        step_losses,
        initial_output_weight,
    }
}

pub fn compare_initializers(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &ExperimentData,
    initializers: &[Initializer],
    seeds: &[u64],
) -> Result<ExperimentResult, TrainError> {
    compare_initializers_with(
        Execution::default(),
        model_cfg,
        train_cfg,
        data,
        initializers,
        seeds,
    )
}

/// Every (initializer, seed) arm is an independent job. Arms run through
/// [`exec::map_with`], and rows come back in initializer-major order
/// regardless of the execution mode.
pub fn compare_initializers_with(
    mode: Execution,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &ExperimentData,
    initializers: &[Initializer],
    seeds: &[u64],
) -> Result<ExperimentResult, TrainError> {
    if initializers.len() < 2 {
        return Err(TrainError::InvalidExperiment(
            "need at least two initializers".into(),
        ));
    }
    if seeds.len() < 3 {
        return Err(TrainError::InvalidExperiment(
            "need at least three seeds".into(),
        ));
    }
    model_cfg.validate()?;
    train_cfg.validate()?;
    let jobs: Vec<(Initializer, u64)> = initializers
        .iter()
        .flat_map(|&i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows = exec::map_with(mode, &jobs, |&(init, seed)| {
        run_arm(model_cfg, train_cfg, data, init, seed)
    });
    let aggregate = ExperimentResult::aggregate_rows(&rows, initializers);
    Ok(ExperimentResult { rows, aggregate })
}
