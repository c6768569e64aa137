//! Feature matrix assembly and x/y windowing.
//!
//! Every row of a [`FeatureMatrix`] carries, in this order: transformed
//! demand, the day-of-week point on the unit circle, demand lagged by 3, 6,
//! 9 and 12 months, and the smoothed annual and quarterly autocorrelation
//! (the same two scalars on every row).

use std::f64::consts::PI;
use std::ops::Range;

use chrono::{Datelike, NaiveDateTime};

use crate::data_ingest::{step, TransformedSeries};
use crate::nn::Tensor;

pub const STEPS_PER_DAY: usize = 48;

pub const COLUMNS: [&str; 9] = [
    "demand",
    "dow_cos",
    "dow_sin",
    "lag_3m",
    "lag_6m",
    "lag_9m",
    "lag_12m",
    "autocorr_year",
    "autocorr_quarter",
];
pub const N_COLUMNS: usize = COLUMNS.len();
pub const DEMAND_COL: usize = 0;
pub const LAG_COLS: [usize; 4] = [3, 4, 5, 6];
/// Columns known ahead of time, fed alongside the forecast horizon.
pub const N_Y_FEATURES: usize = N_COLUMNS - 1;

pub const LAG_OFFSETS_MONTHS: [u32; 4] = [3, 6, 9, 12];

pub const DEFAULT_TRAINING_WINDOW: usize = 672;
pub const DEFAULT_PREDICT_WINDOW: usize = 96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("series of {len} points is too short: {needed} required")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("zero variance in autocorrelation at lag {0}")]
    ZeroVariance(usize),
    #[error("lag must be at least {min}, got {lag}")]
    BadLag { lag: usize, min: usize },
    #[error("window of {needed} rows does not fit in {rows} rows")]
    WindowTooLarge { needed: usize, rows: usize },
    #[error("invalid window parameter {name} = {value}")]
    InvalidWindow { name: &'static str, value: usize },
    #[error("split fractions {0:?} are invalid")]
    InvalidSplit([f64; 3]),
    #[error("{0}")]
    Malformed(String),
}

/// Steps in `days` days, rounded to the nearest half-hour.
pub fn days_to_steps(days: f64) -> usize {
    (days * STEPS_PER_DAY as f64).round() as usize
}

pub fn annual_lag_steps() -> usize {
    days_to_steps(365.0)
}

pub fn quarterly_lag_steps() -> usize {
    days_to_steps(365.25 / 4.0)
}

/// A month is `365.25 / 12` days.
pub fn month_offset_steps(months: u32) -> usize {
    days_to_steps(months as f64 * 365.25 / 12.0)
}

pub fn max_lag_steps() -> usize {
    month_offset_steps(12)
}

/// Pearson correlation of `values[..n-lag]` against `values[lag..]`.
pub fn pearson_autocorr(values: &[f64], lag: usize) -> Result<f64, FeatureError> {
    if lag < 1 {
        return Err(FeatureError::BadLag { lag, min: 1 });
    }
    let n = values.len();
    if n <= lag + 1 {
        return Err(FeatureError::SeriesTooShort {
            len: n,
            needed: lag + 2,
        });
    }
    let (a, b) = (&values[..n - lag], &values[lag..]);
    let constant = |s: &[f64]| s.iter().all(|v| *v == s[0]);
    if constant(a) || constant(b) {
        return Err(FeatureError::ZeroVariance(lag));
    }
    let m = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / m;
    let mean_b = b.iter().sum::<f64>() / m;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(FeatureError::ZeroVariance(lag));
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocorrFeature {
    pub lag_steps: usize,
    pub value: f64,
}

/// Weights applied to `corr(lag - 1)`, `corr(lag)`, `corr(lag + 1)`.
pub const SMOOTHING_WEIGHTS: [f64; 3] = [0.25, 0.5, 0.25];

pub fn smooth_triple(below: f64, at: f64, above: f64) -> f64 {
    SMOOTHING_WEIGHTS[1] * at + SMOOTHING_WEIGHTS[0] * below + SMOOTHING_WEIGHTS[2] * above
}

/// `0.5·corr(lag) + 0.25·corr(lag − 1) + 0.25·corr(lag + 1)`.
pub fn smoothed_autocorr(values: &[f64], lag: usize) -> Result<AutocorrFeature, FeatureError> {
    if lag < 2 {
        return Err(FeatureError::BadLag { lag, min: 2 });
    }
    let below = pearson_autocorr(values, lag - 1)?;
    let at = pearson_autocorr(values, lag)?;
    let above = pearson_autocorr(values, lag + 1)?;
    Ok(AutocorrFeature {
        lag_steps: lag,
        value: smooth_triple(below, at, above).clamp(-1.0, 1.0),
    })
}

/// Smoothed autocorrelation at one year and one quarter.
pub fn annual_quarterly_autocorr(
    values: &[f64],
) -> Result<(AutocorrFeature, AutocorrFeature), FeatureError> {
    let needed = days_to_steps(366.0) + 1;
    if values.len() < needed {
        return Err(FeatureError::SeriesTooShort {
            len: values.len(),
            needed,
        });
    }
    Ok((
        smoothed_autocorr(values, annual_lag_steps())?,
        smoothed_autocorr(values, quarterly_lag_steps())?,
    ))
}

/// Monday → 0 … Sunday → 6, placed on the unit circle at `m·2π/7`.
pub fn dow_encoding(timestamp: NaiveDateTime) -> (f64, f64) {
    let m = timestamp.weekday().num_days_from_monday() as f64;
    let normed = m / (7.0 / (2.0 * PI));
    (normed.cos(), normed.sin())
}

/// Lagged demand columns for rows `first_row..len`, where `first_row` is the
/// largest lag so every row has full history.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedColumns {
    pub first_row: usize,
    pub lags: Vec<usize>,
    /// One column per offset, each of length `len - first_row`.
    pub columns: Vec<Vec<f64>>,
}

pub fn lagged_features(
    values: &[f64],
    offsets_months: &[u32],
) -> Result<LaggedColumns, FeatureError> {
    let lags: Vec<usize> = offsets_months
        .iter()
        .map(|&m| month_offset_steps(m))
        .collect();
    let first_row = lags.iter().copied().max().unwrap_or(0);
    if values.len() <= first_row {
        return Err(FeatureError::SeriesTooShort {
            len: values.len(),
            needed: first_row + 1,
        });
    }
    let columns = lags
        .iter()
        .map(|&lag| (first_row..values.len()).map(|t| values[t - lag]).collect())
        .collect();
    Ok(LaggedColumns {
        first_row,
        lags,
        columns,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Index into the source series of row 0.
    pub series_offset: usize,
    pub timestamps: Vec<NaiveDateTime>,
    /// Row-major, `N_COLUMNS` per row.
    pub data: Vec<f64>,
    pub autocorr: (AutocorrFeature, AutocorrFeature),
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * N_COLUMNS..(r + 1) * N_COLUMNS]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(N_COLUMNS)
            .copied()
            .collect()
    }

    /// CSV with a leading `timestamp` column followed by the schema columns.
    pub fn to_csv(&self) -> String {
        let mut out = format!("timestamp,{}\n", COLUMNS.join(","));
        for r in 0..self.rows() {
            out.push_str(
                &self.timestamps[r]
                    .format(crate::data_ingest::ISO_FORMAT)
                    .to_string(),
            );
            for v in self.row(r) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, FeatureError> {
        let bad = |m: String| FeatureError::Malformed(m);
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty feature file".into()))?;
        let expected = format!("timestamp,{}", COLUMNS.join(","));
        if header.trim() != expected {
            return Err(bad(format!("feature header {header:?} != {expected:?}")));
        }
        let mut timestamps = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut fields = line.split(',');
            let ts = fields.next().unwrap_or_default();
            timestamps.push(
                NaiveDateTime::parse_from_str(ts, crate::data_ingest::ISO_FORMAT)
                    .map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
            );
            let before = data.len();
            for f in fields {
                data.push(
                    f.parse::<f64>()
                        .map_err(|_| bad(format!("line {}: bad value {f:?}", i + 2)))?,
                );
            }
            if data.len() - before != N_COLUMNS {
                return Err(bad(format!("line {}: expected {N_COLUMNS} values", i + 2)));
            }
        }
        if timestamps.is_empty() {
            return Err(bad("feature file has no rows".into()));
        }
        let year = data[7];
        let quarter = data[8];
        Ok(Self {
            series_offset: max_lag_steps(),
            timestamps,
            data,
            autocorr: (
                AutocorrFeature {
                    lag_steps: annual_lag_steps(),
                    value: year,
                },
                AutocorrFeature {
                    lag_steps: quarterly_lag_steps(),
                    value: quarter,
                },
            ),
        })
    }
}

fn push_row(
    data: &mut Vec<f64>,
    demand: f64,
    ts: NaiveDateTime,
    lagged: [f64; 4],
    autocorr: (AutocorrFeature, AutocorrFeature),
) {
    let (c, s) = dow_encoding(ts);
    data.extend_from_slice(&[demand, c, s]);
    data.extend_from_slice(&lagged);
    data.push(autocorr.0.value);
    data.push(autocorr.1.value);
}

/// Assembles the feature matrix with autocorrelations measured on the whole
/// series.
pub fn build_feature_matrix(series: &TransformedSeries) -> Result<FeatureMatrix, FeatureError> {
    let autocorr = annual_quarterly_autocorr(&series.values)?;
    build_feature_matrix_with(series, autocorr)
}

/// Assembles the feature matrix with externally supplied autocorrelation
/// scalars (typically measured on the training span only).
pub fn build_feature_matrix_with(
    series: &TransformedSeries,
    autocorr: (AutocorrFeature, AutocorrFeature),
) -> Result<FeatureMatrix, FeatureError> {
    let lagged = lagged_features(&series.values, &LAG_OFFSETS_MONTHS)?;
    let first = lagged.first_row;
    let rows = series.len() - first;
    let mut data = Vec::with_capacity(rows * N_COLUMNS);
    for r in 0..rows {
        let t = first + r;
        let lags = [
            lagged.columns[0][r],
            lagged.columns[1][r],
            lagged.columns[2][r],
            lagged.columns[3][r],
        ];
        push_row(
            &mut data,
            series.values[t],
            series.timestamps[t],
            lags,
            autocorr,
        );
    }
    Ok(FeatureMatrix {
        series_offset: first,
        timestamps: series.timestamps[first..].to_vec(),
        data,
        autocorr,
    })
}

/// Known-in-advance features for the `horizon` half-hours following the end
/// of `series`: `[horizon, N_Y_FEATURES]`, demand column excluded.
pub fn future_features(
    series: &TransformedSeries,
    horizon: usize,
    autocorr: (AutocorrFeature, AutocorrFeature),
) -> Result<(Vec<NaiveDateTime>, Tensor), FeatureError> {
    let n = series.len();
    let lags: Vec<usize> = LAG_OFFSETS_MONTHS
        .iter()
        .map(|&m| month_offset_steps(m))
        .collect();
    let min_lag = *lags.iter().min().expect("four offsets");
    if horizon == 0 || horizon > min_lag {
        return Err(FeatureError::InvalidWindow {
            name: "horizon",
            value: horizon,
        });
    }
    let max_lag = *lags.iter().max().expect("four offsets");
    if n + 1 <= max_lag {
        return Err(FeatureError::SeriesTooShort {
            len: n,
            needed: max_lag,
        });
    }
    let last = *series
        .timestamps
        .last()
        .ok_or(FeatureError::SeriesTooShort { len: 0, needed: 1 })?;
    let mut stamps = Vec::with_capacity(horizon);
    let mut data = Vec::with_capacity(horizon * N_COLUMNS);
    for h in 1..=horizon {
        let t = n - 1 + h;
        let ts = last + step() * h as i32;
        let lagged = [
            series.values[t - lags[0]],
            series.values[t - lags[1]],
            series.values[t - lags[2]],
            series.values[t - lags[3]],
        ];
        push_row(&mut data, 0.0, ts, lagged, autocorr);
        stamps.push(ts);
    }
    let y: Vec<f64> = data
        .chunks_exact(N_COLUMNS)
        .flat_map(|row| row[1..].iter().copied())
        .collect();
    Ok((
        stamps,
        Tensor::from_parts_unchecked(vec![horizon, N_Y_FEATURES], y),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub training_window: usize,
    pub predict_window: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            training_window: DEFAULT_TRAINING_WINDOW,
            predict_window: DEFAULT_PREDICT_WINDOW,
            stride: DEFAULT_PREDICT_WINDOW,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        for (name, value) in [
            ("training_window", self.training_window),
            ("predict_window", self.predict_window),
            ("stride", self.stride),
        ] {
            if value == 0 {
                return Err(FeatureError::InvalidWindow { name, value });
            }
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.training_window + self.predict_window
    }
}

/// One (x, y) pair. Row indices refer to the source [`FeatureMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub x_start: usize,
    pub y_start: usize,
    /// `[training_window, N_COLUMNS]`.
    pub x: Tensor,
    /// `[predict_window, N_Y_FEATURES]`.
    pub y_features: Tensor,
    /// Transformed demand over the horizon.
    pub y_targets: Vec<f64>,
}

impl FeatureWindow {
    pub fn x_rows(&self) -> Range<usize> {
        self.x_start..self.y_start
    }

    pub fn y_rows(&self) -> Range<usize> {
        self.y_start..self.y_start + self.y_targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindows {
    pub config: WindowConfig,
    pub windows: Vec<FeatureWindow>,
}

impl FeatureWindows {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `floor((rows − tw − pw) / stride) + 1`.
pub fn window_count(rows: usize, cfg: &WindowConfig) -> usize {
    if rows < cfg.span() || cfg.stride == 0 {
        0
    } else {
        (rows - cfg.span()) / cfg.stride + 1
    }
}

/// Start rows of every window that fits in `rows`.
pub fn window_starts(rows: Range<usize>, cfg: &WindowConfig) -> Result<Vec<usize>, FeatureError> {
    cfg.validate()?;
    let n = rows.len();
    if n < cfg.span() {
        return Err(FeatureError::WindowTooLarge {
            needed: cfg.span(),
            rows: n,
        });
    }
    Ok((0..window_count(n, cfg))
        .map(|k| rows.start + k * cfg.stride)
        .collect())
}

pub fn extract_window(
    features: &FeatureMatrix,
    x_start: usize,
    cfg: &WindowConfig,
) -> FeatureWindow {
    let tw = cfg.training_window;
    let pw = cfg.predict_window;
    let y_start = x_start + tw;
    let x = Tensor::from_parts_unchecked(
        vec![tw, N_COLUMNS],
        features.data[x_start * N_COLUMNS..y_start * N_COLUMNS].to_vec(),
    );
    let mut y_features = Vec::with_capacity(pw * N_Y_FEATURES);
    let mut y_targets = Vec::with_capacity(pw);
    for r in y_start..y_start + pw {
        let row = features.row(r);
        y_targets.push(row[DEMAND_COL]);
        y_features.extend_from_slice(&row[1..]);
    }
    FeatureWindow {
        x_start,
        y_start,
        x,
        y_features: Tensor::from_parts_unchecked(vec![pw, N_Y_FEATURES], y_features),
        y_targets,
    }
}

pub fn make_windows(
    features: &FeatureMatrix,
    training_window: usize,
    predict_window: usize,
    stride: usize,
) -> Result<FeatureWindows, FeatureError> {
    make_windows_in(
        features,
        0..features.rows(),
        &WindowConfig {
            training_window,
            predict_window,
            stride,
        },
    )
}

/// Windows drawn only from `rows` of the matrix.
pub fn make_windows_in(
    features: &FeatureMatrix,
    rows: Range<usize>,
    cfg: &WindowConfig,
) -> Result<FeatureWindows, FeatureError> {
    let starts = window_starts(rows, cfg)?;
    let windows = crate::exec::map(&starts, |&s| extract_window(features, s, cfg));
    Ok(FeatureWindows {
        config: *cfg,
        windows,
    })
}

/// Contiguous chronological train/validation/test ranges over feature rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.5, 0.25, 0.25];

impl SplitPlan {
    pub fn by_fractions(rows: usize, fractions: [f64; 3]) -> Result<Self, FeatureError> {
        Self::by_fractions_aligned(rows, fractions, 1)
    }

    /// Like [`by_fractions`](Self::by_fractions), with both boundaries
    /// rounded to a multiple of `align` rows. Aligning to whole days keeps
    /// every split at the same time-of-day phase; nothing in the feature set
    /// encodes the hour, so a window shifted by half a day looks like a
    /// different series to a model trained on day-aligned windows.
    pub fn by_fractions_aligned(
        rows: usize,
        fractions: [f64; 3],
        align: usize,
    ) -> Result<Self, FeatureError> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| !(*f >= 0.0))
            || (total - 1.0).abs() > 1e-9
            || fractions[0] == 0.0
            || align == 0
        {
            return Err(FeatureError::InvalidSplit(fractions));
        }
        let snap = |f: f64| ((rows as f64 * f / align as f64).round() as usize) * align;
        let train_end = snap(fractions[0]);
        let val_end = snap(fractions[0] + fractions[1]).max(train_end);
        Ok(Self {
            train: 0..train_end.min(rows),
            validation: train_end.min(rows)..val_end.min(rows),
            test: val_end.min(rows)..rows,
        })
    }
}
