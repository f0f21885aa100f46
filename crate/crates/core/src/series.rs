//! Daily catchment series, min-max scaling, seasonal channels, sliding-window
//! embedding and chronological train/test splitting.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("empty series")]
    EmptySeries,
    #[error("series too short to embed: length {len}, window {window}, horizon {horizon}")]
    TooShortToEmbed { len: usize, window: usize, horizon: usize },
    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("ragged matrix: feature {feature} has {got} values, expected {expected}")]
    Ragged {
        feature: usize,
        expected: usize,
        got: usize,
    },
    #[error("train boundary {boundary} exceeds series length {len}")]
    BoundaryOutOfRange { boundary: usize, len: usize },
    #[error("window and horizon must be at least 1")]
    ZeroShape,
    #[error("empty train split")]
    EmptyTrain,
    #[error("empty test split")]
    EmptyTest,
    #[error("train fraction {0} is not in (0, 1)")]
    BadFraction(f64),
    #[error("invalid series {station}: {reason}")]
    Invalid { station: String, reason: String },
}

/// One station's aligned daily record. Missing values are carried as NaN
/// until [`crate::ingest::fill_missing`] resolves them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchmentSeries {
    pub station_id: String,
    pub dates: Vec<NaiveDate>,
    pub precip: Vec<f64>,
    pub tmin: Vec<f64>,
    pub tmax: Vec<f64>,
    pub streamflow: Vec<f64>,
}

/// Number of per-timestep features produced by [`CatchmentSeries::feature_matrix`].
pub const BASE_FEATURES: usize = 6;
/// Row of the streamflow channel in [`CatchmentSeries::feature_matrix`].
pub const STREAMFLOW_ROW: usize = 3;

impl CatchmentSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Checks the structural invariants: equal lengths, consecutive days,
    /// complete and non-negative streamflow, finite forcings.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let bad = |reason: String| SeriesError::Invalid {
            station: self.station_id.clone(),
            reason,
        };
        let t = self.dates.len();
        for (name, col) in [
            ("precip", &self.precip),
            ("tmin", &self.tmin),
            ("tmax", &self.tmax),
            ("streamflow", &self.streamflow),
        ] {
            if col.len() != t {
                return Err(bad(format!("{name} has {} values for {t} dates", col.len())));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(bad(format!("{name} missing or non-finite at day {i}")));
            }
        }
        for w in self.dates.windows(2) {
            if w[1].signed_duration_since(w[0]).num_days() != 1 {
                return Err(bad(format!("dates not consecutive at {}", w[1])));
            }
        }
        if let Some(i) = self.streamflow.iter().position(|&q| q < 0.0) {
            return Err(bad(format!("negative streamflow at day {i}")));
        }
        Ok(())
    }

    /// Restricts the series to the inclusive date range `[start, end]`.
    pub fn slice_dates(&self, start: NaiveDate, end: NaiveDate) -> CatchmentSeries {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        CatchmentSeries {
            station_id: self.station_id.clone(),
            dates: self.dates[lo..hi].to_vec(),
            precip: self.precip[lo..hi].to_vec(),
            tmin: self.tmin[lo..hi].to_vec(),
            tmax: self.tmax[lo..hi].to_vec(),
            streamflow: self.streamflow[lo..hi].to_vec(),
        }
    }

    /// Feature-major matrix `[precip, tmin, tmax, streamflow, sin, cos]`, 6×T.
    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        let (sin, cos): (Vec<f64>, Vec<f64>) = self.dates.iter().map(|d| seasonal_encode(*d)).unzip();
        vec![
            self.precip.clone(),
            self.tmin.clone(),
            self.tmax.clone(),
            self.streamflow.clone(),
            sin,
            cos,
        ]
    }
}

/// Per-feature min-max statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl ScalerParams {
    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    /// Scales one value of feature `f`.
    pub fn scale_value(&self, f: usize, x: f64) -> f64 {
        if self.degenerate[f] {
            0.0
        } else {
            (x - self.min[f]) / (self.max[f] - self.min[f])
        }
    }

    /// Maps one scaled value of feature `f` back to original units.
    pub fn invert_value(&self, f: usize, x: f64) -> f64 {
        if self.degenerate[f] {
            self.min[f]
        } else {
            x * (self.max[f] - self.min[f]) + self.min[f]
        }
    }
}

fn check_matrix(matrix: &[Vec<f64>]) -> Result<usize, SeriesError> {
    let t = matrix.first().map(Vec::len).ok_or(SeriesError::EmptySeries)?;
    for (feature, row) in matrix.iter().enumerate() {
        if row.len() != t {
            return Err(SeriesError::Ragged {
                feature,
                expected: t,
                got: row.len(),
            });
        }
    }
    if t == 0 {
        return Err(SeriesError::EmptySeries);
    }
    Ok(t)
}

/// Fits per-feature min/max over days `[0, train_boundary)` of a feature-major matrix.
pub fn fit_minmax(matrix: &[Vec<f64>], train_boundary: usize) -> Result<ScalerParams, SeriesError> {
    let t = check_matrix(matrix)?;
    if train_boundary > t {
        return Err(SeriesError::BoundaryOutOfRange {
            boundary: train_boundary,
            len: t,
        });
    }
    if train_boundary == 0 {
        return Err(SeriesError::EmptySeries);
    }
    let mut min = Vec::with_capacity(matrix.len());
    let mut max = Vec::with_capacity(matrix.len());
    for row in matrix {
        let train = &row[..train_boundary];
        min.push(train.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(train.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let degenerate = min.iter().zip(&max).map(|(lo, hi)| lo == hi).collect();
    Ok(ScalerParams { min, max, degenerate })
}

/// Applies `(x - min) / (max - min)` per feature. Values outside the training
/// range are not clipped.
pub fn apply_scale(matrix: &[Vec<f64>], params: &ScalerParams) -> Result<Vec<Vec<f64>>, SeriesError> {
    if matrix.len() != params.n_features() {
        return Err(SeriesError::FeatureMismatch {
            expected: params.n_features(),
            got: matrix.len(),
        });
    }
    Ok(matrix
        .iter()
        .enumerate()
        .map(|(f, row)| row.iter().map(|&x| params.scale_value(f, x)).collect())
        .collect())
}

pub fn invert_scale(scaled: &[Vec<f64>], params: &ScalerParams) -> Result<Vec<Vec<f64>>, SeriesError> {
    if scaled.len() != params.n_features() {
        return Err(SeriesError::FeatureMismatch {
            expected: params.n_features(),
            got: scaled.len(),
        });
    }
    Ok(scaled
        .iter()
        .enumerate()
        .map(|(f, row)| row.iter().map(|&x| params.invert_value(f, x)).collect())
        .collect())
}

/// Time-of-year as a point on the unit circle. Day-of-year is zero based and
/// normalised by the actual year length, so Dec 31 is always just short of a
/// full period.
pub fn seasonal_encode(date: NaiveDate) -> (f64, f64) {
    let year_len = if date.leap_year() { 366.0 } else { 365.0 };
    let angle = 2.0 * PI * f64::from(date.ordinal0()) / year_len;
    (angle.sin(), angle.cos())
}

/// Supervised samples cut from a feature-major series.
///
/// `inputs` is laid out sample-major, then time, then feature: the value of
/// feature `f` on lag `t` of sample `m` sits at `(m * window + t) * n_features + f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Day index of the first input day of each sample in the source series.
    pub origin_index: Vec<usize>,
    /// Source station of each sample (position in the region's sorted station list).
    pub station_index: Vec<usize>,
    pub window: usize,
    pub horizon: usize,
    pub n_features: usize,
    /// Length `T` of the source series the samples were cut from.
    pub source_len: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.origin_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_index.is_empty()
    }

    pub fn sample_width(&self) -> usize {
        self.window * self.n_features
    }

    pub fn input(&self, m: usize) -> &[f64] {
        let w = self.sample_width();
        &self.inputs[m * w..(m + 1) * w]
    }

    pub fn target(&self, m: usize) -> &[f64] {
        &self.targets[m * self.horizon..(m + 1) * self.horizon]
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        let mut out = WindowedDataset {
            inputs: Vec::with_capacity(indices.len() * self.sample_width()),
            targets: Vec::with_capacity(indices.len() * self.horizon),
            origin_index: Vec::with_capacity(indices.len()),
            station_index: Vec::with_capacity(indices.len()),
            window: self.window,
            horizon: self.horizon,
            n_features: self.n_features,
            source_len: self.source_len,
        };
        for &m in indices {
            out.inputs.extend_from_slice(self.input(m));
            out.targets.extend_from_slice(self.target(m));
            out.origin_index.push(self.origin_index[m]);
            out.station_index.push(self.station_index[m]);
        }
        out
    }

    /// Same inputs with a different target block of width `horizon`.
    pub fn with_targets(&self, targets: Vec<f64>, horizon: usize) -> WindowedDataset {
        assert_eq!(targets.len(), self.len() * horizon, "target block has wrong size");
        WindowedDataset {
            targets,
            horizon,
            ..self.clone()
        }
    }

    /// Appends the columns `extra(m)` at every timestep of sample `m`.
    pub fn extend_features<F>(&self, n_extra: usize, extra: F) -> WindowedDataset
    where
        F: Fn(usize) -> Vec<f64>,
    {
        let f_new = self.n_features + n_extra;
        let mut inputs = Vec::with_capacity(self.len() * self.window * f_new);
        for m in 0..self.len() {
            let cols = extra(m);
            debug_assert_eq!(cols.len(), n_extra);
            for step in self.input(m).chunks(self.n_features) {
                inputs.extend_from_slice(step);
                inputs.extend_from_slice(&cols);
            }
        }
        WindowedDataset {
            inputs,
            n_features: f_new,
            ..self.clone()
        }
    }

    /// Concatenates datasets sample-wise. All parts must share window,
    /// horizon and feature count.
    pub fn concat(parts: &[WindowedDataset]) -> Result<WindowedDataset, SeriesError> {
        let first = parts.first().ok_or(SeriesError::EmptySeries)?;
        let mut out = WindowedDataset {
            inputs: Vec::new(),
            targets: Vec::new(),
            origin_index: Vec::new(),
            station_index: Vec::new(),
            window: first.window,
            horizon: first.horizon,
            n_features: first.n_features,
            source_len: first.source_len,
        };
        for p in parts {
            if p.n_features != first.n_features || p.window != first.window || p.horizon != first.horizon {
                return Err(SeriesError::FeatureMismatch {
                    expected: first.n_features,
                    got: p.n_features,
                });
            }
            out.inputs.extend_from_slice(&p.inputs);
            out.targets.extend_from_slice(&p.targets);
            out.origin_index.extend_from_slice(&p.origin_index);
            out.station_index.extend_from_slice(&p.station_index);
            out.source_len = out.source_len.max(p.source_len);
        }
        Ok(out)
    }
}

/// Slides a window of `window` days over a feature-major matrix with unit time
/// delay. Sample `m` takes days `[m, m + window)` of every feature as input and
/// row `target_row` on days `[m + window, m + window + horizon)` as target, so
/// there are `T - window - horizon + 1` samples.
pub fn embed(
    matrix: &[Vec<f64>],
    target_row: usize,
    window: usize,
    horizon: usize,
) -> Result<WindowedDataset, SeriesError> {
    let t = check_matrix(matrix)?;
    if window == 0 || horizon == 0 {
        return Err(SeriesError::ZeroShape);
    }
    if target_row >= matrix.len() {
        return Err(SeriesError::FeatureMismatch {
            expected: target_row + 1,
            got: matrix.len(),
        });
    }
    if t < window + horizon {
        return Err(SeriesError::TooShortToEmbed {
            len: t,
            window,
            horizon,
        });
    }
    let n_features = matrix.len();
    let m_count = t - window - horizon + 1;
    let mut inputs = Vec::with_capacity(m_count * window * n_features);
    let mut targets = Vec::with_capacity(m_count * horizon);
    for m in 0..m_count {
        for day in m..m + window {
            inputs.extend(matrix.iter().map(|row| row[day]));
        }
        targets.extend_from_slice(&matrix[target_row][m + window..m + window + horizon]);
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        origin_index: (0..m_count).collect(),
        station_index: vec![0; m_count],
        window,
        horizon,
        n_features,
        source_len: t,
    })
}

/// Chronological split configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// When set, test samples may use days before the boundary as input
    /// context; only their targets must lie at or after it.
    #[serde(default)]
    pub allow_context_overlap: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.6,
            allow_context_overlap: false,
        }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self, SeriesError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(SeriesError::BadFraction(train_fraction));
        }
        Ok(SplitSpec {
            train_fraction,
            allow_context_overlap: false,
        })
    }

    /// First test day for a series of `len` days.
    pub fn boundary_index(&self, len: usize) -> usize {
        (self.train_fraction * len as f64).floor() as usize
    }
}

/// Indices of training, test and dropped samples for a given boundary day.
pub fn split_indices(
    dataset: &WindowedDataset,
    boundary: usize,
    allow_context_overlap: bool,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let span = dataset.window + dataset.horizon;
    let (mut train, mut test, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for (m, &origin) in dataset.origin_index.iter().enumerate() {
        let first_test_day = if allow_context_overlap {
            origin + dataset.window
        } else {
            origin
        };
        if origin + span <= boundary {
            train.push(m);
        } else if first_test_day >= boundary {
            test.push(m);
        } else {
            dropped.push(m);
        }
    }
    (train, test, dropped)
}

/// Splits samples at the boundary day `spec.boundary_index(source_len)`.
/// Samples straddling the boundary are dropped.
pub fn chrono_split(
    dataset: &WindowedDataset,
    spec: &SplitSpec,
) -> Result<(WindowedDataset, WindowedDataset), SeriesError> {
    if dataset.is_empty() {
        return Err(SeriesError::EmptySeries);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SeriesError::BadFraction(spec.train_fraction));
    }
    chrono_split_at(
        dataset,
        spec.boundary_index(dataset.source_len),
        spec.allow_context_overlap,
    )
}

pub fn chrono_split_at(
    dataset: &WindowedDataset,
    boundary: usize,
    allow_context_overlap: bool,
) -> Result<(WindowedDataset, WindowedDataset), SeriesError> {
    let (train, test, _) = split_indices(dataset, boundary, allow_context_overlap);
    if train.is_empty() {
        return Err(SeriesError::EmptyTrain);
    }
    if test.is_empty() {
        return Err(SeriesError::EmptyTest);
    }
    Ok((dataset.select(&train), dataset.select(&test)))
}
