//! Catchment data strategies: one model per station, pooled models with a
//! station indicator or static attributes appended, and a stacked ensemble
//! combining a temporal and a static model through a linear regression layer.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RegionBundle, RejectReason, Rejection, STATIC_COLUMNS};
use crate::metrics::flat_rmse;
use crate::neural::{predict_dataset, train, LossSpec, NetKind, NetParams, NetSpec, NeuralError, TrainConfig};
use crate::series::{
    apply_scale, chrono_split_at, embed, fit_minmax, split_indices, ScalerParams, SeriesError, SplitSpec,
    WindowedDataset, BASE_FEATURES, STREAMFLOW_ROW,
};
use crate::switch::Routing;

/// Ridge added to the diagonal of the stacking normal equations.
pub const STACK_RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("missing static attributes for station {0}")]
    MissingStatics(String),
    #[error("no usable stations in region {0}")]
    NoStations(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Individual,
    BatchIndicator,
    BatchStatic,
    StackedEnsemble,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Individual,
        StrategyKind::BatchIndicator,
        StrategyKind::BatchStatic,
        StrategyKind::StackedEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Individual => "individual",
            StrategyKind::BatchIndicator => "batch_indicator",
            StrategyKind::BatchStatic => "batch_static",
            StrategyKind::StackedEnsemble => "stacked_ensemble",
        }
    }

    pub fn needs_statics(self) -> bool {
        matches!(self, StrategyKind::BatchStatic | StrategyKind::StackedEnsemble)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorEncoding {
    /// One column per station, 1 for the sample's station.
    #[default]
    OneHot,
    /// A single column holding the station's rank scaled to [0, 1].
    Integer,
}

/// Window shape and split shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub horizon: usize,
    pub split: SplitSpec,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: 5,
            horizon: 5,
            split: SplitSpec::default(),
        }
    }
}

/// One station scaled on its training period and embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStation {
    pub station_id: String,
    pub station_index: usize,
    pub dates: Vec<chrono::NaiveDate>,
    pub scaler: ScalerParams,
    /// First test day.
    pub boundary: usize,
    /// All samples, before splitting, in scaled space.
    pub dataset: WindowedDataset,
}

impl PreparedStation {
    pub fn split(&self, cfg: &WindowConfig) -> Result<(WindowedDataset, WindowedDataset), SeriesError> {
        chrono_split_at(&self.dataset, self.boundary, cfg.split.allow_context_overlap)
    }

    /// Training-period streamflow in original units.
    pub fn train_flows(&self, series: &crate::series::CatchmentSeries) -> Vec<f64> {
        series.streamflow[..self.boundary].to_vec()
    }

    pub fn unscale_flow(&self, v: f64) -> f64 {
        self.scaler.invert_value(STREAMFLOW_ROW, v)
    }
}

/// Scales a station on its training days and embeds it with the base
/// 6-feature layout.
pub fn prepare_station(
    series: &crate::series::CatchmentSeries,
    station_index: usize,
    cfg: &WindowConfig,
) -> Result<PreparedStation, SeriesError> {
    series.validate()?;
    let matrix = series.feature_matrix();
    let boundary = cfg.split.boundary_index(series.len());
    let scaler = fit_minmax(&matrix, boundary)?;
    let scaled = apply_scale(&matrix, &scaler)?;
    let mut dataset = embed(&scaled, STREAMFLOW_ROW, cfg.window, cfg.horizon)?;
    dataset.station_index = vec![station_index; dataset.len()];
    let prepared = PreparedStation {
        station_id: series.station_id.clone(),
        station_index,
        dates: series.dates.clone(),
        scaler,
        boundary,
        dataset,
    };
    prepared.split(cfg)?;
    Ok(prepared)
}

/// One dataset per station. Stations that cannot be embedded or split are
/// reported instead.
pub fn build_individual(region: &RegionBundle, cfg: &WindowConfig) -> (Vec<PreparedStation>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for s in &region.stations {
        match prepare_station(s, kept.len(), cfg) {
            Ok(p) => kept.push(p),
            Err(e) => rejected.push(Rejection {
                station_id: s.station_id.clone(),
                reason: match e {
                    SeriesError::TooShortToEmbed { len, window, horizon } => RejectReason::TooShort {
                        days: len,
                        needed: window + horizon,
                    },
                    other => RejectReason::Invalid {
                        message: other.to_string(),
                    },
                },
            }),
        }
    }
    (kept, rejected)
}

/// Pooled samples of several stations with extra per-station columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchData {
    pub stations: Vec<PreparedStation>,
    pub dataset: WindowedDataset,
    /// Number of columns appended to the base features.
    pub extra_features: usize,
}

fn require_stations(region: &RegionBundle, stations: &[PreparedStation]) -> Result<(), StrategyError> {
    if stations.is_empty() {
        Err(StrategyError::NoStations(region.region_id.clone()))
    } else {
        Ok(())
    }
}

/// Concatenates all stations' windows and appends a station indicator at every
/// timestep. Stations are ordered by id.
pub fn build_batch_indicator(
    region: &RegionBundle,
    cfg: &WindowConfig,
    encoding: IndicatorEncoding,
) -> Result<(BatchData, Vec<Rejection>), StrategyError> {
    let (stations, rejected) = build_individual(region, cfg);
    require_stations(region, &stations)?;
    let s_count = stations.len();
    let pooled = WindowedDataset::concat(&stations.iter().map(|p| p.dataset.clone()).collect::<Vec<_>>())?;
    let (extra, dataset) = match encoding {
        IndicatorEncoding::OneHot => (
            s_count,
            pooled.extend_features(s_count, |m| {
                let mut v = vec![0.0; s_count];
                v[pooled.station_index[m]] = 1.0;
                v
            }),
        ),
        IndicatorEncoding::Integer => {
            let denom = (s_count.max(2) - 1) as f64;
            (
                1,
                pooled.extend_features(1, |m| vec![pooled.station_index[m] as f64 / denom]),
            )
        }
    };
    Ok((
        BatchData {
            stations,
            dataset,
            extra_features: extra,
        },
        rejected,
    ))
}

/// Static attributes min-max scaled across the region's stations; returned in
/// station order.
pub fn scaled_statics(region: &RegionBundle, stations: &[PreparedStation]) -> Result<Vec<Vec<f64>>, StrategyError> {
    let raw: Vec<[f64; 7]> = stations
        .iter()
        .map(|p| {
            region
                .statics
                .get(&p.station_id)
                .map(|a| a.values())
                .ok_or_else(|| StrategyError::MissingStatics(p.station_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let matrix: Vec<Vec<f64>> = (0..STATIC_COLUMNS.len())
        .map(|k| raw.iter().map(|r| r[k]).collect())
        .collect();
    let scaler = fit_minmax(&matrix, raw.len())?;
    let scaled = apply_scale(&matrix, &scaler)?;
    Ok((0..raw.len())
        .map(|s| scaled.iter().map(|row| row[s]).collect())
        .collect())
}

/// Concatenates all stations' windows and appends the station's 7 scaled
/// static attributes at every timestep.
pub fn build_batch_static(
    region: &RegionBundle,
    cfg: &WindowConfig,
) -> Result<(BatchData, Vec<Rejection>), StrategyError> {
    let (stations, rejected) = build_individual(region, cfg);
    require_stations(region, &stations)?;
    let statics = scaled_statics(region, &stations)?;
    let pooled = WindowedDataset::concat(&stations.iter().map(|p| p.dataset.clone()).collect::<Vec<_>>())?;
    let dataset = pooled.extend_features(STATIC_COLUMNS.len(), |m| statics[pooled.station_index[m]].clone());
    Ok((
        BatchData {
            stations,
            dataset,
            extra_features: STATIC_COLUMNS.len(),
        },
        rejected,
    ))
}

/// Inputs of the static base model: each sample's scaled statics as a
/// one-step window, with the sample's targets.
pub fn static_dataset(temporal: &WindowedDataset, statics: &[Vec<f64>]) -> WindowedDataset {
    let mut inputs = Vec::with_capacity(temporal.len() * STATIC_COLUMNS.len());
    for &s in &temporal.station_index {
        inputs.extend_from_slice(&statics[s]);
    }
    WindowedDataset {
        inputs,
        window: 1,
        n_features: STATIC_COLUMNS.len(),
        ..temporal.clone()
    }
}

/// Per-output-step affine map from `[temporal (H) ‖ static (H) ‖ 1]` to the
/// target. Row `h` of `coef` holds the `2H + 1` weights for step `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCombiner {
    pub horizon: usize,
    pub coef: Vec<Vec<f64>>,
}

/// Least-squares fit of the stacking layer, ridge [`STACK_RIDGE`] on the diagonal.
pub fn fit_combiner(
    temporal: &[f64],
    static_pred: &[f64],
    targets: &[f64],
    horizon: usize,
) -> Result<EnsembleCombiner, StrategyError> {
    if horizon == 0
        || temporal.len() != targets.len()
        || static_pred.len() != targets.len()
        || !targets.len().is_multiple_of(horizon)
    {
        return Err(StrategyError::Shape(format!(
            "temporal {}, static {}, targets {}, horizon {horizon}",
            temporal.len(),
            static_pred.len(),
            targets.len()
        )));
    }
    let p = 2 * horizon + 1;
    let m = targets.len() / horizon;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![vec![0.0; p]; horizon];
    let mut row = vec![0.0; p];
    for s in 0..m {
        row[..horizon].copy_from_slice(&temporal[s * horizon..(s + 1) * horizon]);
        row[horizon..2 * horizon].copy_from_slice(&static_pred[s * horizon..(s + 1) * horizon]);
        row[2 * horizon] = 1.0;
        for i in 0..p {
            for j in 0..p {
                xtx[i * p + j] += row[i] * row[j];
            }
            for (h, rhs) in xty.iter_mut().enumerate() {
                rhs[i] += row[i] * targets[s * horizon + h];
            }
        }
    }
    for i in 0..p {
        xtx[i * p + i] += STACK_RIDGE;
    }
    let a = DMatrix::from_row_slice(p, p, &xtx);
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| StrategyError::Shape("stacking system is not positive definite".into()))?;
    let coef = xty
        .into_iter()
        .map(|rhs| {
            let b = DVector::from_vec(rhs);
            let mut x = chol.solve(&b);
            let resid = &b - &a * &x;
            x += chol.solve(&resid);
            x.iter().copied().collect()
        })
        .collect();
    Ok(EnsembleCombiner { horizon, coef })
}

/// Affine combination of one sample's temporal and static forecasts.
pub fn predict_stacked(combiner: &EnsembleCombiner, temporal: &[f64], static_pred: &[f64]) -> Vec<f64> {
    let h = combiner.horizon;
    combiner
        .coef
        .iter()
        .map(|w| {
            let mut y = w[2 * h];
            for k in 0..h {
                y += w[k] * temporal[k] + w[h + k] * static_pred[k];
            }
            y
        })
        .collect()
}

/// Applies [`predict_stacked`] to every sample of row-major `M × H` forecasts.
pub fn predict_stacked_all(combiner: &EnsembleCombiner, temporal: &[f64], static_pred: &[f64]) -> Vec<f64> {
    let h = combiner.horizon;
    temporal
        .chunks(h)
        .zip(static_pred.chunks(h))
        .flat_map(|(t, s)| predict_stacked(combiner, t, s))
        .collect()
}

/// A trained temporal model, static model and stacking layer.
#[derive(Debug, Clone)]
pub struct StackedEnsemble {
    pub temporal_spec: NetSpec,
    pub temporal_params: NetParams,
    pub static_spec: NetSpec,
    pub static_params: NetParams,
    pub combiner: EnsembleCombiner,
    /// Scaled statics per station, in station order.
    pub statics: Vec<Vec<f64>>,
}

/// Fit-set RMSE of the stacked ensemble and of each base model alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackFitReport {
    pub ensemble_rmse: f64,
    pub temporal_rmse: f64,
    pub static_rmse: f64,
}

/// Fits the stacking layer on the base models' training-set forecasts.
pub fn fit_stacked_ensemble(
    temporal: (&NetSpec, &NetParams),
    static_model: (&NetSpec, &NetParams),
    temporal_train: &WindowedDataset,
    static_train: &WindowedDataset,
) -> Result<(EnsembleCombiner, StackFitReport), StrategyError> {
    let tp = predict_dataset(temporal.0, temporal.1, temporal_train)?;
    let sp = predict_dataset(static_model.0, static_model.1, static_train)?;
    let combiner = fit_combiner(&tp, &sp, &temporal_train.targets, temporal_train.horizon)?;
    let ep = predict_stacked_all(&combiner, &tp, &sp);
    let y = &temporal_train.targets;
    let rm = |p: &[f64]| flat_rmse(p, y).map_err(|e| StrategyError::Shape(e.to_string()));
    Ok((
        combiner,
        StackFitReport {
            ensemble_rmse: rm(&ep)?,
            temporal_rmse: rm(&tp)?,
            static_rmse: rm(&sp)?,
        },
    ))
}

/// Model settings shared by the strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: NetKind,
    pub hidden_units: usize,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub indicator: IndicatorEncoding,
}

/// Test-period forecasts of one station, in scaled space.
#[derive(Debug, Clone, PartialEq)]
pub struct StationForecast {
    pub station_id: String,
    /// First input day of each test sample.
    pub origins: Vec<usize>,
    pub predictions: Vec<f64>,
    pub observations: Vec<f64>,
    /// Predicted rank and chosen branch per sample, for switching ensembles.
    pub routing: Option<Vec<Routing>>,
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub kind: StrategyKind,
    pub stations: Vec<PreparedStation>,
    pub forecasts: Vec<StationForecast>,
    pub rejected: Vec<Rejection>,
    pub stack_fit: Option<StackFitReport>,
}

fn split_pooled(
    pooled: &WindowedDataset,
    stations: &[PreparedStation],
    cfg: &WindowConfig,
) -> Result<(WindowedDataset, Vec<WindowedDataset>), StrategyError> {
    let mut train_idx = Vec::new();
    let mut tests = Vec::with_capacity(stations.len());
    for p in stations {
        let own: Vec<usize> = (0..pooled.len())
            .filter(|&m| pooled.station_index[m] == p.station_index)
            .collect();
        let sub = pooled.select(&own);
        let (tr, te, _) = split_indices(&sub, p.boundary, cfg.split.allow_context_overlap);
        train_idx.extend(tr.iter().map(|&i| own[i]));
        tests.push(sub.select(&te));
    }
    Ok((pooled.select(&train_idx), tests))
}

fn forecast(station: &PreparedStation, test: &WindowedDataset, predictions: Vec<f64>) -> StationForecast {
    StationForecast {
        station_id: station.station_id.clone(),
        origins: test.origin_index.clone(),
        predictions,
        observations: test.targets.clone(),
        routing: None,
    }
}

fn train_pooled(
    pooled: &WindowedDataset,
    stations: &[PreparedStation],
    cfg: &WindowConfig,
    model: &ModelConfig,
) -> Result<Vec<StationForecast>, StrategyError> {
    let (train_set, tests) = split_pooled(pooled, stations, cfg)?;
    let spec = NetSpec::new(
        model.kind,
        pooled.n_features,
        cfg.window,
        cfg.horizon,
        model.hidden_units,
    );
    let out = train(&spec, &train_set, &model.loss, &model.train, None)?;
    stations
        .iter()
        .zip(&tests)
        .map(|(p, te)| Ok(forecast(p, te, predict_dataset(&spec, &out.params, te)?)))
        .collect()
}

/// Trains the models of one strategy and forecasts every station's test period.
pub fn run_strategy(
    kind: StrategyKind,
    region: &RegionBundle,
    cfg: &WindowConfig,
    model: &ModelConfig,
) -> Result<StrategyOutcome, StrategyError> {
    match kind {
        StrategyKind::Individual => {
            let (stations, rejected) = build_individual(region, cfg);
            require_stations(region, &stations)?;
            let forecasts = stations
                .par_iter()
                .map(|p| {
                    let (tr, te) = p.split(cfg)?;
                    let spec = NetSpec::new(model.kind, BASE_FEATURES, cfg.window, cfg.horizon, model.hidden_units);
                    let out = train(&spec, &tr, &model.loss, &model.train, None)?;
                    Ok(forecast(p, &te, predict_dataset(&spec, &out.params, &te)?))
                })
                .collect::<Result<Vec<_>, StrategyError>>()?;
            Ok(StrategyOutcome {
                kind,
                stations,
                forecasts,
                rejected,
                stack_fit: None,
            })
        }
        StrategyKind::BatchIndicator | StrategyKind::BatchStatic => {
            let (batch, rejected) = if kind == StrategyKind::BatchIndicator {
                build_batch_indicator(region, cfg, model.indicator)?
            } else {
                build_batch_static(region, cfg)?
            };
            let forecasts = train_pooled(&batch.dataset, &batch.stations, cfg, model)?;
            Ok(StrategyOutcome {
                kind,
                stations: batch.stations,
                forecasts,
                rejected,
                stack_fit: None,
            })
        }
        StrategyKind::StackedEnsemble => {
            let (stations, rejected) = build_individual(region, cfg);
            require_stations(region, &stations)?;
            let statics = scaled_statics(region, &stations)?;
            let pooled = WindowedDataset::concat(&stations.iter().map(|p| p.dataset.clone()).collect::<Vec<_>>())?;
            let (train_set, tests) = split_pooled(&pooled, &stations, cfg)?;
            let static_train = static_dataset(&train_set, &statics);

            let t_spec = NetSpec::new(model.kind, BASE_FEATURES, cfg.window, cfg.horizon, model.hidden_units);
            let s_spec = NetSpec::new(NetKind::Dense, STATIC_COLUMNS.len(), 1, cfg.horizon, 0);
            let (t_out, s_out) = rayon::join(
                || train(&t_spec, &train_set, &model.loss, &model.train, None),
                || train(&s_spec, &static_train, &LossSpec::Mse, &model.train, None),
            );
            let (t_out, s_out) = (t_out?, s_out?);
            let (combiner, fit) = fit_stacked_ensemble(
                (&t_spec, &t_out.params),
                (&s_spec, &s_out.params),
                &train_set,
                &static_train,
            )?;
            let ensemble = StackedEnsemble {
                temporal_spec: t_spec,
                temporal_params: t_out.params,
                static_spec: s_spec,
                static_params: s_out.params,
                combiner,
                statics: statics.clone(),
            };
            let forecasts = stations
                .iter()
                .zip(&tests)
                .map(|(p, te)| {
                    let tp = predict_dataset(&ensemble.temporal_spec, &ensemble.temporal_params, te)?;
                    let sp = predict_dataset(
                        &ensemble.static_spec,
                        &ensemble.static_params,
                        &static_dataset(te, &statics),
                    )?;
                    Ok(forecast(p, te, predict_stacked_all(&ensemble.combiner, &tp, &sp)))
                })
                .collect::<Result<Vec<_>, StrategyError>>()?;
            Ok(StrategyOutcome {
                kind,
                stations,
                forecasts,
                rejected,
                stack_fit: Some(fit),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{align_common, StaticAttributes};
    use crate::synth::{SynthRegionSpec, SynthSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(n: usize, days: usize) -> RegionBundle {
        let spec = SynthRegionSpec {
            stations: n,
            base: SynthSpec {
                length_days: days,
                ..SynthSpec::default()
            },
            ..SynthRegionSpec::default()
        };
        let gen = spec.generate().unwrap();
        let statics = gen.iter().map(|(s, a)| (s.station_id.clone(), *a)).collect();
        align_common("SYN", gen.into_iter().map(|(s, _)| s).collect())
            .unwrap()
            .with_statics(&statics)
    }

    fn cfg() -> WindowConfig {
        WindowConfig::default()
    }

    #[test]
    fn individual_matches_embed() {
        let r = region(3, 300);
        let (ds, rej) = build_individual(&r, &cfg());
        assert_eq!(ds.len(), 3);
        assert!(rej.is_empty());
        for (i, p) in ds.iter().enumerate() {
            assert_eq!(p.dataset.len(), 300 - 5 - 5 + 1);
            assert_eq!(p.dataset.n_features, 6);
            assert!(p.dataset.station_index.iter().all(|&s| s == i));
            let m = apply_scale(&r.stations[i].feature_matrix(), &p.scaler).unwrap();
            let mut plain = embed(&m, STREAMFLOW_ROW, 5, 5).unwrap();
            plain.station_index = vec![i; plain.len()];
            assert_eq!(plain, p.dataset);
        }
    }

    #[test]
    fn short_station_is_rejected() {
        let r = region(1, 9);
        let (ds, rej) = build_individual(&r, &cfg());
        assert!(ds.is_empty());
        assert_eq!(rej[0].reason.code(), "too_short");
    }

    #[test]
    fn batch_indicator_shapes() {
        let r = region(2, 100);
        let (b, _) = build_batch_indicator(&r, &cfg(), IndicatorEncoding::OneHot).unwrap();
        assert_eq!(b.dataset.n_features, 8);
        assert_eq!(b.dataset.len(), 2 * 91);
        for m in 0..b.dataset.len() {
            let x = b.dataset.input(m);
            let mut sums = [0.0; 2];
            for step in x.chunks(8) {
                sums[0] += step[6];
                sums[1] += step[7];
            }
            let s = b.dataset.station_index[m];
            assert_eq!(sums[s], 5.0);
            assert_eq!(sums[1 - s], 0.0);
        }
        let one = region(1, 100);
        let (b1, _) = build_batch_indicator(&one, &cfg(), IndicatorEncoding::OneHot).unwrap();
        assert!(b1.dataset.inputs.chunks(7).all(|step| step[6] == 1.0));
        let (bi, _) = build_batch_indicator(&r, &cfg(), IndicatorEncoding::Integer).unwrap();
        assert_eq!(bi.dataset.n_features, 7);
    }

    #[test]
    fn batch_samples_reduce_to_individual() {
        let r = region(3, 120);
        let (ind, _) = build_individual(&r, &cfg());
        for (b, extra) in [
            (
                build_batch_indicator(&r, &cfg(), IndicatorEncoding::OneHot).unwrap().0,
                3,
            ),
            (build_batch_static(&r, &cfg()).unwrap().0, 7),
        ] {
            let f = 6 + extra;
            let mut offsets = [0usize; 3];
            for m in 0..b.dataset.len() {
                let s = b.dataset.station_index[m];
                let stripped: Vec<f64> = b.dataset.input(m).chunks(f).flat_map(|c| c[..6].to_vec()).collect();
                let k = offsets[s];
                offsets[s] += 1;
                assert_eq!(stripped, ind[s].dataset.input(k));
                assert_eq!(b.dataset.target(m), ind[s].dataset.target(k));
            }
        }
    }

    #[test]
    fn batch_static_shapes() {
        let r = region(2, 100);
        let (b, _) = build_batch_static(&r, &cfg()).unwrap();
        assert_eq!(b.dataset.n_features, 13);
        assert_eq!(b.dataset.len(), 182);
        for m in 0..b.dataset.len() {
            let x = b.dataset.input(m);
            let first: Vec<f64> = x[6..13].to_vec();
            assert!(x.chunks(13).all(|s| s[6..] == first[..]));
        }

        let mut same = region(2, 100);
        let a = StaticAttributes::from_values([1.0; 7]);
        same.statics = same.station_ids().iter().map(|id| (id.to_string(), a)).collect();
        let (b, _) = build_batch_static(&same, &cfg()).unwrap();
        assert!(b.dataset.inputs.chunks(13).all(|s| s[6..].iter().all(|&v| v == 0.0)));

        let mut missing = region(2, 100);
        missing.statics.clear();
        assert!(matches!(
            build_batch_static(&missing, &cfg()),
            Err(StrategyError::MissingStatics(_))
        ));
    }

    #[test]
    fn combiner_picks_perfect_temporal_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 5;
        let y: Vec<f64> = (0..1000 * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let noise: Vec<f64> = (0..1000 * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = fit_combiner(&y, &noise, &y, h).unwrap();
        for (k, row) in c.coef.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((w - expected).abs() < 1e-2, "step {k} coef {j} = {w}");
            }
        }
    }

    #[test]
    fn combiner_handles_duplicate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..300 * 2).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = fit_combiner(&y, &y, &y, 2).unwrap();
        let pred = predict_stacked_all(&c, &y, &y);
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
        let zeros = vec![0.0; 600];
        let z = fit_combiner(&y, &y, &zeros, 2).unwrap();
        assert!(z.coef.iter().flatten().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn predict_stacked_is_affine() {
        let t = [0.3, 0.7];
        let s = [0.1, 0.9];
        let pick_t = EnsembleCombiner {
            horizon: 2,
            coef: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]],
        };
        assert_eq!(predict_stacked(&pick_t, &t, &s), t.to_vec());
        let pick_s = EnsembleCombiner {
            horizon: 2,
            coef: vec![vec![0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0, 0.0]],
        };
        assert_eq!(predict_stacked(&pick_s, &t, &s), s.to_vec());
        let w = vec![vec![0.2, -0.4, 1.1, 0.3, 0.05], vec![-0.7, 0.25, 0.0, 2.0, -0.1]];
        let c = EnsembleCombiner {
            horizon: 2,
            coef: w.clone(),
        };
        let got = predict_stacked(&c, &t, &s);
        for k in 0..2 {
            let x = [t[0], t[1], s[0], s[1], 1.0];
            let manual: f64 = x.iter().zip(&w[k]).map(|(a, b)| a * b).sum();
            assert!((got[k] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
    }
}
