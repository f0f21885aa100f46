//! Config-driven experiment runs: load a region, train every (strategy, model,
//! seed) combination, score the test period and write result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{align_common, load_region, load_static_csv, IngestError, MissingPolicy, RegionBundle, Rejection};
use crate::metrics::{headline_names, summarize, ForecastReport, MetricError, MetricSpace, Spread, SER_LEVELS};
use crate::neural::{LossSpec, NetKind, NetSpec, NeuralError, TrainConfig};
use crate::series::{SplitSpec, BASE_FEATURES};
use crate::strategy::{
    build_individual, run_strategy, IndicatorEncoding, ModelConfig, StationForecast, StrategyError, StrategyKind,
    StrategyOutcome, WindowConfig,
};
use crate::switch::{build_fdc, train_switch, SwitchConfig, SwitchError};
use crate::synth::{SynthError, SynthRegionSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Switch(#[from] SwitchError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("no stations left in region {0}")]
    EmptyRegion(String),
}

/// A forecaster choice: one of the networks, or the quantile switching ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelChoice {
    Net(NetKind),
    QuantileLstm,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Net(k) => k.name(),
            ModelChoice::QuantileLstm => "quantile_lstm",
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "quantile_lstm" {
            return Ok(ModelChoice::QuantileLstm);
        }
        s.parse::<NetKind>()
            .map(ModelChoice::Net)
            .map_err(|_| format!("unknown model {s:?}"))
    }
}

impl TryFrom<String> for ModelChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelChoice> for String {
    fn from(m: ModelChoice) -> String {
        m.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth {
        #[serde(default)]
        region: SynthRegionSpec,
    },
    Csv {
        /// Directory of per-station CSVs; every `*.csv` except the static table is loaded.
        timeseries_dir: PathBuf,
        #[serde(default)]
        static_csv: Option<PathBuf>,
        /// Keep only stations whose `state` column matches.
        #[serde(default)]
        state: Option<String>,
        #[serde(default)]
        missing: MissingPolicy,
    },
}

fn default_strategies() -> Vec<StrategyKind> {
    vec![StrategyKind::Individual]
}

fn default_models() -> Vec<ModelChoice> {
    vec![ModelChoice::Net(NetKind::Lstm)]
}

fn five() -> usize {
    5
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_space() -> MetricSpace {
    MetricSpace::Scaled
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelChoice>,
    #[serde(default = "five")]
    pub window: usize,
    #[serde(default = "five")]
    pub horizon: usize,
    #[serde(default)]
    pub split: SplitSpec,
    /// Hidden units for every network; each kind's default when absent.
    #[serde(default)]
    pub hidden_units: Option<usize>,
    #[serde(default)]
    pub indicator: IndicatorEncoding,
    #[serde(default)]
    pub switch: SwitchConfig,
    /// Training settings; `seed` is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "five")]
    pub runs: usize,
    /// Run `r` uses seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_space")]
    pub metric_space: MetricSpace,
    #[serde(default = "yes")]
    pub write_traces: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let err = |message: String| ExperimentError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window: self.window,
            horizon: self.horizon,
            split: self.split,
        }
    }

    fn hidden_for(&self, kind: NetKind) -> usize {
        match kind {
            NetKind::Dense => 0,
            k => self.hidden_units.unwrap_or_else(|| k.default_hidden()),
        }
    }
}

/// Problems that would stop `run`; empty when the config is runnable.
pub fn validate(config: &ExperimentConfig) -> Vec<String> {
    let mut d = Vec::new();
    if config.window == 0 {
        d.push("window must be at least 1".to_string());
    }
    if config.horizon == 0 {
        d.push("horizon must be at least 1".to_string());
    }
    if config.runs == 0 {
        d.push("runs must be at least 1".to_string());
    }
    if !(config.split.train_fraction > 0.0 && config.split.train_fraction < 1.0) {
        d.push(format!(
            "split.train_fraction {} is not in (0, 1)",
            config.split.train_fraction
        ));
    }
    if config.strategies.is_empty() {
        d.push("no strategies selected".to_string());
    }
    if config.models.is_empty() {
        d.push("no models selected".to_string());
    }
    if let Err(e) = config.train.validate() {
        d.push(e.to_string());
    }
    if config.train.early_stop.is_some() {
        d.push("train.early_stop needs a validation set, which experiment runs do not hold out".to_string());
    }
    if config.hidden_units == Some(0) {
        d.push("hidden_units must be positive".to_string());
    }
    let has_switch = config.models.contains(&ModelChoice::QuantileLstm);
    if has_switch {
        if let Err(e) = config.switch.validate() {
            d.push(e.to_string());
        }
        for s in &config.strategies {
            if *s != StrategyKind::Individual {
                d.push(format!("quantile_lstm runs with the individual strategy only, not {s}"));
            }
        }
    }
    if config.window > 0 && config.horizon > 0 {
        for m in &config.models {
            let kind = match m {
                ModelChoice::Net(k) => *k,
                ModelChoice::QuantileLstm => NetKind::Lstm,
            };
            let spec = NetSpec::new(
                kind,
                BASE_FEATURES,
                config.window,
                config.horizon,
                config.hidden_for(kind).max(1),
            );
            if let Err(e) = spec.validate() {
                d.push(format!("model {m}: {e}"));
            }
        }
    }
    let needs_statics = config.strategies.iter().any(|s| s.needs_statics());
    match &config.data {
        DataSource::Synth { region } => {
            if region.stations == 0 {
                d.push("data.region.stations must be at least 1".to_string());
            }
            if let Err(e) = region.base.validate() {
                d.push(e.to_string());
            }
        }
        DataSource::Csv {
            timeseries_dir,
            static_csv,
            state,
            ..
        } => {
            if !timeseries_dir.is_dir() {
                d.push(format!("timeseries_dir {} does not exist", timeseries_dir.display()));
            }
            match static_csv {
                Some(p) if !p.is_file() => d.push(format!("static_csv {} does not exist", p.display())),
                None if needs_statics => d.push("batch_static and stacked_ensemble need data.static_csv".to_string()),
                None if state.is_some() => d.push("state filter needs data.static_csv with a state column".to_string()),
                _ => {}
            }
        }
    }
    if config.output_dir.as_os_str().is_empty() {
        d.push("output_dir is empty".to_string());
    }
    d
}

/// Loads the configured region. Returns the bundle and stations dropped by
/// the missing-data policy.
pub fn load_data(config: &ExperimentConfig) -> Result<(RegionBundle, Vec<Rejection>), ExperimentError> {
    match &config.data {
        DataSource::Synth { region } => {
            let gen = region.generate()?;
            let statics = gen.iter().map(|(s, a)| (s.station_id.clone(), *a)).collect();
            let bundle = align_common(&region.region_id, gen.into_iter().map(|(s, _)| s).collect())?;
            Ok((bundle.with_statics(&statics), Vec::new()))
        }
        DataSource::Csv {
            timeseries_dir,
            static_csv,
            state,
            missing,
        } => {
            let table = static_csv.as_deref().map(load_static_csv).transpose()?;
            let static_canon = static_csv.as_deref().and_then(|p| p.canonicalize().ok());
            let listing = fs::read_dir(timeseries_dir).map_err(|source| IngestError::Io {
                path: timeseries_dir.clone(),
                source,
            })?;
            let mut files: Vec<PathBuf> = listing
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .filter(|p| static_canon.is_none() || p.canonicalize().ok() != static_canon)
                .collect();
            files.sort();
            if let (Some(code), Some(t)) = (state, &table) {
                files.retain(|p| {
                    let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    t.states.get(id).is_some_and(|s| s == code)
                });
            }
            let region_id = state.clone().unwrap_or_else(|| "ALL".to_string());
            if files.is_empty() {
                return Err(ExperimentError::EmptyRegion(region_id));
            }
            Ok(load_region(&region_id, &files, table.as_ref(), missing)?)
        }
    }
}

/// One trained (strategy, model, seed) combination.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub strategy: StrategyKind,
    pub model: ModelChoice,
    pub seed: u64,
    pub outcome: StrategyOutcome,
}

fn run_switch_job(
    region: &RegionBundle,
    config: &ExperimentConfig,
    train_cfg: &TrainConfig,
) -> Result<StrategyOutcome, ExperimentError> {
    let wc = config.window_config();
    let (stations, rejected) = build_individual(region, &wc);
    if stations.is_empty() {
        return Err(ExperimentError::EmptyRegion(region.region_id.clone()));
    }
    let spec = NetSpec::new(
        NetKind::Lstm,
        BASE_FEATURES,
        wc.window,
        wc.horizon,
        config.hidden_for(NetKind::Lstm),
    );
    let forecasts = stations
        .par_iter()
        .map(|p| {
            let series = region
                .stations
                .iter()
                .find(|s| s.station_id == p.station_id)
                .expect("prepared station comes from the region");
            let (tr, te) = p.split(&wc).map_err(StrategyError::from)?;
            let fdc = build_fdc(&p.train_flows(series))?;
            let ens = train_switch(&tr, &spec, fdc, &p.scaler, &config.switch, train_cfg)?;
            let (predictions, routing) = ens.predict_all(&te)?;
            Ok(StationForecast {
                station_id: p.station_id.clone(),
                origins: te.origin_index.clone(),
                predictions,
                observations: te.targets.clone(),
                routing: Some(routing),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(StrategyOutcome {
        kind: StrategyKind::Individual,
        stations,
        forecasts,
        rejected,
        stack_fit: None,
    })
}

/// Trains one combination on the region and forecasts its test period.
pub fn run_job(
    region: &RegionBundle,
    config: &ExperimentConfig,
    strategy: StrategyKind,
    model: ModelChoice,
    seed: u64,
) -> Result<JobResult, ExperimentError> {
    let train_cfg = TrainConfig { seed, ..config.train };
    let outcome = match model {
        ModelChoice::QuantileLstm => run_switch_job(region, config, &train_cfg)?,
        ModelChoice::Net(kind) => run_strategy(
            strategy,
            region,
            &config.window_config(),
            &ModelConfig {
                kind,
                hidden_units: config.hidden_for(kind),
                loss: LossSpec::Mse,
                train: train_cfg,
                indicator: config.indicator,
            },
        )?,
    };
    Ok(JobResult {
        strategy,
        model,
        seed,
        outcome,
    })
}

/// Scores every station forecast of a job in the requested space.
pub fn score_job(job: &JobResult, space: MetricSpace, horizon: usize) -> Result<Vec<ForecastReport>, ExperimentError> {
    job.outcome
        .stations
        .iter()
        .zip(&job.outcome.forecasts)
        .map(|(p, f)| {
            let (pred, obs) = match space {
                MetricSpace::Scaled => (f.predictions.clone(), f.observations.clone()),
                MetricSpace::OriginalUnits => (
                    f.predictions.iter().map(|&v| p.unscale_flow(v)).collect(),
                    f.observations.iter().map(|&v| p.unscale_flow(v)).collect(),
                ),
            };
            Ok(ForecastReport::compute(
                job.strategy.name(),
                job.model.name(),
                &f.station_id,
                job.seed,
                space,
                horizon,
                pred,
                obs,
            )?)
        })
        .collect()
}

/// In-memory result of a run, before or after writing.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub jobs: Vec<JobResult>,
    pub reports: Vec<ForecastReport>,
    pub rejected: Vec<Rejection>,
    pub region: RegionBundle,
}

/// Trains and scores every combination without writing anything.
pub fn execute(config: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    let diagnostics = validate(config);
    if !diagnostics.is_empty() {
        return Err(ExperimentError::Invalid(diagnostics));
    }
    let (region, mut rejected) = load_data(config)?;
    let mut combos = Vec::new();
    for &s in &config.strategies {
        for &m in &config.models {
            for seed in config.seeds() {
                combos.push((s, m, seed));
            }
        }
    }
    log::info!(
        "region {}: {} stations, {} jobs",
        region.region_id,
        region.stations.len(),
        combos.len()
    );
    let jobs = combos
        .par_iter()
        .map(|&(s, m, seed)| {
            log::debug!("training {s}/{m} seed {seed}");
            run_job(&region, config, s, m, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for j in &jobs {
        reports.extend(score_job(j, config.metric_space, config.horizon)?);
    }
    if let Some(first) = jobs.first() {
        rejected.extend(first.outcome.rejected.iter().cloned());
    }
    rejected.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    rejected.dedup();
    Ok(RunResult {
        jobs,
        reports,
        rejected,
        region,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn spread_cells(s: Option<Spread>) -> [String; 2] {
    match s {
        Some(s) => [
            s.mean.to_string(),
            if s.single_run { String::new() } else { s.std.to_string() },
        ],
        None => [String::new(), String::new()],
    }
}

fn seeds_cell(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn summary_header(extra_sd: bool) -> Vec<String> {
    let mut h: Vec<String> = ["strategy", "model", "station", "seeds"].map(String::from).to_vec();
    for name in headline_names() {
        h.push(name.clone());
        h.push(format!("{name}_sd_runs"));
        if extra_sd {
            h.push(format!("{name}_sd_stations"));
        }
    }
    h
}

type Key = (String, String);

fn grouped(reports: &[ForecastReport]) -> BTreeMap<Key, Vec<&ForecastReport>> {
    let mut g: BTreeMap<Key, Vec<&ForecastReport>> = BTreeMap::new();
    for r in reports {
        g.entry((r.strategy.clone(), r.model.clone())).or_default().push(r);
    }
    g
}

/// One row per (strategy, model): station means per run, then mean and
/// spread across runs; `_sd_stations` is the spread across stations of the
/// run-averaged scores.
pub fn summary_rows(
    reports: &[ForecastReport],
    strategy_order: &[StrategyKind],
    model_order: &[ModelChoice],
) -> Vec<Vec<String>> {
    let groups = grouped(reports);
    let n_metrics = headline_names().len();
    let mut rows = Vec::new();
    for s in strategy_order {
        for m in model_order {
            let Some(group) = groups.get(&(s.name().to_string(), m.name().to_string())) else {
                continue;
            };
            let mut by_seed: BTreeMap<u64, Vec<&ForecastReport>> = BTreeMap::new();
            let mut by_station: BTreeMap<&str, Vec<&ForecastReport>> = BTreeMap::new();
            for r in group {
                by_seed.entry(r.seed).or_default().push(r);
                by_station.entry(&r.station).or_default().push(r);
            }
            let seeds: Vec<u64> = by_seed.keys().copied().collect();
            let mut row = vec![
                s.name().to_string(),
                m.name().to_string(),
                "ALL".to_string(),
                seeds_cell(&seeds),
            ];
            for k in 0..n_metrics {
                let run_means: Vec<Option<f64>> = by_seed
                    .values()
                    .map(|rs| summarize(&rs.iter().map(|r| r.headline()[k]).collect::<Vec<_>>()).map(|x| x.mean))
                    .collect();
                let station_means: Vec<Option<f64>> = by_station
                    .values()
                    .map(|rs| summarize(&rs.iter().map(|r| r.headline()[k]).collect::<Vec<_>>()).map(|x| x.mean))
                    .collect();
                row.extend(spread_cells(summarize(&run_means)));
                row.push(spread_cells(summarize(&station_means))[1].clone());
            }
            rows.push(row);
        }
    }
    rows
}

fn station_rows(
    reports: &[ForecastReport],
    strategy_order: &[StrategyKind],
    model_order: &[ModelChoice],
) -> Vec<Vec<String>> {
    let groups = grouped(reports);
    let mut rows = Vec::new();
    for s in strategy_order {
        for m in model_order {
            let Some(group) = groups.get(&(s.name().to_string(), m.name().to_string())) else {
                continue;
            };
            let mut by_station: BTreeMap<&str, Vec<&ForecastReport>> = BTreeMap::new();
            for r in group {
                by_station.entry(&r.station).or_default().push(r);
            }
            for (station, rs) in by_station {
                let mut seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
                seeds.sort_unstable();
                let mut row = vec![
                    s.name().to_string(),
                    m.name().to_string(),
                    station.to_string(),
                    seeds_cell(&seeds),
                ];
                for k in 0..headline_names().len() {
                    row.extend(spread_cells(summarize(
                        &rs.iter().map(|r| r.headline()[k]).collect::<Vec<_>>(),
                    )));
                }
                rows.push(row);
            }
        }
    }
    rows
}

fn long_rows(result: &RunResult) -> Vec<[String; 7]> {
    let mut rows = Vec::new();
    for r in &result.reports {
        let base = |metric: &str, step: String, v: Option<f64>| {
            [
                r.strategy.clone(),
                r.model.clone(),
                r.station.clone(),
                r.seed.to_string(),
                metric.to_string(),
                step,
                fmt_opt(v),
            ]
        };
        for (h, v) in r.rmse_per_step.iter().enumerate() {
            rows.push(base("RMSE", (h + 1).to_string(), Some(*v)));
        }
        for (h, v) in r.nse_per_step.iter().enumerate() {
            rows.push(base("NSE", (h + 1).to_string(), *v));
        }
        rows.push(base("RMSE", "all".into(), Some(r.rmse)));
        rows.push(base("NSE", "all".into(), r.nse_mean()));
        for (l, v) in SER_LEVELS.iter().zip(&r.ser) {
            rows.push(base(&format!("SER{l}"), "all".into(), *v));
        }
    }
    for j in &result.jobs {
        if let Some(fit) = j.outcome.stack_fit {
            for (metric, v) in [
                ("fit_RMSE_ensemble", fit.ensemble_rmse),
                ("fit_RMSE_temporal", fit.temporal_rmse),
                ("fit_RMSE_static", fit.static_rmse),
            ] {
                rows.push([
                    j.strategy.name().into(),
                    j.model.name().into(),
                    "ALL".into(),
                    j.seed.to_string(),
                    metric.into(),
                    "all".into(),
                    v.to_string(),
                ]);
            }
        }
    }
    rows
}

/// Trace file name for one (strategy, model, station, seed).
pub fn trace_file_name(strategy: &str, model: &str, station: &str, seed: u64) -> String {
    format!("{strategy}__{model}__{station}__seed{seed}.csv")
}

fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<(), ExperimentError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let out_err = |e: csv::Error| ExperimentError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(out_err)?;
    w.write_record(header).map_err(out_err)?;
    for r in rows {
        w.write_record(r).map_err(out_err)?;
    }
    w.flush().map_err(|e| ExperimentError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_traces(dir: &Path, result: &RunResult, config: &ExperimentConfig) -> Result<Vec<String>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let h = config.horizon;
    let mut header: Vec<String> = ["strategy", "model", "station", "seed", "date", "observed"]
        .map(String::from)
        .to_vec();
    header.extend((1..=h).map(|k| format!("predicted_h{k}")));
    header.extend(["alpha_hat".to_string(), "branch".to_string()]);
    let mut names = Vec::new();
    let mut report_iter = result.reports.iter();
    for j in &result.jobs {
        for (p, f) in j.outcome.stations.iter().zip(&j.outcome.forecasts) {
            let report = report_iter.next().expect("one report per forecast");
            let name = trace_file_name(j.strategy.name(), j.model.name(), &f.station_id, j.seed);
            let rows = f.origins.iter().enumerate().map(|(m, &o)| {
                let mut row = vec![
                    j.strategy.name().to_string(),
                    j.model.name().to_string(),
                    f.station_id.clone(),
                    j.seed.to_string(),
                    p.dates[o + config.window].to_string(),
                    report.observations[m * h].to_string(),
                ];
                row.extend(report.predictions[m * h..(m + 1) * h].iter().map(f64::to_string));
                match &f.routing {
                    Some(r) => {
                        row.push(r[m].0.to_string());
                        row.push(r[m].1.name().to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
                row
            });
            write_csv(&dir.join(&name), &header, rows)?;
            names.push(name);
        }
    }
    Ok(names)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StationSplit {
    pub station: String,
    pub first_day: String,
    pub last_train_day: String,
    pub first_test_day: String,
    pub last_day: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub region: String,
    pub splits: Vec<StationSplit>,
    pub rejected: usize,
    pub files: Vec<String>,
    pub complete: bool,
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const STATION_SUMMARY_FILE: &str = "summary_by_station.csv";
pub const LONG_FILE: &str = "metrics_long.csv";
pub const REJECTIONS_FILE: &str = "rejections.csv";
pub const TRACE_DIR: &str = "traces";

fn base_manifest(config: &ExperimentConfig) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.hash(),
        config: config.clone(),
        seeds: config.seeds(),
        region: String::new(),
        splits: Vec::new(),
        rejected: 0,
        files: Vec::new(),
        complete: false,
        error: None,
    }
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), ExperimentError> {
    let path = dir.join(MANIFEST_FILE);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&path)?;
        f.write_all(&serde_json::to_vec_pretty(m).expect("manifest serializes"))?;
        f.write_all(b"\n")
    };
    write().map_err(|e| ExperimentError::Output {
        path: path.clone(),
        message: e.to_string(),
    })
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &RunResult) -> Result<RunManifest, ExperimentError> {
    let mut files = Vec::new();
    write_csv(
        &dir.join(SUMMARY_FILE),
        &summary_header(true),
        summary_rows(&result.reports, &config.strategies, &config.models),
    )?;
    files.push(SUMMARY_FILE.to_string());
    write_csv(
        &dir.join(STATION_SUMMARY_FILE),
        &summary_header(false),
        station_rows(&result.reports, &config.strategies, &config.models),
    )?;
    files.push(STATION_SUMMARY_FILE.to_string());
    write_csv(
        &dir.join(LONG_FILE),
        &[
            "strategy",
            "model",
            "station",
            "seed",
            "metric",
            "horizon_step",
            "value",
        ]
        .map(String::from),
        long_rows(result),
    )?;
    files.push(LONG_FILE.to_string());
    write_csv(
        &dir.join(REJECTIONS_FILE),
        &["station_id", "reason", "detail"].map(String::from),
        result
            .rejected
            .iter()
            .map(|r| [r.station_id.clone(), r.reason.code().to_string(), r.reason.to_string()]),
    )?;
    files.push(REJECTIONS_FILE.to_string());
    if config.write_traces {
        let traces = write_traces(&dir.join(TRACE_DIR), result, config)?;
        files.extend(traces.into_iter().map(|n| format!("{TRACE_DIR}/{n}")));
    }

    let splits = result
        .jobs
        .first()
        .map(|j| {
            j.outcome
                .stations
                .iter()
                .map(|p| StationSplit {
                    station: p.station_id.clone(),
                    first_day: p.dates[0].to_string(),
                    last_train_day: p.dates[p.boundary - 1].to_string(),
                    first_test_day: p.dates[p.boundary].to_string(),
                    last_day: p.dates[p.dates.len() - 1].to_string(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(RunManifest {
        region: result.region.region_id.clone(),
        splits,
        rejected: result.rejected.len(),
        files,
        complete: true,
        ..base_manifest(config)
    })
}

/// Runs the experiment and writes every output under `config.output_dir`.
/// The manifest is marked incomplete, with the error, when any step fails.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    let dir = &config.output_dir;
    let outcome: Result<RunResult, ExperimentError> = (|| {
        let result = execute(config)?;
        fs::create_dir_all(dir).map_err(|e| ExperimentError::Output {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        let manifest = write_outputs(dir, config, &result)?;
        write_manifest(dir, &manifest)?;
        Ok(result)
    })();
    if let Err(e) = &outcome {
        if dir.is_dir() {
            let _ = fs::remove_dir_all(dir.join(TRACE_DIR));
            for f in [SUMMARY_FILE, STATION_SUMMARY_FILE, LONG_FILE, REJECTIONS_FILE] {
                let _ = fs::remove_file(dir.join(f));
            }
            let manifest = RunManifest {
                error: Some(e.to_string()),
                ..base_manifest(config)
            };
            let _ = write_manifest(dir, &manifest);
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthSpec;

    fn small(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synth {
                region: SynthRegionSpec {
                    stations: 2,
                    base: SynthSpec {
                        length_days: 200,
                        ..SynthSpec::default()
                    },
                    ..SynthRegionSpec::default()
                },
            },
            strategies: default_strategies(),
            models: default_models(),
            window: 5,
            horizon: 5,
            split: SplitSpec::default(),
            hidden_units: Some(3),
            indicator: IndicatorEncoding::OneHot,
            switch: SwitchConfig::default(),
            train: TrainConfig {
                max_epochs: 2,
                ..TrainConfig::default()
            },
            runs: 2,
            seed: 0,
            output_dir: dir.to_path_buf(),
            metric_space: MetricSpace::Scaled,
            write_traces: true,
        }
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"data": {"source": "synth"}}"#).unwrap();
        assert_eq!(cfg.window, 5);
        assert_eq!(cfg.horizon, 5);
        assert_eq!(cfg.runs, 5);
        assert_eq!(cfg.models, vec![ModelChoice::Net(NetKind::Lstm)]);
        assert_eq!(cfg.metric_space, MetricSpace::Scaled);
        assert!(validate(&cfg).is_empty());
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"data": {"source": "synth"}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn model_names_parse() {
        for s in ["lstm", "bd_lstm", "ed_lstm", "cnn1d", "dense", "quantile_lstm"] {
            assert_eq!(s.parse::<ModelChoice>().unwrap().name(), s);
        }
        assert!("gru".parse::<ModelChoice>().is_err());
    }

    #[test]
    fn diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        assert!(validate(&cfg).is_empty());
        cfg.switch.mid_threshold = 0.99;
        cfg.models.push(ModelChoice::QuantileLstm);
        assert!(validate(&cfg).iter().any(|d| d.contains("thresholds")));

        let mut csv = small(dir.path());
        csv.data = DataSource::Csv {
            timeseries_dir: dir.path().to_path_buf(),
            static_csv: None,
            state: None,
            missing: MissingPolicy::default(),
        };
        csv.strategies = vec![StrategyKind::BatchStatic];
        assert!(validate(&csv).iter().any(|d| d.contains("static_csv")));

        let mut bad = small(dir.path());
        bad.runs = 0;
        bad.window = 0;
        bad.strategies = vec![StrategyKind::BatchIndicator];
        bad.models = vec![ModelChoice::QuantileLstm];
        let d = validate(&bad);
        assert!(d.iter().any(|x| x.contains("runs")));
        assert!(d.iter().any(|x| x.contains("window")));
        assert!(d.iter().any(|x| x.contains("individual strategy only")));
    }

    #[test]
    fn run_writes_attributable_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let result = run(&cfg).unwrap();
        assert_eq!(result.reports.len(), 4);
        let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("strategy,model,station,seeds,SER1,SER1_sd_runs,SER1_sd_stations"));
        assert!(lines[1].starts_with("individual,lstm,ALL,0;1,"));

        let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert!(manifest.complete);
        assert_eq!(manifest.config_sha256, cfg.hash());
        assert_eq!(manifest.splits.len(), 2);

        let long = fs::read_to_string(dir.path().join(LONG_FILE)).unwrap();
        for line in long.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 7);
            assert!(!cells[..4].iter().any(|c| c.is_empty()));
        }

        for split in &manifest.splits {
            let name = trace_file_name("individual", "lstm", &split.station, 1);
            let trace = fs::read_to_string(dir.path().join(TRACE_DIR).join(name)).unwrap();
            let first_test = chrono::NaiveDate::parse_from_str(&split.first_test_day, "%Y-%m-%d").unwrap();
            for line in trace.lines().skip(1) {
                let cells: Vec<&str> = line.split(',').collect();
                assert_eq!(cells.len(), 6 + 5 + 2);
                let date = chrono::NaiveDate::parse_from_str(cells[4], "%Y-%m-%d").unwrap();
                assert!(date - chrono::Duration::days(5) >= first_test);
            }
        }
    }

    #[test]
    fn failed_run_marks_manifest_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        if let DataSource::Synth { region } = &mut cfg.data {
            region.base.length_days = 12;
        }
        assert!(run(&cfg).is_err());
        let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert!(!manifest.complete);
        assert!(manifest.error.is_some());
        assert!(!dir.path().join(SUMMARY_FILE).exists());
    }
}
