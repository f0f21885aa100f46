//! RMSE, Nash-Sutcliffe efficiency and extreme-window SER scores over
//! multi-step forecasts stored row-major as `M × H`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Extremeness levels (percent) reported by the SER table.
pub const SER_LEVELS: [u32; 7] = [1, 2, 5, 10, 25, 50, 75];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no samples to score")]
    Empty,
    #[error("shape mismatch: predictions {pred}, observations {obs}, horizon {horizon}")]
    Shape { pred: usize, obs: usize, horizon: usize },
    #[error("NSE undefined: observations have zero variance")]
    NseUndefined,
    #[error("unsupported SER level {0}%")]
    BadLevel(u32),
}

fn check(pred: &[f64], obs: &[f64], horizon: usize) -> Result<usize, MetricError> {
    if horizon == 0 || pred.len() != obs.len() || !pred.len().is_multiple_of(horizon) {
        return Err(MetricError::Shape {
            pred: pred.len(),
            obs: obs.len(),
            horizon,
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(pred.len() / horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub per_step: Vec<f64>,
    /// Mean of the per-step values.
    pub aggregate: f64,
}

pub fn rmse(pred: &[f64], obs: &[f64], horizon: usize) -> Result<Rmse, MetricError> {
    let m = check(pred, obs, horizon)?;
    let mut sse = vec![0.0; horizon];
    for (i, (p, o)) in pred.iter().zip(obs).enumerate() {
        sse[i % horizon] += (p - o) * (p - o);
    }
    let per_step: Vec<f64> = sse.iter().map(|s| (s / m as f64).sqrt()).collect();
    let aggregate = per_step.iter().sum::<f64>() / horizon as f64;
    Ok(Rmse { per_step, aggregate })
}

/// Root mean squared error over all elements.
pub fn flat_rmse(pred: &[f64], obs: &[f64]) -> Result<f64, MetricError> {
    check(pred, obs, 1)?;
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// `1 - Σ(obs - pred)² / Σ(obs - mean(obs))²`.
pub fn nse(pred: &[f64], obs: &[f64]) -> Result<f64, MetricError> {
    check(pred, obs, 1)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let var: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if var == 0.0 {
        return Err(MetricError::NseUndefined);
    }
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (o - p) * (o - p)).sum();
    Ok(1.0 - sse / var)
}

/// NSE of each horizon step; `None` where the observations are constant.
pub fn nse_per_step(pred: &[f64], obs: &[f64], horizon: usize) -> Result<Vec<Option<f64>>, MetricError> {
    check(pred, obs, horizon)?;
    Ok((0..horizon)
        .map(|h| {
            let p: Vec<f64> = pred.iter().skip(h).step_by(horizon).copied().collect();
            let o: Vec<f64> = obs.iter().skip(h).step_by(horizon).copied().collect();
            nse(&p, &o).ok()
        })
        .collect())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_linear(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn check_level(level: u32) -> Result<(), MetricError> {
    if SER_LEVELS.contains(&level) {
        Ok(())
    } else {
        Err(MetricError::BadLevel(level))
    }
}

/// Flow threshold of the top-`level`% observed values.
pub fn ser_threshold(obs: &[f64], level: u32) -> Option<f64> {
    quantile_linear(obs, 1.0 - f64::from(level) / 100.0)
}

/// Samples whose observed horizon maximum reaches the SER threshold.
pub fn ser_members(obs: &[f64], horizon: usize, level: u32) -> Result<Vec<usize>, MetricError> {
    check_level(level)?;
    check(obs, obs, horizon)?;
    let threshold = ser_threshold(obs, level).ok_or(MetricError::Empty)?;
    Ok(obs
        .chunks(horizon)
        .enumerate()
        .filter(|(_, w)| w.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= threshold)
        .map(|(m, _)| m)
        .collect())
}

/// RMSE over every element of the windows containing a top-`level`% flow.
/// `None` when no window qualifies.
pub fn ser(pred: &[f64], obs: &[f64], horizon: usize, level: u32) -> Result<Option<f64>, MetricError> {
    check(pred, obs, horizon)?;
    let members = ser_members(obs, horizon, level)?;
    if members.is_empty() {
        return Ok(None);
    }
    let mut sse = 0.0;
    for &m in &members {
        for k in m * horizon..(m + 1) * horizon {
            sse += (pred[k] - obs[k]) * (pred[k] - obs[k]);
        }
    }
    Ok(Some((sse / (members.len() * horizon) as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    Scaled,
    OriginalUnits,
}

impl MetricSpace {
    pub fn name(self) -> &'static str {
        match self {
            MetricSpace::Scaled => "scaled",
            MetricSpace::OriginalUnits => "original_units",
        }
    }
}

/// Scores of one (strategy, model, station, run) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub strategy: String,
    pub model: String,
    pub station: String,
    pub seed: u64,
    pub space: MetricSpace,
    pub horizon: usize,
    pub predictions: Vec<f64>,
    pub observations: Vec<f64>,
    pub rmse_per_step: Vec<f64>,
    pub rmse: f64,
    pub nse_per_step: Vec<Option<f64>>,
    /// One entry per [`SER_LEVELS`] level.
    pub ser: Vec<Option<f64>>,
}

impl ForecastReport {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        strategy: &str,
        model: &str,
        station: &str,
        seed: u64,
        space: MetricSpace,
        horizon: usize,
        predictions: Vec<f64>,
        observations: Vec<f64>,
    ) -> Result<ForecastReport, MetricError> {
        let r = rmse(&predictions, &observations, horizon)?;
        let nse_per_step = nse_per_step(&predictions, &observations, horizon)?;
        let ser = SER_LEVELS
            .iter()
            .map(|&l| ser(&predictions, &observations, horizon, l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ForecastReport {
            strategy: strategy.to_string(),
            model: model.to_string(),
            station: station.to_string(),
            seed,
            space,
            horizon,
            predictions,
            observations,
            rmse_per_step: r.per_step,
            rmse: r.aggregate,
            nse_per_step,
            ser,
        })
    }

    /// Mean NSE over the defined horizon steps.
    pub fn nse_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self.nse_per_step.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Headline values in table order: SER levels, RMSE, NSE.
    pub fn headline(&self) -> Vec<Option<f64>> {
        let mut v = self.ser.clone();
        v.push(Some(self.rmse));
        v.push(self.nse_mean());
        v
    }
}

/// Column names matching [`ForecastReport::headline`].
pub fn headline_names() -> Vec<String> {
    SER_LEVELS
        .iter()
        .map(|l| format!("SER{l}"))
        .chain(["RMSE".to_string(), "NSE".to_string()])
        .collect()
}

/// Mean and sample standard deviation of repeated scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Set when only one value contributed, so `std` carries no information.
    pub single_run: bool,
}

/// Summarises the defined values; `None` when there are none.
pub fn summarize(values: &[Option<f64>]) -> Option<Spread> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Spread {
        mean,
        std,
        n,
        single_run: n == 1,
    })
}

/// Per-headline-metric spread across reports.
pub fn summarize_reports(reports: &[ForecastReport]) -> Vec<Option<Spread>> {
    let rows: Vec<Vec<Option<f64>>> = reports.iter().map(ForecastReport::headline).collect();
    (0..headline_names().len())
        .map(|k| summarize(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}
