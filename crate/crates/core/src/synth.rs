//! Seeded synthetic rainfall-runoff generator.
//!
//! Storms arrive as a compound Poisson process with Pareto depths and are
//! routed through a linear reservoir:
//!
//! ```text
//! flow[t]    = (1 - k) · S[t] + baseflow
//! S[t + 1]   = k · S[t] + precip[t]
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{write_static_csv, write_timeseries_csv, IngestError, StaticAttributes};
use crate::series::CatchmentSeries;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("top_k {top_k} exceeds series length {len}")]
    TopKTooLarge { top_k: usize, len: usize },
    #[error(transparent)]
    Io(#[from] IngestError),
    #[error("{0}")]
    Dir(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub station_id: String,
    pub seed: u64,
    pub length_days: usize,
    pub start_date: NaiveDate,
    /// Expected storms per year.
    pub storm_rate: f64,
    /// Pareto scale (minimum storm depth), mm.
    pub storm_scale_mm: f64,
    /// Pareto tail index; smaller is heavier.
    pub tail_index: f64,
    /// Reservoir retention per day, in (0, 1).
    pub recession_k: f64,
    pub baseflow: f64,
    pub initial_storage: f64,
    pub temp_mean_c: f64,
    pub temp_amplitude_c: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            station_id: "synth".into(),
            seed: 0,
            length_days: 4000,
            start_date: NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date"),
            storm_rate: 40.0,
            storm_scale_mm: 4.0,
            tail_index: 1.8,
            recession_k: 0.85,
            baseflow: 0.2,
            initial_storage: 0.0,
            temp_mean_c: 16.0,
            temp_amplitude_c: 7.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if !(self.recession_k > 0.0 && self.recession_k < 1.0) {
            return bad("recession_k must be in (0, 1)");
        }
        // a zero rate is allowed: it gives the pure recession used in tests
        if !self.storm_rate.is_finite() || self.storm_rate < 0.0 {
            return bad("storm_rate must be non-negative");
        }
        if self.tail_index.is_nan() || self.tail_index <= 1.0 {
            return bad("tail_index must exceed 1");
        }
        if self.storm_scale_mm.is_nan() || self.storm_scale_mm <= 0.0 {
            return bad("storm_scale_mm must be positive");
        }
        if [self.baseflow, self.initial_storage]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return bad("baseflow and initial_storage must be non-negative");
        }
        if self.length_days == 0 {
            return bad("length_days must be positive");
        }
        Ok(())
    }
}

/// Routes precipitation through the linear reservoir.
pub fn route_reservoir(precip: &[f64], k: f64, baseflow: f64, initial_storage: f64) -> Vec<f64> {
    let mut s = initial_storage;
    precip
        .iter()
        .map(|p| {
            let q = (1.0 - k) * s + baseflow;
            s = k * s + p;
            q
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<CatchmentSeries, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let daily_rate = spec.storm_rate / 365.25;
    let storms = (daily_rate > 0.0).then(|| Poisson::new(daily_rate).expect("positive rate"));
    let noise = Normal::new(0.0, 1.5).expect("valid sd");
    let t = spec.length_days;
    let mut dates = Vec::with_capacity(t);
    let mut precip = Vec::with_capacity(t);
    let mut tmin = Vec::with_capacity(t);
    let mut tmax = Vec::with_capacity(t);
    let mut date = spec.start_date;
    for _ in 0..t {
        let count = storms.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
        let mut depth = 0.0;
        for _ in 0..count {
            // inverse-CDF Pareto draw; the uniform stream does not depend on the tail index
            let u: f64 = 1.0 - rng.random::<f64>();
            depth += spec.storm_scale_mm * u.powf(-1.0 / spec.tail_index);
        }
        let phase = 2.0 * PI * f64::from(date.ordinal0()) / 365.25;
        let mean = spec.temp_mean_c + spec.temp_amplitude_c * phase.cos();
        let n0: f64 = noise.sample(&mut rng);
        let n1: f64 = noise.sample(&mut rng);
        let n2: f64 = noise.sample(&mut rng);
        dates.push(date);
        precip.push(depth);
        tmin.push(mean + n0 - 5.0 - n1.abs());
        tmax.push(mean + n0 + 5.0 + n2.abs());
        date = date.succ_opt().expect("date overflow");
    }
    let streamflow = route_reservoir(&precip, spec.recession_k, spec.baseflow, spec.initial_storage);
    Ok(CatchmentSeries {
        station_id: spec.station_id.clone(),
        dates,
        precip,
        tmin,
        tmax,
        streamflow,
    })
}

/// Indices of the `top_k` highest flow days, highest first; ties go to the
/// earlier day.
pub fn known_extremes(series: &CatchmentSeries, top_k: usize) -> Result<Vec<usize>, SynthError> {
    let len = series.streamflow.len();
    if top_k > len {
        return Err(SynthError::TopKTooLarge { top_k, len });
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by(|&a, &b| series.streamflow[b].total_cmp(&series.streamflow[a]).then(a.cmp(&b)));
    idx.truncate(top_k);
    Ok(idx)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Hydrological signatures of a complete series, used as its static attributes.
pub fn compute_statics(series: &CatchmentSeries) -> StaticAttributes {
    let q = &series.streamflow;
    let p = &series.precip;
    let n = q.len().max(1) as f64;
    let years = n / 365.25;
    let mean_q = q.iter().sum::<f64>() / n;
    let sum_p: f64 = p.iter().sum();
    let runoff_ratio = if sum_p > 0.0 {
        q.iter().sum::<f64>() / sum_p
    } else {
        0.0
    };

    // median elasticity of annual flow anomalies w.r.t. annual rainfall anomalies
    let blocks: Vec<(f64, f64)> = q
        .chunks_exact(365)
        .zip(p.chunks_exact(365))
        .map(|(a, b)| (a.iter().sum::<f64>(), b.iter().sum::<f64>()))
        .collect();
    let sensitivity = if blocks.len() >= 2 {
        let qm = blocks.iter().map(|b| b.0).sum::<f64>() / blocks.len() as f64;
        let pm = blocks.iter().map(|b| b.1).sum::<f64>() / blocks.len() as f64;
        let e: Vec<f64> = blocks
            .iter()
            .filter(|b| (b.1 - pm).abs() > 1e-12 && qm > 0.0)
            .map(|b| ((b.0 - qm) / (b.1 - pm)) * (pm / qm))
            .collect();
        if e.is_empty() {
            0.0
        } else {
            median(&e)
        }
    } else {
        0.0
    };

    let high = 9.0 * median(q);
    let is_high: Vec<bool> = q.iter().map(|&v| v > high).collect();
    let high_days = is_high.iter().filter(|&&b| b).count() as f64;
    let mut runs = Vec::new();
    let mut cur = 0usize;
    for &h in &is_high {
        if h {
            cur += 1;
        } else if cur > 0 {
            runs.push(cur);
            cur = 0;
        }
    }
    if cur > 0 {
        runs.push(cur);
    }
    let high_flow_duration = if runs.is_empty() {
        0.0
    } else {
        runs.iter().sum::<usize>() as f64 / runs.len() as f64
    };
    let low_days = q.iter().filter(|&&v| v < 0.2 * mean_q).count() as f64;
    let zero_days = q.iter().filter(|&&v| v == 0.0).count() as f64;

    StaticAttributes {
        mean_streamflow: mean_q,
        streamflow_rainfall_sensitivity: sensitivity,
        runoff_ratio,
        high_flow_freq: high_days / years,
        high_flow_duration,
        low_flow_freq: low_days / years,
        zero_flow_freq: zero_days / years,
    }
}

/// A family of synthetic stations derived from one base spec. Station `i`
/// gets seed `base.seed + i` and its own recession, tail and baseflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRegionSpec {
    pub region_id: String,
    pub stations: usize,
    pub base: SynthSpec,
}

impl Default for SynthRegionSpec {
    fn default() -> Self {
        SynthRegionSpec {
            region_id: "SYN".into(),
            stations: 1,
            base: SynthSpec::default(),
        }
    }
}

impl SynthRegionSpec {
    pub fn station_specs(&self) -> Vec<SynthSpec> {
        (0..self.stations)
            .map(|i| {
                let f = i as f64;
                SynthSpec {
                    station_id: format!("{}{:03}", self.region_id, i + 1),
                    seed: self.base.seed.wrapping_add(i as u64),
                    recession_k: (self.base.recession_k + 0.04 * (f % 3.0 - 1.0)).clamp(0.05, 0.98),
                    tail_index: self.base.tail_index + 0.15 * (f % 4.0),
                    baseflow: self.base.baseflow * (1.0 + 0.25 * (f % 5.0)),
                    storm_rate: self.base.storm_rate * (1.0 + 0.1 * (f % 3.0)),
                    ..self.base.clone()
                }
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Vec<(CatchmentSeries, StaticAttributes)>, SynthError> {
        if self.stations == 0 {
            return Err(SynthError::InvalidSpec("region needs at least one station".into()));
        }
        self.station_specs()
            .iter()
            .map(|s| {
                let series = generate(s)?;
                let statics = compute_statics(&series);
                Ok((series, statics))
            })
            .collect()
    }

    /// Writes one ingest-format CSV per station plus `statics.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, SynthError> {
        std::fs::create_dir_all(dir)?;
        let mut statics = BTreeMap::new();
        let mut states = BTreeMap::new();
        let mut written = Vec::new();
        for (series, attrs) in self.generate()? {
            let path = dir.join(format!("{}.csv", series.station_id));
            write_timeseries_csv(&path, &series)?;
            states.insert(series.station_id.clone(), self.region_id.clone());
            statics.insert(series.station_id.clone(), attrs);
            written.push(path);
        }
        let sp = dir.join("statics.csv");
        write_static_csv(&sp, &statics, &states)?;
        written.push(sp);
        Ok(written)
    }
}
