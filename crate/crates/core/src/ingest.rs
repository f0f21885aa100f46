//! CSV adapters for per-station daily series and the static-attribute table,
//! the missing-data policy, and alignment of a region to common dates.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::CatchmentSeries;

pub const TIMESERIES_HEADER: [&str; 5] = ["date", "precip_mm", "tmin_c", "tmax_c", "streamflow"];

pub const STATIC_COLUMNS: [&str; 7] = [
    "mean_streamflow",
    "streamflow_rainfall_sensitivity",
    "runoff_ratio",
    "high_flow_freq",
    "high_flow_duration",
    "low_flow_freq",
    "zero_flow_freq",
];

/// Optional column of the static table used for region filtering.
pub const STATE_COLUMN: &str = "state";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: {message}")]
    BadRow { path: PathBuf, line: u64, message: String },
    #[error("{path}: duplicate date {date}")]
    DuplicateDate { path: PathBuf, date: NaiveDate },
    #[error("{path}: duplicate station {station}")]
    DuplicateStation { path: PathBuf, station: String },
    #[error("no stations to align")]
    NoStations,
    #[error("no common date range")]
    NoCommonRange,
    #[error("station {0} appears twice in the region")]
    DuplicateInRegion(String),
    #[error("station {} rejected: {}", .0.station_id, .0.reason)]
    Rejected(Rejection),
}

/// Why a station was dropped from a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum RejectReason {
    StreamflowGapFraction {
        fraction: f64,
        limit: f64,
    },
    StreamflowGapTooLong {
        start: NaiveDate,
        days: usize,
        limit: usize,
    },
    ForcingAllMissing {
        column: String,
    },
    StreamflowAllMissing,
    TooShort {
        days: usize,
        needed: usize,
    },
    Invalid {
        message: String,
    },
}

impl RejectReason {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::StreamflowGapFraction { .. } => "streamflow_gap_fraction",
            RejectReason::StreamflowGapTooLong { .. } => "streamflow_gap_too_long",
            RejectReason::ForcingAllMissing { .. } => "forcing_all_missing",
            RejectReason::StreamflowAllMissing => "streamflow_all_missing",
            RejectReason::TooShort { .. } => "too_short",
            RejectReason::Invalid { .. } => "invalid",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::StreamflowGapFraction { fraction, limit } => {
                write!(
                    f,
                    "{}: {:.2}% missing > {:.2}%",
                    self.code(),
                    fraction * 100.0,
                    limit * 100.0
                )
            }
            RejectReason::StreamflowGapTooLong { start, days, limit } => {
                write!(f, "{}: {days}-day gap from {start} > {limit}", self.code())
            }
            RejectReason::ForcingAllMissing { column } => write!(f, "{}: {column}", self.code()),
            RejectReason::StreamflowAllMissing => f.write_str(self.code()),
            RejectReason::TooShort { days, needed } => write!(f, "{}: {days} days < {needed}", self.code()),
            RejectReason::Invalid { message } => write!(f, "{}: {message}", self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub station_id: String,
    pub reason: RejectReason,
}

/// The seven per-station summary signatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticAttributes {
    pub mean_streamflow: f64,
    pub streamflow_rainfall_sensitivity: f64,
    pub runoff_ratio: f64,
    pub high_flow_freq: f64,
    pub high_flow_duration: f64,
    pub low_flow_freq: f64,
    pub zero_flow_freq: f64,
}

impl StaticAttributes {
    pub fn values(&self) -> [f64; 7] {
        [
            self.mean_streamflow,
            self.streamflow_rainfall_sensitivity,
            self.runoff_ratio,
            self.high_flow_freq,
            self.high_flow_duration,
            self.low_flow_freq,
            self.zero_flow_freq,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> StaticAttributes {
        StaticAttributes {
            mean_streamflow: v[0],
            streamflow_rainfall_sensitivity: v[1],
            runoff_ratio: v[2],
            high_flow_freq: v[3],
            high_flow_duration: v[4],
            low_flow_freq: v[5],
            zero_flow_freq: v[6],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticTable {
    pub records: BTreeMap<String, StaticAttributes>,
    /// State code per station, when the table carries a `state` column.
    pub states: BTreeMap<String, String>,
    /// Columns present in the file but not used.
    pub ignored_columns: Vec<String>,
}

/// Stations of one region, truncated to their common date range and sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBundle {
    pub region_id: String,
    pub stations: Vec<CatchmentSeries>,
    pub statics: BTreeMap<String, StaticAttributes>,
    pub common_start: NaiveDate,
    pub common_end: NaiveDate,
}

impl RegionBundle {
    pub fn station_ids(&self) -> Vec<&str> {
        self.stations.iter().map(|s| s.station_id.as_str()).collect()
    }

    pub fn len_days(&self) -> usize {
        self.stations.first().map_or(0, CatchmentSeries::len)
    }

    pub fn with_statics(mut self, statics: &BTreeMap<String, StaticAttributes>) -> RegionBundle {
        self.statics = self
            .stations
            .iter()
            .filter_map(|s| statics.get(&s.station_id).map(|a| (s.station_id.clone(), *a)))
            .collect();
        self
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn parse_cell(cell: &str, what: &str, path: &Path, line: u64) -> Result<f64, IngestError> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>().map_err(|_| IngestError::BadRow {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} value {cell:?}"),
    })
}

/// Reads `date,precip_mm,tmin_c,tmax_c,streamflow`. Rows are sorted by date
/// and calendar gaps are inserted as missing (NaN) days. The station id is
/// the file stem.
pub fn load_timeseries_csv(path: &Path) -> Result<CatchmentSeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let idx: Vec<usize> = TIMESERIES_HEADER
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<(NaiveDate, [f64; 4])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let date_str = rec.get(idx[0]).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| IngestError::BadRow {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse date {date_str:?}"),
        })?;
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = parse_cell(rec.get(idx[k + 1]).unwrap_or(""), TIMESERIES_HEADER[k + 1], path, line)?;
        }
        if vals[3] < 0.0 {
            return Err(IngestError::BadRow {
                path: path.to_path_buf(),
                line,
                message: format!("negative streamflow {}", vals[3]),
            });
        }
        rows.push((date, vals));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IngestError::DuplicateDate {
            path: path.to_path_buf(),
            date: w[0].0,
        });
    }

    let station_id = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut s = CatchmentSeries {
        station_id,
        dates: Vec::with_capacity(rows.len()),
        precip: Vec::with_capacity(rows.len()),
        tmin: Vec::with_capacity(rows.len()),
        tmax: Vec::with_capacity(rows.len()),
        streamflow: Vec::with_capacity(rows.len()),
    };
    let push = |s: &mut CatchmentSeries, d: NaiveDate, v: [f64; 4]| {
        s.dates.push(d);
        s.precip.push(v[0]);
        s.tmin.push(v[1]);
        s.tmax.push(v[2]);
        s.streamflow.push(v[3]);
    };
    for (date, vals) in rows {
        if let Some(&last) = s.dates.last() {
            let mut d = last.succ_opt().expect("date overflow");
            while d < date {
                push(&mut s, d, [f64::NAN; 4]);
                d = d.succ_opt().expect("date overflow");
            }
        }
        push(&mut s, date, vals);
    }
    Ok(s)
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_timeseries_csv(path: &Path, series: &CatchmentSeries) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TIMESERIES_HEADER).map_err(csv_err(path))?;
    for i in 0..series.len() {
        w.write_record([
            series.dates[i].format("%Y-%m-%d").to_string(),
            fmt_value(series.precip[i]),
            fmt_value(series.tmin[i]),
            fmt_value(series.tmax[i]),
            fmt_value(series.streamflow[i]),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads the static-attribute table. Unknown columns are skipped and counted.
pub fn load_static_csv(path: &Path) -> Result<StaticTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let id_col = column_index(&headers, "station_id", path)?;
    let cols: Vec<usize> = STATIC_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c, path))
        .collect::<Result<_, _>>()?;
    let state_col = headers.iter().position(|h| h == STATE_COLUMN);
    let ignored_columns: Vec<String> = headers
        .iter()
        .filter(|h| *h != "station_id" && *h != STATE_COLUMN && !STATIC_COLUMNS.contains(h))
        .map(str::to_string)
        .collect();
    if !ignored_columns.is_empty() {
        log::warn!("{}: ignoring {} extra column(s)", path.display(), ignored_columns.len());
    }

    let mut table = StaticTable {
        ignored_columns,
        ..StaticTable::default()
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(IngestError::BadRow {
                path: path.to_path_buf(),
                line,
                message: "empty station_id".into(),
            });
        }
        let mut v = [0.0; 7];
        for (k, &c) in cols.iter().enumerate() {
            let x = parse_cell(rec.get(c).unwrap_or(""), STATIC_COLUMNS[k], path, line)?;
            if !x.is_finite() {
                return Err(IngestError::BadRow {
                    path: path.to_path_buf(),
                    line,
                    message: format!("missing {}", STATIC_COLUMNS[k]),
                });
            }
            // frequencies and durations are counts of days
            if k >= 3 && x < 0.0 {
                return Err(IngestError::BadRow {
                    path: path.to_path_buf(),
                    line,
                    message: format!("negative {}", STATIC_COLUMNS[k]),
                });
            }
            v[k] = x;
        }
        if let Some(sc) = state_col {
            table.states.insert(id.clone(), rec.get(sc).unwrap_or("").to_string());
        }
        if table
            .records
            .insert(id.clone(), StaticAttributes::from_values(v))
            .is_some()
        {
            return Err(IngestError::DuplicateStation {
                path: path.to_path_buf(),
                station: id,
            });
        }
    }
    Ok(table)
}

pub fn write_static_csv(
    path: &Path,
    statics: &BTreeMap<String, StaticAttributes>,
    states: &BTreeMap<String, String>,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["station_id"];
    header.extend(STATIC_COLUMNS);
    if !states.is_empty() {
        header.push(STATE_COLUMN);
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for (id, a) in statics {
        let mut row = vec![id.clone()];
        row.extend(a.values().iter().map(|v| v.to_string()));
        if !states.is_empty() {
            row.push(states.get(id).cloned().unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_rejections_csv(path: &Path, rejections: &[Rejection]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["station_id", "reason"]).map_err(csv_err(path))?;
    for r in rejections {
        w.write_record([r.station_id.as_str(), r.reason.code()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Truncates every station to `[latest start, earliest end]`.
pub fn align_common(region_id: &str, stations: Vec<CatchmentSeries>) -> Result<RegionBundle, IngestError> {
    if stations.is_empty() {
        return Err(IngestError::NoStations);
    }
    let mut start = NaiveDate::MIN;
    let mut end = NaiveDate::MAX;
    for s in &stations {
        let (Some(&a), Some(&b)) = (s.dates.first(), s.dates.last()) else {
            return Err(IngestError::NoCommonRange);
        };
        start = start.max(a);
        end = end.min(b);
    }
    if start > end {
        return Err(IngestError::NoCommonRange);
    }
    let mut aligned: Vec<CatchmentSeries> = stations.iter().map(|s| s.slice_dates(start, end)).collect();
    aligned.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    if let Some(w) = aligned.windows(2).find(|w| w[0].station_id == w[1].station_id) {
        return Err(IngestError::DuplicateInRegion(w[0].station_id.clone()));
    }
    Ok(RegionBundle {
        region_id: region_id.to_string(),
        stations: aligned,
        statics: BTreeMap::new(),
        common_start: start,
        common_end: end,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingPolicy {
    /// Reject when more than this fraction of streamflow days is missing.
    pub max_gap_fraction: f64,
    /// Longest streamflow gap (days) that is interpolated.
    pub max_interp_gap: usize,
}

impl Default for MissingPolicy {
    fn default() -> Self {
        MissingPolicy {
            max_gap_fraction: 0.05,
            max_interp_gap: 7,
        }
    }
}

fn forward_fill(col: &mut [f64]) -> bool {
    let Some(first) = col.iter().position(|v| v.is_finite()) else {
        return false;
    };
    let lead = col[first];
    for v in &mut col[..first] {
        *v = lead;
    }
    for i in first + 1..col.len() {
        if !col[i].is_finite() {
            col[i] = col[i - 1];
        }
    }
    true
}

/// Resolves missing values: forcings are forward filled, streamflow gaps of up
/// to `max_interp_gap` days are linearly interpolated (edge gaps take the
/// nearest value). Stations with too many or too long streamflow gaps are
/// rejected.
pub fn fill_missing(series: &CatchmentSeries, policy: &MissingPolicy) -> Result<CatchmentSeries, IngestError> {
    let reject = |reason| {
        IngestError::Rejected(Rejection {
            station_id: series.station_id.clone(),
            reason,
        })
    };
    let mut out = series.clone();
    for (name, col) in [
        ("precip_mm", &mut out.precip),
        ("tmin_c", &mut out.tmin),
        ("tmax_c", &mut out.tmax),
    ] {
        if !forward_fill(col) {
            return Err(reject(RejectReason::ForcingAllMissing { column: name.into() }));
        }
    }

    let q = &mut out.streamflow;
    let t = q.len();
    let missing = q.iter().filter(|v| !v.is_finite()).count();
    if missing == 0 {
        return Ok(out);
    }
    if missing == t {
        return Err(reject(RejectReason::StreamflowAllMissing));
    }
    let fraction = missing as f64 / t as f64;
    if fraction > policy.max_gap_fraction {
        return Err(reject(RejectReason::StreamflowGapFraction {
            fraction,
            limit: policy.max_gap_fraction,
        }));
    }
    let mut i = 0;
    while i < t {
        if q[i].is_finite() {
            i += 1;
            continue;
        }
        let start = i;
        while i < t && !q[i].is_finite() {
            i += 1;
        }
        let len = i - start;
        if len > policy.max_interp_gap {
            return Err(reject(RejectReason::StreamflowGapTooLong {
                start: series.dates[start],
                days: len,
                limit: policy.max_interp_gap,
            }));
        }
        match (start.checked_sub(1), (i < t).then_some(i)) {
            (Some(a), Some(b)) => {
                let (qa, qb) = (q[a], q[b]);
                for (k, v) in q.iter_mut().enumerate().take(i).skip(start) {
                    let w = (k - a) as f64 / (b - a) as f64;
                    *v = qa + w * (qb - qa);
                }
            }
            (Some(a), None) => {
                let v = q[a];
                q[start..i].fill(v);
            }
            (None, Some(b)) => {
                let v = q[b];
                q[start..i].fill(v);
            }
            (None, None) => unreachable!("all-missing handled above"),
        }
    }
    Ok(out)
}

/// Loads, cleans and aligns a set of station files. Stations that fail the
/// missing-data policy are returned as rejections instead of aborting.
pub fn load_region(
    region_id: &str,
    timeseries: &[PathBuf],
    statics: Option<&StaticTable>,
    policy: &MissingPolicy,
) -> Result<(RegionBundle, Vec<Rejection>), IngestError> {
    let loaded: Vec<Result<CatchmentSeries, IngestError>> = timeseries
        .par_iter()
        .map(|p| load_timeseries_csv(p).and_then(|s| fill_missing(&s, policy)))
        .collect();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => kept.push(s),
            Err(IngestError::Rejected(rej)) => rejected.push(rej),
            Err(e) => return Err(e),
        }
    }
    rejected.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    let mut bundle = align_common(region_id, kept)?;
    if let Some(t) = statics {
        bundle = bundle.with_statics(&t.records);
    }
    Ok((bundle, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn series(id: &str, start: NaiveDate, n: usize) -> CatchmentSeries {
        CatchmentSeries {
            station_id: id.into(),
            dates: (0..n).map(|i| start + chrono::Duration::days(i as i64)).collect(),
            precip: vec![1.0; n],
            tmin: vec![5.0; n],
            tmax: vec![15.0; n],
            streamflow: (0..n).map(|i| i as f64).collect(),
        }
    }

    #[test]
    fn parses_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("401012.csv");
        fs::write(
            &p,
            "date,precip_mm,tmin_c,tmax_c,streamflow\n2000-01-01,1.5,3,14,0.2\n2000-01-02,0,4,15,0.3\n2000-01-03,2,,16,0.25\n",
        )
        .unwrap();
        let s = load_timeseries_csv(&p).unwrap();
        assert_eq!(s.station_id, "401012");
        assert_eq!(s.len(), 3);
        assert!(s.tmin[2].is_nan());
        assert_eq!(s.streamflow, vec![0.2, 0.3, 0.25]);
    }

    #[test]
    fn sorts_shuffled_rows_and_fills_calendar_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(
            &p,
            "streamflow,date,precip_mm,tmin_c,tmax_c\n3,2000-01-04,0,0,0\n1,2000-01-01,0,0,0\n2,2000-01-02,0,0,0\n",
        )
        .unwrap();
        let s = load_timeseries_csv(&p).unwrap();
        assert_eq!(
            s.dates,
            vec![d(2000, 1, 1), d(2000, 1, 2), d(2000, 1, 3), d(2000, 1, 4)]
        );
        assert!(s.streamflow[2].is_nan());
        assert_eq!(s.streamflow[3], 3.0);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let dup = dir.path().join("dup.csv");
        fs::write(
            &dup,
            "date,precip_mm,tmin_c,tmax_c,streamflow\n2000-01-01,0,0,0,1\n2000-01-01,0,0,0,1\n",
        )
        .unwrap();
        let err = load_timeseries_csv(&dup).unwrap_err();
        assert!(err.to_string().contains("2000-01-01"), "{err}");

        let bad = dir.path().join("bad.csv");
        fs::write(
            &bad,
            "date,precip_mm,tmin_c,tmax_c,streamflow\n2000-01-01,0,0,0,1\n2000-01-02,x,0,0,1\n",
        )
        .unwrap();
        assert!(matches!(
            load_timeseries_csv(&bad),
            Err(IngestError::BadRow { line: 3, .. })
        ));

        let neg = dir.path().join("neg.csv");
        fs::write(&neg, "date,precip_mm,tmin_c,tmax_c,streamflow\n2000-01-01,0,0,0,-1\n").unwrap();
        assert!(matches!(load_timeseries_csv(&neg), Err(IngestError::BadRow { .. })));

        let missing = dir.path().join("missing.csv");
        fs::write(&missing, "date,precip_mm,tmin_c,streamflow\n").unwrap();
        assert!(matches!(
            load_timeseries_csv(&missing),
            Err(IngestError::MissingColumn { .. })
        ));
    }

    #[test]
    fn static_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("statics.csv");
        fs::write(
            &p,
            "station_id,mean_streamflow,streamflow_rainfall_sensitivity,runoff_ratio,high_flow_freq,high_flow_duration,low_flow_freq,zero_flow_freq,geol_class,state\n\
             A,1.2,0.9,0.3,10,2,40,0,basalt,SA\nB,0.4,1.1,0.1,5,1.5,80,12,granite,VIC\n",
        )
        .unwrap();
        let t = load_static_csv(&p).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.ignored_columns, vec!["geol_class".to_string()]);
        assert_eq!(t.states["B"], "VIC");
        assert_eq!(t.records["A"].runoff_ratio, 0.3);

        let q = dir.path().join("short.csv");
        fs::write(&q, "station_id,mean_streamflow,streamflow_rainfall_sensitivity,high_flow_freq,high_flow_duration,low_flow_freq,zero_flow_freq\n").unwrap();
        let err = load_static_csv(&q).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { ref column, .. } if column == "runoff_ratio"));
        assert!(err.to_string().contains("missing column"));
    }

    #[test]
    fn static_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut m = BTreeMap::new();
        m.insert(
            "X".to_string(),
            StaticAttributes::from_values([1.0, 0.5, 0.25, 3.0, 1.5, 20.0, 0.0]),
        );
        write_static_csv(&p, &m, &BTreeMap::new()).unwrap();
        assert_eq!(load_static_csv(&p).unwrap().records, m);
    }

    #[test]
    fn alignment() {
        let a = series("A", d(1950, 1, 1), 365 * 70);
        let b = series("B", d(1980, 1, 1), 365 * 40 - 10);
        let end = *a.dates.last().unwrap().min(b.dates.last().unwrap());
        let r = align_common("SA", vec![b, a]).unwrap();
        assert_eq!(r.common_start, d(1980, 1, 1));
        assert_eq!(r.common_end, end);
        assert_eq!(r.station_ids(), vec!["A", "B"]);
        assert_eq!(r.stations[0].dates, r.stations[1].dates);

        let single = series("S", d(2000, 1, 1), 10);
        let r = align_common("SA", vec![single.clone()]).unwrap();
        assert_eq!(r.stations[0], single);

        let early = series("E", d(1990, 1, 1), 10);
        let late = series("L", d(2000, 1, 1), 10);
        assert!(matches!(
            align_common("SA", vec![early, late]),
            Err(IngestError::NoCommonRange)
        ));
        assert!(matches!(align_common("SA", vec![]), Err(IngestError::NoStations)));
    }

    #[test]
    fn fill_policy() {
        let clean = series("A", d(2000, 1, 1), 400);
        assert_eq!(fill_missing(&clean, &MissingPolicy::default()).unwrap(), clean);

        let mut s = clean.clone();
        s.tmax[10] = f64::NAN;
        s.streamflow[20] = f64::NAN;
        s.streamflow[21] = f64::NAN;
        let f = fill_missing(&s, &MissingPolicy::default()).unwrap();
        assert_eq!(f.tmax[10], f.tmax[9]);
        assert!((f.streamflow[20] - 20.0).abs() < 1e-12 && (f.streamflow[21] - 21.0).abs() < 1e-12);
        f.validate().unwrap();

        let mut long = clean.clone();
        for v in &mut long.streamflow[100..110] {
            *v = f64::NAN;
        }
        match fill_missing(&long, &MissingPolicy::default()) {
            Err(IngestError::Rejected(r)) => assert_eq!(r.reason.code(), "streamflow_gap_too_long"),
            other => panic!("{other:?}"),
        }

        let mut sparse = clean;
        for i in (0..400).step_by(10) {
            sparse.streamflow[i] = f64::NAN;
        }
        match fill_missing(&sparse, &MissingPolicy::default()) {
            Err(IngestError::Rejected(r)) => assert_eq!(r.reason.code(), "streamflow_gap_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn region_loading_reports_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let good = series("G", d(2000, 1, 1), 200);
        let mut bad = series("B", d(2000, 1, 1), 200);
        for v in &mut bad.streamflow[50..70] {
            *v = f64::NAN;
        }
        let paths: Vec<PathBuf> = [&good, &bad]
            .iter()
            .map(|s| {
                let p = dir.path().join(format!("{}.csv", s.station_id));
                write_timeseries_csv(&p, s).unwrap();
                p
            })
            .collect();
        let (bundle, rej) = load_region("SA", &paths, None, &MissingPolicy::default()).unwrap();
        assert_eq!(bundle.station_ids(), vec!["G"]);
        assert_eq!(bundle.stations[0], good);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].station_id, "B");
        let rp = dir.path().join("rejections.csv");
        write_rejections_csv(&rp, &rej).unwrap();
        assert_eq!(
            fs::read_to_string(rp).unwrap(),
            "station_id,reason\nB,streamflow_gap_fraction\n"
        );
    }
}
