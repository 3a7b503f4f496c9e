//! Sensor series on a regular grid: CSV I/O, handheld-style resampling,
//! train/test splits and synthetic datasets.
//!
//! CSV layout is a header row followed by `timestamp,value` rows. Timestamps
//! are timezone-naive local times (`2019-03-01T05:00:00`); an empty value
//! cell marks a missing sample.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, NaiveTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_MINUTES: u32 = 15;
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const ACCEPTED_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Scalar observations on a regular time grid with an explicit missing mask.
///
/// Masked samples keep their value (when one exists) so that resampling is
/// reversible; samples absent from the source carry `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub interval_minutes: u32,
}

impl TimeSeries {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
        missing: Vec<bool>,
        interval_minutes: u32,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if values.len() != timestamps.len() || missing.len() != values.len() {
            problems.push(format!(
                "lengths differ: {} timestamps, {} values, {} mask entries",
                timestamps.len(),
                values.len(),
                missing.len()
            ));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            problems.push("timestamps must be strictly increasing".into());
        }
        if interval_minutes == 0 {
            problems.push("interval_minutes must be positive".into());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            timestamps,
            values,
            missing,
            interval_minutes,
        })
    }

    /// Regular grid starting at `start` with every sample observed.
    pub fn from_values(start: NaiveDateTime, interval_minutes: u32, values: Vec<f64>) -> Self {
        let step = Duration::minutes(interval_minutes as i64);
        let timestamps = (0..values.len()).map(|i| start + step * i as i32).collect();
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        Self {
            timestamps,
            values,
            missing,
            interval_minutes,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        (!self.missing[i]).then_some(self.values[i])
    }

    pub fn observations(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    /// Samples `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            missing: self.missing[start..end].to_vec(),
            interval_minutes: self.interval_minutes,
        }
    }

    /// Minimum and maximum over observed values.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = (0..self.len()).filter_map(|i| self.get(i));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ACCEPTED_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads a series and places it on the `interval_minutes` grid anchored at
/// the first row. Rows absent from the grid become missing samples, as do
/// empty or unparsable value cells.
pub fn load_csv(path: &Path, columns: &ColumnMap, interval_minutes: u32) -> Result<TimeSeries> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    if interval_minutes == 0 {
        return Err(Error::invalid("interval_minutes must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let ts_col = find(&columns.timestamp)?;
    let val_col = find(&columns.value)?;

    let step = interval_minutes as i64 * 60;
    let mut origin: Option<NaiveDateTime> = None;
    let mut last: Option<NaiveDateTime> = None;
    let mut series = TimeSeries {
        timestamps: Vec::new(),
        values: Vec::new(),
        missing: Vec::new(),
        interval_minutes,
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let raw = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw).ok_or_else(|| Error::Timestamp {
            path: path.to_path_buf(),
            line,
            value: raw.to_string(),
        })?;
        if last.is_some_and(|l| ts <= l) {
            return Err(Error::NonMonotone {
                path: path.to_path_buf(),
                line,
            });
        }
        last = Some(ts);
        let origin = *origin.get_or_insert(ts);
        let offset = (ts - origin).num_seconds();
        if offset % step != 0 {
            return Err(Error::OffGrid {
                path: path.to_path_buf(),
                line,
                value: raw.to_string(),
            });
        }
        let index = (offset / step) as usize;
        while series.len() < index {
            let gap_ts = origin + Duration::seconds(step * series.len() as i64);
            series.timestamps.push(gap_ts);
            series.values.push(f64::NAN);
            series.missing.push(true);
        }
        let value = record.get(val_col).unwrap_or("").parse::<f64>().ok().filter(|v| v.is_finite());
        series.timestamps.push(ts);
        series.values.push(value.unwrap_or(f64::NAN));
        series.missing.push(value.is_none());
    }
    Ok(series)
}

/// Writes `timestamp,value`; missing samples get an empty cell.
pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "timestamp,value")?;
    for i in 0..series.len() {
        let ts = series.timestamps[i].format(TIMESTAMP_FORMAT);
        match series.get(i) {
            Some(v) => writeln!(out, "{ts},{v}")?,
            None => writeln!(out, "{ts},")?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Default handheld reading times: 05:00, 12:00 and 20:30.
pub fn default_handheld_times() -> Vec<NaiveTime> {
    vec![
        NaiveTime::from_hms_opt(5, 0, 0).unwrap(),
        NaiveTime::from_hms_opt(12, 0, 0).unwrap(),
        NaiveTime::from_hms_opt(20, 30, 0).unwrap(),
    ]
}

/// Masks every sample except those at the given times of day. The grid and
/// the values are left untouched.
pub fn resample_handheld(series: &TimeSeries, times_of_day: &[NaiveTime]) -> Result<TimeSeries> {
    let step = series.interval_minutes;
    let off_grid: Vec<String> = times_of_day
        .iter()
        .filter(|t| t.second() != 0 || (t.hour() * 60 + t.minute()) % step != 0)
        .map(|t| format!("time of day {t} is not on the {step}-minute grid"))
        .collect();
    if !off_grid.is_empty() {
        return Err(Error::Validation(off_grid));
    }
    let mut out = series.clone();
    for (i, ts) in series.timestamps.iter().enumerate() {
        if !times_of_day.contains(&ts.time()) {
            out.missing[i] = true;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_index: usize,
    pub horizon: usize,
}

impl SplitSpec {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.split_index + self.horizon > len {
            return Err(Error::invalid(format!(
                "split_index {} + horizon {} exceeds series length {len}",
                self.split_index, self.horizon
            )));
        }
        Ok(())
    }
}

/// `[0, split)` for training and `[split, split + horizon)` for testing.
pub fn split(series: &TimeSeries, spec: SplitSpec) -> Result<(TimeSeries, TimeSeries)> {
    spec.validate(series.len())?;
    Ok((
        series.slice(0, spec.split_index),
        series.slice(spec.split_index, spec.split_index + spec.horizon),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrendKind {
    /// Discretized mean-reverting walk around the base level:
    /// `x' = x - θ (x - level) + σ ε`.
    OuWander { theta: f64, sigma: f64 },
    /// Piecewise-linear offsets through `knots` (held flat outside them),
    /// plus a small mean-reverting wander.
    PiecewiseInflection {
        knots: Vec<Knot>,
        #[serde(default)]
        wander_theta: f64,
        #[serde(default)]
        wander_sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub index: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmplitudeKind {
    Constant,
    /// `amplitude · (1 + swing · sin(2π t / (cycle_days · period)))`.
    SlowVarying { swing: f64, cycle_days: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub seed: u64,
    pub days: usize,
    #[serde(default = "default_period")]
    pub period: usize,
    pub level: f64,
    pub amplitude: f64,
    /// Phase of the diurnal sinusoid at midnight, radians.
    #[serde(default)]
    pub phase: f64,
    pub trend: TrendKind,
    pub amplitude_kind: AmplitudeKind,
    pub obs_noise_std: f64,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

fn default_period() -> usize {
    96
}

fn default_start() -> NaiveDateTime {
    NaiveDateTime::parse_from_str("2019-01-01T00:00:00", TIMESTAMP_FORMAT).unwrap()
}

impl SyntheticSpec {
    pub fn len(&self) -> usize {
        self.days * self.period
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.days < 1 {
            problems.push("days: must be >= 1".to_string());
        }
        if self.period < 2 || (24 * 60) % self.period != 0 {
            problems.push(format!("period: {} does not divide a day into whole minutes", self.period));
        }
        if !(self.obs_noise_std >= 0.0) {
            problems.push("obs_noise_std: must be >= 0".into());
        }
        match &self.trend {
            TrendKind::OuWander { theta, sigma } => {
                if !(0.0..=1.0).contains(theta) || !(*sigma >= 0.0) {
                    problems.push("trend: theta must lie in [0, 1] and sigma >= 0".into());
                }
            }
            TrendKind::PiecewiseInflection {
                knots,
                wander_theta,
                wander_sigma,
            } => {
                if knots.windows(2).any(|w| w[1].index <= w[0].index) {
                    problems.push("trend.knots: indices must be strictly increasing".into());
                }
                if !(0.0..=1.0).contains(wander_theta) || !(*wander_sigma >= 0.0) {
                    problems.push("trend: wander_theta must lie in [0, 1] and wander_sigma >= 0".into());
                }
            }
        }
        if let AmplitudeKind::SlowVarying { cycle_days, .. } = self.amplitude_kind {
            if !(cycle_days > 0.0) {
                problems.push("amplitude_kind.cycle_days: must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Observations together with the latent paths that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub series: TimeSeries,
    pub trend: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub seasonal: Vec<f64>,
}

fn piecewise(knots: &[Knot], i: usize) -> f64 {
    match knots.iter().position(|k| k.index > i) {
        None => knots.last().map_or(0.0, |k| k.offset),
        Some(0) => knots[0].offset,
        Some(j) => {
            let (a, b) = (knots[j - 1], knots[j]);
            let frac = (i - a.index) as f64 / (b.index - a.index) as f64;
            a.offset + frac * (b.offset - a.offset)
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let n = spec.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let omega = 2.0 * PI / spec.period as f64;

    let (theta, sigma) = match &spec.trend {
        TrendKind::OuWander { theta, sigma } => (*theta, *sigma),
        TrendKind::PiecewiseInflection {
            wander_theta,
            wander_sigma,
            ..
        } => (*wander_theta, *wander_sigma),
    };
    let mut wander = 0.0;
    let mut trend = Vec::with_capacity(n);
    for i in 0..n {
        let base = match &spec.trend {
            TrendKind::OuWander { .. } => 0.0,
            TrendKind::PiecewiseInflection { knots, .. } => piecewise(knots, i),
        };
        trend.push(spec.level + base + wander);
        wander += -theta * wander + sigma * std_normal.sample(&mut rng);
    }

    let amplitude: Vec<f64> = (0..n)
        .map(|i| match spec.amplitude_kind {
            AmplitudeKind::Constant => spec.amplitude,
            AmplitudeKind::SlowVarying { swing, cycle_days } => {
                let cycle = cycle_days * spec.period as f64;
                spec.amplitude * (1.0 + swing * (2.0 * PI * i as f64 / cycle).sin())
            }
        })
        .collect();
    let seasonal: Vec<f64> = amplitude
        .iter()
        .enumerate()
        .map(|(i, a)| a * (omega * i as f64 + spec.phase).sin())
        .collect();
    let values: Vec<f64> = (0..n)
        .map(|i| trend[i] + seasonal[i] + spec.obs_noise_std * std_normal.sample(&mut rng))
        .collect();
    let interval = (24 * 60 / spec.period) as u32;
    Ok(SyntheticData {
        series: TimeSeries::from_values(spec.start, interval, values),
        trend,
        amplitude,
        seasonal,
    })
}

/// Writes the `timestamp,trend,amplitude,seasonal` sidecar.
pub fn write_components_csv(data: &SyntheticData, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "timestamp,trend,amplitude,seasonal")?;
    for i in 0..data.series.len() {
        writeln!(
            out,
            "{},{},{},{}",
            data.series.timestamps[i].format(TIMESTAMP_FORMAT),
            data.trend[i],
            data.amplitude[i],
            data.seasonal[i]
        )?;
    }
    out.flush()?;
    Ok(())
}

/// A long series with repeated forecast origins at trend inflections.
///
/// Each case owns `train_days + horizon_days` days. Its trend sits on the
/// base level, ramps by `±ramp` over the `ramp_days` before the origin, then
/// retreats by half the ramp over the horizon, and returns to base
/// `return_days` after the horizon ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflectionScenario {
    #[serde(default)]
    pub seed: u64,
    pub cases: usize,
    pub train_days: usize,
    pub horizon_days: usize,
    #[serde(default = "default_ramp_days")]
    pub ramp_days: usize,
    #[serde(default = "default_return_days")]
    pub return_days: usize,
    pub ramp: f64,
    pub level: f64,
    pub amplitude: f64,
    pub obs_noise_std: f64,
    #[serde(default)]
    pub wander_sigma: f64,
    #[serde(default = "default_period")]
    pub period: usize,
}

fn default_ramp_days() -> usize {
    5
}

fn default_return_days() -> usize {
    5
}

impl Default for InflectionScenario {
    /// Ten cases of 30 training days and a 10-day horizon around a level of 6
    /// with a daily swing of 1.
    fn default() -> Self {
        Self {
            seed: 42,
            cases: 10,
            train_days: 30,
            horizon_days: 10,
            ramp_days: default_ramp_days(),
            return_days: default_return_days(),
            ramp: 2.0,
            level: 6.0,
            amplitude: 1.0,
            obs_noise_std: 0.15,
            wander_sigma: 0.01,
            period: default_period(),
        }
    }
}

impl InflectionScenario {
    pub fn case_len(&self) -> usize {
        (self.train_days + self.horizon_days) * self.period
    }

    /// Forecast origins, one per case.
    pub fn starts(&self) -> Vec<usize> {
        (0..self.cases)
            .map(|j| j * self.case_len() + self.train_days * self.period)
            .collect()
    }

    /// Draws ramp signs and sizes from the seed and builds the full spec.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        if self.cases == 0 || self.ramp_days == 0 || self.horizon_days == 0 {
            return Err(Error::invalid("scenario needs cases, ramp_days and horizon_days > 0"));
        }
        if self.ramp_days + self.return_days > self.train_days {
            return Err(Error::invalid("ramp_days + return_days must not exceed train_days"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let size = rand_distr::Uniform::new(0.8, 1.2).expect("valid range");
        let p = self.period;
        let mut knots = Vec::new();
        for start in self.starts() {
            let sign = if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 };
            let delta = sign * self.ramp * size.sample(&mut rng);
            let end = start + self.horizon_days * p;
            knots.push(Knot { index: start - self.ramp_days * p, offset: 0.0 });
            knots.push(Knot { index: start, offset: delta });
            knots.push(Knot { index: end, offset: 0.5 * delta });
            knots.push(Knot { index: end + self.return_days * p, offset: 0.0 });
        }
        Ok(SyntheticSpec {
            seed: self.seed,
            days: self.cases * (self.train_days + self.horizon_days),
            period: p,
            level: self.level,
            amplitude: self.amplitude,
            phase: 0.0,
            trend: TrendKind::PiecewiseInflection {
                knots,
                wander_theta: 0.01,
                wander_sigma: self.wander_sigma,
            },
            amplitude_kind: AmplitudeKind::Constant,
            obs_noise_std: self.obs_noise_std,
            start: default_start(),
        })
    }
}
