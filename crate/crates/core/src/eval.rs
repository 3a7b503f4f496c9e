//! Forecast error metrics and the multi-start comparison protocol.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{resample_handheld, TimeSeries};
use crate::error::{Error, Result};
use crate::pipeline::{fit, FittedModel, ForecastRun, ModelVariant};

fn check_pairs(truth: &[f64], forecast: &[f64], y_min: f64, y_max: f64) -> Result<()> {
    if truth.len() != forecast.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "truth and forecast lengths must match and be nonzero ({} vs {})",
            truth.len(),
            forecast.len()
        )));
    }
    if !(y_max > y_min) {
        return Err(Error::invalid(format!("normalization range is empty: [{y_min}, {y_max}]")));
    }
    Ok(())
}

/// Range-normalized RMSE in percent. Samples whose truth is `NaN` (missing)
/// are skipped.
pub fn nrmse(truth: &[f64], forecast: &[f64], y_min: f64, y_max: f64) -> Result<f64> {
    check_pairs(truth, forecast, y_min, y_max)?;
    let (sum, count) = truth
        .iter()
        .zip(forecast)
        .filter(|(y, _)| !y.is_nan())
        .fold((0.0, 0usize), |(s, c), (y, f)| (s + (y - f).powi(2), c + 1));
    if count == 0 {
        return Err(Error::invalid("no observed truth samples to score"));
    }
    Ok(100.0 * (sum / count as f64).sqrt() / (y_max - y_min))
}

/// Per-sample absolute error normalized by the range, in percent; `NaN`
/// where the truth is missing.
pub fn nrmse_per_sample(truth: &[f64], forecast: &[f64], y_min: f64, y_max: f64) -> Result<Vec<f64>> {
    check_pairs(truth, forecast, y_min, y_max)?;
    let range = y_max - y_min;
    Ok(truth
        .iter()
        .zip(forecast)
        .map(|(y, f)| 100.0 * (y - f).abs() / range)
        .collect())
}

/// Scored forecast over one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastResult {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub truth: Vec<f64>,
    pub component_names: Vec<String>,
    /// Predicted latent means, one row per step.
    pub latent: Vec<Vec<f64>>,
    pub nrmse_total: f64,
    pub nrmse_per_sample: Vec<f64>,
    pub wall_time: f64,
}

impl ForecastResult {
    pub fn from_run(
        fitted: &FittedModel,
        run: &ForecastRun,
        truth: Vec<f64>,
        range: (f64, f64),
        wall_time: f64,
    ) -> Result<Self> {
        let obs_mean = run.obs_mean();
        let nrmse_total = nrmse(&truth, &obs_mean, range.0, range.1)?;
        let per_sample = nrmse_per_sample(&truth, &obs_mean, range.0, range.1)?;
        Ok(Self {
            obs_std: run.obs_std(),
            component_names: fitted
                .structural
                .layout
                .components()
                .iter()
                .map(ToString::to_string)
                .collect(),
            latent: run
                .predictions
                .iter()
                .map(|p| p.state_mean.iter().copied().collect())
                .collect(),
            obs_mean,
            truth,
            nrmse_total,
            nrmse_per_sample: per_sample,
            wall_time,
        })
    }

    pub fn horizon(&self) -> usize {
        self.obs_mean.len()
    }

    /// `step,mean,std,truth`; missing truth is an empty cell.
    pub fn write_forecast_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        writeln!(out, "step,mean,std,truth")?;
        for i in 0..self.horizon() {
            write!(out, "{},{},{},", i + 1, self.obs_mean[i], self.obs_std[i])?;
            if !self.truth[i].is_nan() {
                write!(out, "{}", self.truth[i])?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_per_sample_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        writeln!(out, "step,nrmse")?;
        for (i, e) in self.nrmse_per_sample.iter().enumerate() {
            if e.is_nan() {
                writeln!(out, "{},", i + 1)?;
            } else {
                writeln!(out, "{},{e}", i + 1)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Median, quartiles and 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v)).collect();
        Some(Self {
            median: quantile(&sorted, 0.5),
            q1,
            q3,
            whisker_low: inside[0],
            whisker_high: inside[inside.len() - 1],
            outliers: sorted.into_iter().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect(),
        })
    }
}

/// Forecast origins and scoring settings for one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub starts: Vec<usize>,
    pub horizon: usize,
    /// Training samples before each start; `None` uses the whole prefix.
    #[serde(default)]
    pub train_window: Option<usize>,
    /// Handheld reading times applied to training data, if any.
    #[serde(default)]
    pub handheld_times: Option<Vec<NaiveTime>>,
}

/// Distinct sorted starts in `[min_train, len - horizon]`.
pub fn seeded_starts(seed: u64, count: usize, len: usize, horizon: usize, min_train: usize) -> Result<Vec<usize>> {
    if len < horizon + min_train || len - horizon - min_train + 1 < count {
        return Err(Error::invalid(format!(
            "cannot place {count} starts with horizon {horizon} and {min_train} training samples in {len} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = BTreeSet::new();
    while starts.len() < count {
        starts.insert(rng.random_range(min_train..=len - horizon));
    }
    Ok(starts.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub start: usize,
    pub nrmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_nrmse: Option<f64>,
    pub cells: Vec<Cell>,
    pub box_stats: Option<BoxStats>,
    pub mean_wall_time: f64,
}

impl ModelSummary {
    fn from_cells(model: String, cells: Vec<Cell>) -> Self {
        let scores: Vec<f64> = cells.iter().filter_map(|c| c.nrmse).collect();
        let mean_nrmse = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        let mean_wall_time = cells.iter().map(|c| c.wall_time).sum::<f64>() / cells.len().max(1) as f64;
        Self {
            model,
            mean_nrmse,
            box_stats: BoxStats::from_values(&scores),
            cells,
            mean_wall_time,
        }
    }

    pub fn per_start(&self) -> Vec<Option<f64>> {
        self.cells.iter().map(|c| c.nrmse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub starts: Vec<usize>,
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub horizon: usize,
    pub datasets: Vec<DatasetReport>,
}

impl ComparisonReport {
    pub fn model(&self, dataset: &str, model: &str) -> Option<&ModelSummary> {
        self.datasets
            .iter()
            .find(|d| d.dataset == dataset)?
            .models
            .iter()
            .find(|m| m.model == model)
    }

    pub fn merge(mut self, other: ComparisonReport) -> Result<Self> {
        if other.horizon != self.horizon {
            return Err(Error::invalid("cannot merge reports with different horizons"));
        }
        self.datasets.extend(other.datasets);
        Ok(self)
    }

    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for d in &mut r.datasets {
            for m in &mut d.models {
                m.mean_wall_time = 0.0;
                m.cells.iter_mut().for_each(|c| c.wall_time = 0.0);
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned tables: mean NRMSE per dataset and model, then mean wall time.
    pub fn render_text(&self) -> String {
        let models: Vec<String> = self
            .datasets
            .first()
            .map(|d| d.models.iter().map(|m| m.model.clone()).collect())
            .unwrap_or_default();
        let external = ["SARIMA", "Prophet"];
        let mut header = vec!["Dataset".to_string()];
        header.extend(models.iter().cloned());
        header.extend(external.iter().map(|s| s.to_string()));

        let fmt = |v: Option<f64>| v.map_or("failed".to_string(), |x| format!("{x:.2}"));
        let mut nrmse_rows = Vec::new();
        let mut time_rows = Vec::new();
        let mut sums = vec![(0.0, 0usize); models.len()];
        for d in &self.datasets {
            let mut row = vec![d.dataset.clone()];
            let mut trow = vec![d.dataset.clone()];
            for (i, name) in models.iter().enumerate() {
                let m = d.models.iter().find(|m| &m.model == name);
                let mean = m.and_then(|m| m.mean_nrmse);
                if let Some(x) = mean {
                    sums[i].0 += x;
                    sums[i].1 += 1;
                }
                row.push(fmt(mean));
                trow.push(m.map_or("-".into(), |m| format!("{:.3}", m.mean_wall_time)));
            }
            row.extend(external.iter().map(|_| "n/i".to_string()));
            trow.extend(external.iter().map(|_| "n/i".to_string()));
            nrmse_rows.push(row);
            time_rows.push(trow);
        }
        if self.datasets.len() > 1 {
            let mut avg = vec!["Average".to_string()];
            avg.extend(sums.iter().map(|&(s, c)| fmt((c > 0).then(|| s / c as f64))));
            avg.extend(external.iter().map(|_| "n/i".to_string()));
            nrmse_rows.push(avg);
        }

        let starts = self.datasets.first().map_or(0, |d| d.starts.len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Average NRMSE (%) over {starts} forecasts of {} steps (n/i: not implemented)\n",
            self.horizon
        );
        out.push_str(&render_table(&header, &nrmse_rows));
        let _ = writeln!(out, "\nAverage wall time (s) per forecast\n");
        out.push_str(&render_table(&header, &time_rows));
        let _ = writeln!(out, "\nBox-whisker summary (median [q1, q3] whiskers)\n");
        for d in &self.datasets {
            for m in &d.models {
                if let Some(b) = &m.box_stats {
                    let _ = writeln!(
                        out,
                        "{:<12} {:<10} {:>8.2} [{:.2}, {:.2}] {:.2}..{:.2} outliers={}",
                        d.dataset,
                        m.model,
                        b.median,
                        b.q1,
                        b.q3,
                        b.whisker_low,
                        b.whisker_high,
                        b.outliers.len()
                    );
                }
            }
        }
        out
    }
}

fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{:<w$}", cell, w = widths[i]);
            } else {
                let _ = write!(s, "  {:>w$}", cell, w = widths[i]);
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Training observations for the window ending at `start`, with handheld
/// masking applied when configured.
pub fn training_window(
    dataset: &TimeSeries,
    start: usize,
    settings: &ProtocolSettings,
) -> Result<(usize, Vec<Option<f64>>)> {
    let first = settings.train_window.map_or(0, |w| start.saturating_sub(w));
    let window = dataset.slice(first, start);
    let window = match &settings.handheld_times {
        Some(times) => resample_handheld(&window, times)?,
        None => window,
    };
    Ok((first, window.observations()))
}

/// Test-window truth with `NaN` at missing samples.
pub fn truth_window(dataset: &TimeSeries, start: usize, horizon: usize) -> Vec<f64> {
    (start..start + horizon)
        .map(|i| dataset.get(i).unwrap_or(f64::NAN))
        .collect()
}

fn score(
    variant: &ModelVariant,
    fitted: &FittedModel,
    truth: &[f64],
    range: (f64, f64),
    horizon: usize,
) -> Result<f64> {
    let run = fitted.forecast(variant.reversion.as_ref(), horizon)?;
    nrmse(truth, &run.obs_mean(), range.0, range.1)
}

/// Runs every variant from every start. Variants sharing a structural spec
/// share one filtering pass per start; its time is charged to each of them.
/// A failing cell is recorded and the run continues.
pub fn run_protocol(
    variants: &[ModelVariant],
    dataset_name: &str,
    dataset: &TimeSeries,
    settings: &ProtocolSettings,
) -> Result<ComparisonReport> {
    if variants.is_empty() || settings.starts.is_empty() {
        return Err(Error::invalid("protocol needs at least one model and one start"));
    }
    if settings.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut problems = Vec::new();
    for &s in &settings.starts {
        if s == 0 || s + settings.horizon > dataset.len() {
            problems.push(format!(
                "start {s} with horizon {} does not fit dataset of {} samples",
                settings.horizon,
                dataset.len()
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let range = dataset
        .range()
        .ok_or_else(|| Error::invalid("dataset has no observed values"))?;

    let per_start: Vec<Vec<Cell>> = settings
        .starts
        .par_iter()
        .map(|&start| {
            let truth = truth_window(dataset, start, settings.horizon);
            let train = training_window(dataset, start, settings);
            let mut fits: Vec<(&crate::models::StructuralSpec, Result<FittedModel>, f64)> = Vec::new();
            variants
                .iter()
                .map(|v| {
                    let slot = match fits.iter().position(|(s, _, _)| **s == v.spec) {
                        Some(i) => i,
                        None => {
                            let t0 = Instant::now();
                            let fitted = match &train {
                                Ok((first, obs)) => fit(&v.spec, obs, *first),
                                Err(e) => Err(Error::invalid(e.to_string())),
                            };
                            fits.push((&v.spec, fitted, t0.elapsed().as_secs_f64()));
                            fits.len() - 1
                        }
                    };
                    let (_, fitted, fit_time) = &fits[slot];
                    let t0 = Instant::now();
                    let result = match fitted {
                        Ok(f) => score(v, f, &truth, range, settings.horizon),
                        Err(e) => Err(Error::invalid(e.to_string())),
                    };
                    let wall_time = fit_time + t0.elapsed().as_secs_f64();
                    match result {
                        Ok(x) => Cell {
                            start,
                            nrmse: Some(x),
                            error: None,
                            wall_time,
                        },
                        Err(e) => Cell {
                            start,
                            nrmse: None,
                            error: Some(e.to_string()),
                            wall_time,
                        },
                    }
                })
                .collect()
        })
        .collect();

    let models = variants
        .iter()
        .enumerate()
        .map(|(i, v)| ModelSummary::from_cells(v.name.clone(), per_start.iter().map(|cells| cells[i].clone()).collect()))
        .collect();
    Ok(ComparisonReport {
        horizon: settings.horizon,
        datasets: vec![DatasetReport {
            dataset: dataset_name.to_string(),
            starts: settings.starts.clone(),
            models,
        }],
    })
}
