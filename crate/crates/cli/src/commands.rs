use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attractor_core::data::{
    default_handheld_times, generate_synthetic, load_csv, resample_handheld, split, write_components_csv, write_csv,
    InflectionScenario, SplitSpec, SyntheticData, TimeSeries,
};
use attractor_core::eval::{run_protocol, seeded_starts, truth_window, ForecastResult, ProtocolSettings};
use attractor_core::meanrev::reversion_settling_report;
use attractor_core::models::ModelKind;
use attractor_core::pipeline::{fit, ReversionConfig};
use serde::Serialize;

use crate::config::{DataConfig, RunConfig, Starts};
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.csv";
pub const COMPONENTS_FILE: &str = "components.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const LATENT_FILE: &str = "latent.csv";
pub const PER_SAMPLE_FILE: &str = "per_sample_nrmse.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

struct Dataset {
    name: String,
    series: TimeSeries,
    synthetic: Option<SyntheticData>,
    scenario: Option<InflectionScenario>,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let stage = |e| CliError::at("load", "data", e);
    Ok(match &cfg.data {
        DataConfig::Csv {
            path,
            interval_minutes,
            columns,
        } => Dataset {
            name: path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            series: load_csv(path, columns, *interval_minutes).map_err(stage)?,
            synthetic: None,
            scenario: None,
        },
        DataConfig::Synthetic(spec) => {
            let data = generate_synthetic(spec).map_err(stage)?;
            Dataset {
                name: "synthetic".into(),
                series: data.series.clone(),
                synthetic: Some(data),
                scenario: None,
            }
        }
        DataConfig::Inflection(sc) => {
            let data = generate_synthetic(&sc.synthetic_spec().map_err(stage)?).map_err(stage)?;
            Dataset {
                name: "inflection".into(),
                series: data.series.clone(),
                synthetic: Some(data),
                scenario: Some(sc.clone()),
            }
        }
    })
}

/// Training samples before an origin: the configured window, one scenario
/// case for inflection data, otherwise the whole prefix.
fn train_window(cfg: &RunConfig, data: &Dataset) -> Option<usize> {
    cfg.training
        .window
        .or_else(|| data.scenario.as_ref().map(|s| s.train_days * s.period))
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

fn written(stage: &str, path: &Path, res: attractor_core::Result<()>) -> Result<(), CliError> {
    res.map_err(|e| CliError::Io(format!("stage `{stage}` writing {}: {e}", path.display())))
}

pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if matches!(cfg.data, DataConfig::Csv { .. }) {
        return Err(CliError::Config(vec![
            "data.source: synth needs \"synthetic\" or \"inflection\" data".into(),
        ]));
    }
    let data = load_dataset(cfg)?;
    let synthetic = data.synthetic.expect("synthetic source");
    prepare_out(&cfg.out, cfg)?;
    let dataset = cfg.out.join(DATASET_FILE);
    let components = cfg.out.join(COMPONENTS_FILE);
    written("synth", &dataset, write_csv(&synthetic.series, &dataset))?;
    written("synth", &components, write_components_csv(&synthetic, &components))?;
    println!(
        "synth: {} samples ({} days) from seed {} -> {}",
        synthetic.series.len(),
        synthetic.series.len() * synthetic.series.interval_minutes as usize / (24 * 60),
        cfg.seed,
        cfg.out.display()
    );
    Ok(vec![dataset, components])
}

#[derive(Debug, Serialize)]
struct ForecastSummary<'a> {
    model: &'a str,
    reversion: Option<&'a ReversionConfig>,
    origin: usize,
    origin_timestamp: String,
    horizon: usize,
    training_samples: usize,
    training_observed: usize,
    nrmse: f64,
    attractor_mean: Option<Vec<f64>>,
    settling_step: Option<usize>,
    wall_time: f64,
}

pub fn forecast(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let data = load_dataset(cfg)?;
    let series = &data.series;
    let horizon = cfg.split.horizon;
    let origin = match (cfg.split.index, &data.scenario) {
        (Some(i), _) => i,
        (None, Some(sc)) => sc.starts()[0],
        (None, None) => series.len().checked_sub(horizon).ok_or_else(|| {
            CliError::Config(vec![format!(
                "split.horizon: {horizon} exceeds the {} available samples",
                series.len()
            )])
        })?,
    };
    if origin == 0 {
        return Err(CliError::Config(vec!["split.index: leaves no training data".into()]));
    }
    let spec = SplitSpec {
        split_index: origin,
        horizon,
    };
    split(series, spec).map_err(|e| CliError::at("split", "split", e))?;
    let first = train_window(cfg, &data).map_or(0, |w| origin.saturating_sub(w));
    let mut train = series.slice(first, origin);
    if cfg.training.handheld {
        train = resample_handheld(&train, &default_handheld_times()).map_err(|e| CliError::at("resample", "training.handheld", e))?;
    }

    let t0 = Instant::now();
    let fitted = fit(&cfg.model, &train.observations(), first).map_err(|e| CliError::at("filter", "model", e))?;
    let reversion = cfg.reversion.for_kind(cfg.model.model_kind);
    let run = fitted
        .forecast(reversion.as_ref(), horizon)
        .map_err(|e| CliError::at("forecast", "reversion", e))?;
    let wall_time = t0.elapsed().as_secs_f64();

    let range = series
        .range()
        .ok_or_else(|| CliError::Config(vec!["data: dataset has no observed values".into()]))?;
    let truth = truth_window(series, origin, horizon);
    let result = ForecastResult::from_run(&fitted, &run, truth, range, wall_time)
        .map_err(|e| CliError::at("score", "split", e))?;
    let settling_step = match &run.attractor {
        Some(a) => reversion_settling_report(&fitted.structural.model, fitted.last_belief(), a, horizon)
            .map_err(|e| CliError::at("settling", "reversion", e))?
            .settling_step,
        None => None,
    };

    prepare_out(&cfg.out, cfg)?;
    let paths: Vec<PathBuf> = [FORECAST_FILE, LATENT_FILE, PER_SAMPLE_FILE, REPORT_TEXT_FILE, REPORT_JSON_FILE]
        .iter()
        .map(|f| cfg.out.join(f))
        .collect();
    written("write", &paths[0], result.write_forecast_csv(&paths[0]))?;
    write_latent(&paths[1], &result)?;
    written("write", &paths[2], result.write_per_sample_csv(&paths[2]))?;

    let summary = ForecastSummary {
        model: cfg.model.model_kind.label(),
        reversion: reversion.as_ref(),
        origin,
        origin_timestamp: series.timestamps[origin].format(attractor_core::data::TIMESTAMP_FORMAT).to_string(),
        horizon,
        training_samples: train.len(),
        training_observed: train.observed_count(),
        nrmse: result.nrmse_total,
        attractor_mean: run.attractor.as_ref().map(|a| a.mean.iter().copied().collect()),
        settling_step,
        wall_time,
    };
    write_text(&paths[3], &render_summary(&summary))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&paths[4], &json)?;
    println!(
        "forecast: {} from {} over {horizon} steps, NRMSE {:.2}% -> {}",
        summary.model,
        summary.origin_timestamp,
        result.nrmse_total,
        cfg.out.display()
    );
    Ok(paths)
}

fn write_latent(path: &Path, result: &ForecastResult) -> Result<(), CliError> {
    let fail = |e| CliError::io(&format!("writing {}", path.display()), e);
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(fail)?);
    let mut text = format!("step,{}\n", result.component_names.join(","));
    for (i, row) in result.latent.iter().enumerate() {
        text.push_str(&(i + 1).to_string());
        for v in row {
            text.push(',');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(fail)?;
    out.flush().map_err(fail)
}

fn render_summary(s: &ForecastSummary) -> String {
    let reversion = match s.reversion {
        None => "none".to_string(),
        Some(r) => {
            let comps: Vec<String> = r.components.iter().map(ToString::to_string).collect();
            let weighting = match r.weighting {
                attractor_core::Weighting::Uniform => "uniform".to_string(),
                attractor_core::Weighting::Exponential { lambda } => format!("exponential, lambda {lambda}"),
            };
            format!("{} ({weighting}), variance {:?}", comps.join(", "), r.variance)
        }
    };
    let mut lines = vec![
        format!("model       {}", s.model),
        format!("reversion   {reversion}"),
        format!("origin      {} ({})", s.origin, s.origin_timestamp),
        format!("training    {} samples, {} observed", s.training_samples, s.training_observed),
        format!("horizon     {}", s.horizon),
        format!("nrmse       {:.4} %", s.nrmse),
    ];
    if let Some(m) = &s.attractor_mean {
        lines.push(format!("attractor   {m:?}"));
        lines.push(format!(
            "settling    {}",
            s.settling_step.map_or("not within horizon".into(), |k| format!("step {k}"))
        ));
    }
    lines.push(format!("wall time   {:.3} s", s.wall_time));
    lines.join("\n") + "\n"
}

pub fn compare(cfg: &RunConfig, model_filter: Option<ModelKind>) -> Result<Vec<PathBuf>, CliError> {
    let variants = cfg.compare_variants(model_filter);
    if variants.is_empty() {
        return Err(CliError::Config(vec![
            "variants: no model left after --model/--no-reversion filtering".into(),
        ]));
    }
    let data = load_dataset(cfg)?;
    let horizon = cfg.protocol.horizon;
    let default_starts = match &data.scenario {
        Some(_) => Starts::Inflections,
        None => Starts::Seeded {
            count: 10,
            min_train: None,
        },
    };
    let starts = match cfg.protocol.starts.as_ref().unwrap_or(&default_starts) {
        Starts::Inflections => data.scenario.as_ref().expect("validated").starts(),
        Starts::Explicit { indices } => indices.clone(),
        Starts::Seeded { count, min_train } => seeded_starts(
            cfg.seed,
            *count,
            data.series.len(),
            horizon,
            min_train.unwrap_or(cfg.model.period),
        )
        .map_err(|e| CliError::at("starts", "protocol.starts", e))?,
    };
    let settings = ProtocolSettings {
        starts,
        horizon,
        train_window: train_window(cfg, &data),
        handheld_times: cfg.training.handheld.then(default_handheld_times),
    };
    let report =
        run_protocol(&variants, &data.name, &data.series, &settings).map_err(|e| CliError::at("protocol", "protocol", e))?;

    prepare_out(&cfg.out, cfg)?;
    let text = cfg.out.join(REPORT_TEXT_FILE);
    let json = cfg.out.join(REPORT_JSON_FILE);
    write_text(&text, &report.render_text())?;
    write_text(&json, &report.to_json().map_err(|e| CliError::io("encoding report", e))?)?;
    print!("{}", report.render_text());
    Ok(vec![text, json])
}
