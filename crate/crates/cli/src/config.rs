//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use attractor_core::data::{ColumnMap, InflectionScenario, SyntheticSpec, DEFAULT_INTERVAL_MINUTES};
use attractor_core::models::{build, Component, ModelKind, StructuralSpec};
use attractor_core::pipeline::{
    standard_variants, ModelVariant, ReversionConfig, DEFAULT_LAMBDA, DEFAULT_OBS_NOISE, DEFAULT_PSEUDO_VARIANCE,
};
use attractor_core::Weighting;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_HORIZON: usize = 960;
pub const DEFAULT_TRAIN_WINDOW: usize = 2880;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The only source of randomness; copied into every synthetic section.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_model")]
    pub model: StructuralSpec,
    #[serde(default)]
    pub reversion: ReversionSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    /// Models compared by `compare`; the standard set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<ModelVariant>>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_model() -> StructuralSpec {
    let mut spec = StructuralSpec::new(ModelKind::LinearSeasonal, 96);
    spec.obs_noise = DEFAULT_OBS_NOISE;
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Csv {
        path: PathBuf,
        #[serde(default = "default_interval")]
        interval_minutes: u32,
        #[serde(default)]
        columns: ColumnMap,
    },
    Synthetic(SyntheticSpec),
    Inflection(InflectionScenario),
}

fn default_interval() -> u32 {
    DEFAULT_INTERVAL_MINUTES
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Inflection(InflectionScenario::default())
    }
}

impl DataConfig {
    pub fn period(&self) -> Option<usize> {
        match self {
            DataConfig::Csv { .. } => None,
            DataConfig::Synthetic(s) => Some(s.period),
            DataConfig::Inflection(s) => Some(s.period),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversionSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Reverted components; trend (plus amplitude for the nonlinear model)
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<Component>>,
    #[serde(default = "default_variance")]
    pub variance: Vec<f64>,
    #[serde(default)]
    pub weighted: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

fn yes() -> bool {
    true
}

fn default_variance() -> Vec<f64> {
    vec![DEFAULT_PSEUDO_VARIANCE]
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl Default for ReversionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            components: None,
            variance: default_variance(),
            weighted: false,
            lambda: DEFAULT_LAMBDA,
            burn_in: None,
        }
    }
}

pub fn default_components(kind: ModelKind) -> Vec<Component> {
    match kind {
        ModelKind::NonlinearAmplitude => vec![Component::Trend, Component::Amplitude],
        _ => vec![Component::Trend],
    }
}

impl ReversionSection {
    /// The reversion applied by `forecast` to a model of `kind`.
    pub fn for_kind(&self, kind: ModelKind) -> Option<ReversionConfig> {
        if !self.enabled {
            return None;
        }
        Some(ReversionConfig {
            components: self.components.clone().unwrap_or_else(|| default_components(kind)),
            variance: self.variance.clone(),
            weighting: if self.weighted {
                Weighting::Exponential { lambda: self.lambda }
            } else {
                Weighting::Uniform
            },
            burn_in: self.burn_in,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Samples before the forecast origin used for filtering; the whole
    /// prefix when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Keep only the handheld reading times in the training data.
    #[serde(default)]
    pub handheld: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Forecast origin; the first scenario origin for inflection data and
    /// `len - horizon` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            index: None,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Forecast origins; scenario origins for inflection data and ten seeded
    /// starts otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Starts>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            starts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Starts {
    /// `count` distinct origins drawn from the run seed, each with at least
    /// `min_train` samples before it (one period by default).
    Seeded {
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_train: Option<usize>,
    },
    Explicit { indices: Vec<usize> },
    Inflections,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_reversion: bool,
    pub weighted_lambda: Option<f64>,
    pub horizon: Option<usize>,
    pub model: Option<ModelKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(p) => CliError::Config(p.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn sync_seed(&mut self) {
        match &mut self.data {
            DataConfig::Synthetic(s) => s.seed = self.seed,
            DataConfig::Inflection(s) => s.seed = self.seed,
            DataConfig::Csv { .. } => {}
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.no_reversion {
            self.reversion.enabled = false;
        }
        if let Some(lambda) = o.weighted_lambda {
            self.reversion.weighted = true;
            self.reversion.lambda = lambda;
            if let Some(variants) = &mut self.variants {
                for v in variants.iter_mut() {
                    if let Some(r) = &mut v.reversion {
                        if let Weighting::Exponential { .. } = r.weighting {
                            r.weighting = Weighting::Exponential { lambda };
                        }
                    }
                }
            }
        }
        if let Some(h) = o.horizon {
            self.split.horizon = h;
            self.protocol.horizon = h;
        }
        if let Some(kind) = o.model {
            if kind != self.model.model_kind {
                // Noise defaults differ per kind; keep only the shared settings.
                let mut spec = StructuralSpec::new(kind, self.model.period);
                spec.sample_interval = self.model.sample_interval;
                spec.obs_noise = self.model.obs_noise;
                self.model = spec;
            }
        }
        self.sync_seed();
    }

    /// Variants run by `compare`, after `--model` and `--no-reversion`
    /// filtering.
    pub fn compare_variants(&self, model_filter: Option<ModelKind>) -> Vec<ModelVariant> {
        let all = self.variants.clone().unwrap_or_else(|| {
            standard_variants(
                self.model.period,
                self.model.obs_noise,
                self.reversion.variance.first().copied().unwrap_or(DEFAULT_PSEUDO_VARIANCE),
                self.reversion.lambda,
            )
        });
        all.into_iter()
            .filter(|v| model_filter.is_none_or(|k| v.spec.model_kind == k))
            .filter(|v| self.reversion.enabled || v.reversion.is_none())
            .collect()
    }

    /// Checks the whole configuration; every problem names its field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let mut add = |prefix: &str, err: attractor_core::Error| match err {
            attractor_core::Error::Validation(list) => {
                problems.extend(list.into_iter().map(|m| format!("{prefix}.{m}")))
            }
            other => problems.push(format!("{prefix}: {other}")),
        };

        match &self.data {
            DataConfig::Csv { interval_minutes, .. } => {
                if *interval_minutes == 0 {
                    add("data", attractor_core::Error::invalid("interval_minutes: must be positive"));
                }
            }
            DataConfig::Synthetic(s) => {
                if let Err(e) = s.validate() {
                    add("data", e);
                }
            }
            DataConfig::Inflection(s) => {
                if let Err(e) = s.synthetic_spec().and_then(|spec| spec.validate()) {
                    add("data", e);
                }
            }
        }
        if let Err(e) = self.model.validate() {
            add("model", e);
        }
        if let Some(p) = self.data.period() {
            if p != self.model.period {
                add(
                    "model",
                    attractor_core::Error::invalid(format!("period: {} differs from data.period {p}", self.model.period)),
                );
            }
        }

        let r = &self.reversion;
        if r.variance.is_empty() || r.variance.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            add(
                "reversion",
                attractor_core::Error::invalid("variance: entries must be finite and >= 0, at least one"),
            );
        }
        if !(r.lambda > 0.0 && r.lambda <= 1.0) {
            add(
                "reversion",
                attractor_core::Error::invalid(format!("lambda: must lie in (0, 1], got {}", r.lambda)),
            );
        }
        if let Ok(sm) = build(&self.model) {
            if let Some(cfg) = self.reversion.for_kind(self.model.model_kind) {
                for c in &cfg.components {
                    if sm.layout.index_of(*c).is_none() {
                        add(
                            "reversion",
                            attractor_core::Error::invalid(format!(
                                "components: `{c}` is not a {} component",
                                self.model.model_kind.label()
                            )),
                        );
                    }
                }
                if let Err(e) = cfg.covariance() {
                    add("reversion", e);
                }
            }
        }

        if self.training.window == Some(0) {
            add("training", attractor_core::Error::invalid("window: must be >= 1"));
        }
        if self.split.horizon == 0 {
            add("split", attractor_core::Error::invalid("horizon: must be >= 1"));
        }
        if self.protocol.horizon == 0 {
            add("protocol", attractor_core::Error::invalid("horizon: must be >= 1"));
        }
        match &self.protocol.starts {
            Some(Starts::Seeded { count: 0, .. }) => {
                add("protocol", attractor_core::Error::invalid("starts.count: must be >= 1"))
            }
            Some(Starts::Explicit { indices }) if indices.is_empty() => {
                add("protocol", attractor_core::Error::invalid("starts.indices: must be nonempty"))
            }
            Some(Starts::Inflections) if !matches!(self.data, DataConfig::Inflection(_)) => add(
                "protocol",
                attractor_core::Error::invalid("starts: `inflections` needs data.source = \"inflection\""),
            ),
            _ => {}
        }

        if let Some(variants) = &self.variants {
            if variants.is_empty() {
                add("variants", attractor_core::Error::invalid("list: must be nonempty"));
            }
            for (i, v) in variants.iter().enumerate() {
                let prefix = format!("variants[{i}]");
                if variants[..i].iter().any(|w| w.name == v.name) {
                    add(&prefix, attractor_core::Error::invalid(format!("name: duplicate `{}`", v.name)));
                }
                if let Err(e) = v.spec.validate() {
                    add(&format!("{prefix}.spec"), e);
                }
                if let Some(r) = &v.reversion {
                    if let Err(e) = r.covariance() {
                        add(&format!("{prefix}.reversion"), e);
                    }
                    if let Ok(sm) = build(&v.spec) {
                        for c in &r.components {
                            if sm.layout.index_of(*c).is_none() {
                                add(
                                    &format!("{prefix}.reversion"),
                                    attractor_core::Error::invalid(format!("components: `{c}` not in model")),
                                );
                            }
                        }
                    }
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }
}
