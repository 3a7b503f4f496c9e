//! Fit a structural model to a training window and forecast from its end,
//! with or without mean reversion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanrev::{forecast_with_reversion, AttractorDistribution, Weighting};
use crate::models::{
    attractor_emission, build, initial_belief, Component, ModelKind, StructuralModel, StructuralSpec,
};
use crate::ssm::{filter_scalar, forecast, GaussianBelief, Prediction};

/// Default exponential weighting for weighted mean reversion.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Default pseudo-observation variance for the standard comparison set.
pub const DEFAULT_PSEUDO_VARIANCE: f64 = 1e-2;
/// Default observation noise variance for the standard comparison set.
pub const DEFAULT_OBS_NOISE: f64 = 0.0225;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversionConfig {
    pub components: Vec<Component>,
    /// Pseudo-observation variances, one per component; a single entry is
    /// used for every component (isotropic).
    pub variance: Vec<f64>,
    #[serde(default = "uniform")]
    pub weighting: Weighting,
    /// Filtered samples skipped before averaging; defaults to one period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

fn uniform() -> Weighting {
    Weighting::Uniform
}

impl ReversionConfig {
    pub fn new(components: Vec<Component>, variance: f64, weighting: Weighting) -> Self {
        Self {
            components,
            variance: vec![variance],
            weighting,
            burn_in: None,
        }
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let k = self.components.len();
        let diag = match self.variance.len() {
            1 => vec![self.variance[0]; k],
            len if len == k => self.variance.clone(),
            len => {
                return Err(Error::invalid(format!(
                    "variance: {len} entries for {k} components"
                )))
            }
        };
        if diag.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("variance: entries must be finite and >= 0"));
        }
        Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)))
    }
}

/// A named model configuration evaluated by the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelVariant {
    pub name: String,
    pub spec: StructuralSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversion: Option<ReversionConfig>,
}

/// The standard comparison set: LDS, DLM and nonlinear models, each plain
/// and with uniform reversion, plus exponentially weighted reversion for LDS
/// and DLM. The nonlinear model reverts on trend and amplitude, the others on
/// trend only.
pub fn standard_variants(period: usize, obs_noise: f64, variance: f64, lambda: f64) -> Vec<ModelVariant> {
    let variant = |kind: ModelKind, weighting: Option<Weighting>, name: &str| {
        let mut spec = StructuralSpec::new(kind, period);
        spec.obs_noise = obs_noise;
        let components = match kind {
            ModelKind::NonlinearAmplitude => vec![Component::Trend, Component::Amplitude],
            _ => vec![Component::Trend],
        };
        ModelVariant {
            name: name.to_string(),
            spec,
            reversion: weighting.map(|w| ReversionConfig::new(components, variance, w)),
        }
    };
    let weighted = Weighting::Exponential { lambda };
    vec![
        variant(ModelKind::LinearSeasonal, None, "LDS"),
        variant(ModelKind::LinearSeasonal, Some(Weighting::Uniform), "LDS_MR"),
        variant(ModelKind::LinearSeasonal, Some(weighted), "LDS_WMR"),
        variant(ModelKind::DlmFreeform, None, "DLM"),
        variant(ModelKind::DlmFreeform, Some(Weighting::Uniform), "DLM_MR"),
        variant(ModelKind::DlmFreeform, Some(weighted), "DLM_WMR"),
        variant(ModelKind::NonlinearAmplitude, None, "NL"),
        variant(ModelKind::NonlinearAmplitude, Some(Weighting::Uniform), "NL_MR"),
    ]
}

/// Filtered training beliefs for one structural model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub structural: StructuralModel,
    pub initial: GaussianBelief,
    pub filtered: Vec<GaussianBelief>,
}

/// Filters `train`, whose first sample sits at series index `first_index`.
pub fn fit(spec: &StructuralSpec, train: &[Option<f64>], first_index: usize) -> Result<FittedModel> {
    if train.is_empty() {
        return Err(Error::invalid("training window is empty"));
    }
    let structural = build(spec)?;
    let initial = initial_belief(&structural, train, first_index)?;
    let filtered = filter_scalar(&structural.model, &initial, train)?;
    Ok(FittedModel {
        structural,
        initial,
        filtered,
    })
}

#[derive(Debug, Clone)]
pub struct ForecastRun {
    /// Reported per-step predictions.
    pub predictions: Vec<Prediction>,
    pub attractor: Option<AttractorDistribution>,
    /// Beliefs after each pseudo-observation update (reversion only).
    pub updated: Vec<GaussianBelief>,
}

impl ForecastRun {
    pub fn obs_mean(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.obs_mean[0]).collect()
    }

    pub fn obs_std(&self) -> Vec<f64> {
        self.predictions.iter().map(Prediction::obs_std).collect()
    }
}

impl FittedModel {
    pub fn last_belief(&self) -> &GaussianBelief {
        self.filtered.last().unwrap_or(&self.initial)
    }

    pub fn attractor(&self, cfg: &ReversionConfig) -> Result<AttractorDistribution> {
        let emission = attractor_emission(&self.structural.layout, &cfg.components)?;
        let burn_in = cfg.burn_in.unwrap_or(self.structural.spec.period);
        AttractorDistribution::from_filtered(
            &self.filtered,
            emission,
            cfg.covariance()?,
            cfg.weighting,
            burn_in,
        )
    }

    pub fn forecast(&self, reversion: Option<&ReversionConfig>, horizon: usize) -> Result<ForecastRun> {
        let model = &self.structural.model;
        match reversion {
            None => Ok(ForecastRun {
                predictions: forecast(model, self.last_belief(), horizon)?,
                attractor: None,
                updated: Vec::new(),
            }),
            Some(cfg) => {
                let attractor = self.attractor(cfg)?;
                let steps = forecast_with_reversion(model, self.last_belief(), &attractor, horizon)?;
                let (predictions, updated) = steps.into_iter().map(|s| (s.prediction, s.belief)).unzip();
                Ok(ForecastRun {
                    predictions,
                    attractor: Some(attractor),
                    updated,
                })
            }
        }
    }
}
