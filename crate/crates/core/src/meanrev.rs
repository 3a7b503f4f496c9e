//! Mean reversion through an attractor distribution.
//!
//! The attractor is a fixed Gaussian over selected latent components whose
//! mean is an average of filtered training means. During a multi-step
//! forecast its mean is fed back as a pseudo-observation after every
//! prediction, so the forecast is pulled toward it at a rate set by the
//! pseudo-observation covariance: small covariances settle quickly, very
//! large ones leave the plain forecast untouched.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{condition, is_symmetric_psd, predict, GaussianBelief, Prediction, StateSpaceModel};

/// Settling is declared once the distance falls below this fraction of the
/// starting distance.
pub const SETTLING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weighting {
    Uniform,
    Exponential { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorDistribution {
    pub mean: DVector<f64>,
    /// One unit row per selected component.
    pub emission: DMatrix<f64>,
    pub pseudo_obs_cov: DMatrix<f64>,
    pub weighting: Weighting,
    pub burn_in: usize,
}

impl AttractorDistribution {
    /// Builds the attractor from filtered training beliefs.
    pub fn from_filtered(
        filtered: &[GaussianBelief],
        emission: DMatrix<f64>,
        pseudo_obs_cov: DMatrix<f64>,
        weighting: Weighting,
        burn_in: usize,
    ) -> Result<Self> {
        let mean = match weighting {
            Weighting::Uniform => attractor_mean(filtered, &emission, burn_in)?,
            Weighting::Exponential { lambda } => {
                weighted_attractor_mean(filtered, &emission, lambda, burn_in)?
            }
        };
        let attractor = Self {
            mean,
            emission,
            pseudo_obs_cov,
            weighting,
            burn_in,
        };
        attractor.validate()?;
        Ok(attractor)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.emission.nrows();
        let mut problems = Vec::new();
        if self.mean.len() != k {
            problems.push(format!("attractor mean has {} entries, expected {k}", self.mean.len()));
        }
        if self.pseudo_obs_cov.shape() != (k, k) {
            problems.push(format!(
                "pseudo_obs_cov is {:?}, expected ({k}, {k})",
                self.pseudo_obs_cov.shape()
            ));
        } else if !is_symmetric_psd(&self.pseudo_obs_cov) {
            problems.push("pseudo_obs_cov must be symmetric positive semi-definite".into());
        }
        if let Weighting::Exponential { lambda } = self.weighting {
            if !(lambda > 0.0 && lambda <= 1.0) {
                problems.push(format!("lambda must lie in (0, 1], got {lambda}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Distance of the selected components of `state` from the attractor mean.
    pub fn distance(&self, state: &DVector<f64>) -> f64 {
        (&self.emission * state - &self.mean).norm()
    }
}

fn window(filtered: &[GaussianBelief], burn_in: usize) -> Result<&[GaussianBelief]> {
    if filtered.len() <= burn_in {
        return Err(Error::invalid(format!(
            "burn_in {burn_in} leaves no filtered samples out of {}",
            filtered.len()
        )));
    }
    Ok(&filtered[burn_in..])
}

fn check_selection(filtered: &[GaussianBelief], selection: &DMatrix<f64>) -> Result<()> {
    let n = filtered[0].dim();
    if selection.ncols() != n {
        return Err(Error::Dimension {
            matrix: "attractor selection",
            expected: (selection.nrows(), n),
            found: selection.shape(),
        });
    }
    Ok(())
}

/// Arithmetic mean of `selection · f_i` over the beliefs after `burn_in`.
pub fn attractor_mean(
    filtered: &[GaussianBelief],
    selection: &DMatrix<f64>,
    burn_in: usize,
) -> Result<DVector<f64>> {
    let w = window(filtered, burn_in)?;
    check_selection(w, selection)?;
    let sum = w
        .iter()
        .fold(DVector::zeros(selection.nrows()), |acc, b| acc + selection * &b.mean);
    Ok(sum / w.len() as f64)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must lie in (0, 1], got {lambda}")))
    }
}

/// Exponentially weighted mean, normalized by the sum of the weights
/// `(1 - λ)^(t - i)`, so recent beliefs dominate.
pub fn weighted_attractor_mean(
    filtered: &[GaussianBelief],
    selection: &DMatrix<f64>,
    lambda: f64,
    burn_in: usize,
) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let w = window(filtered, burn_in)?;
    check_selection(w, selection)?;
    let decay = 1.0 - lambda;
    let last = w.len() - 1;
    let mut sum = DVector::zeros(selection.nrows());
    let mut total = 0.0;
    for (i, b) in w.iter().enumerate() {
        let weight = decay.powi((last - i) as i32);
        sum += selection * &b.mean * weight;
        total += weight;
    }
    Ok(sum / total)
}

/// Unnormalized variant `λ Σ f_i (1 - λ)^(t - i)`. Close to
/// [`weighted_attractor_mean`] only when the window is long enough for the
/// weights to sum to about one.
pub fn approximate_weighted_attractor_mean(
    filtered: &[GaussianBelief],
    selection: &DMatrix<f64>,
    lambda: f64,
    burn_in: usize,
) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let w = window(filtered, burn_in)?;
    check_selection(w, selection)?;
    let last = w.len() - 1;
    Ok(w.iter().enumerate().fold(DVector::zeros(selection.nrows()), |acc, (i, b)| {
        acc + selection * &b.mean * (lambda * (1.0 - lambda).powi((last - i) as i32))
    }))
}

/// One forecast step: the prediction that is reported, and the belief after
/// the pseudo-observation update that seeds the next step.
#[derive(Debug, Clone)]
pub struct ReversionStep {
    pub prediction: Prediction,
    pub belief: GaussianBelief,
}

pub fn forecast_with_reversion(
    model: &StateSpaceModel,
    belief: &GaussianBelief,
    attractor: &AttractorDistribution,
    steps: usize,
) -> Result<Vec<ReversionStep>> {
    if steps == 0 {
        return Err(Error::invalid("forecast steps must be at least 1"));
    }
    if attractor.emission.ncols() != model.state_dim() {
        return Err(Error::Dimension {
            matrix: "attractor emission",
            expected: (attractor.emission.nrows(), model.state_dim()),
            found: attractor.emission.shape(),
        });
    }
    let mut out = Vec::with_capacity(steps);
    let mut current = belief.clone();
    for _ in 0..steps {
        let prediction = predict(model, &current)?;
        current = condition(
            &prediction.state_belief(),
            &attractor.emission,
            &attractor.pseudo_obs_cov,
            &attractor.mean,
        )?;
        out.push(ReversionStep {
            prediction,
            belief: current.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlingReport {
    pub initial_distance: f64,
    /// Distance after each step's pseudo-observation update.
    pub distances: Vec<f64>,
    /// First step (1-based) whose distance is below
    /// [`SETTLING_FRACTION`] of the initial distance.
    pub settling_step: Option<usize>,
}

pub fn reversion_settling_report(
    model: &StateSpaceModel,
    belief: &GaussianBelief,
    attractor: &AttractorDistribution,
    steps: usize,
) -> Result<SettlingReport> {
    let trajectory = forecast_with_reversion(model, belief, attractor, steps)?;
    let initial_distance = attractor.distance(&belief.mean);
    let distances: Vec<f64> = trajectory
        .iter()
        .map(|s| attractor.distance(&s.belief.mean))
        .collect();
    let threshold = SETTLING_FRACTION * initial_distance;
    let settling_step = distances.iter().position(|&d| d < threshold).map(|i| i + 1);
    Ok(SettlingReport {
        initial_distance,
        distances,
        settling_step,
    })
}
