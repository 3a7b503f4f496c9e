//! Builders for the three structural models: a linear trend + harmonic
//! seasonal LDS, a nonlinear amplitude-modulated model filtered with the EKF,
//! and a free-form seasonal DLM.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Emission, GaussianBelief, NonlinearEmission, StateSpaceModel};

/// Initial variance for every latent component not fixed by the phase fit.
pub const INITIAL_VARIANCE: f64 = 1e2;
/// Initial variance of the deterministic harmonic states of the nonlinear model.
pub const HARMONIC_STATE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSeasonal,
    NonlinearAmplitude,
    DlmFreeform,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::LinearSeasonal => "LDS",
            ModelKind::NonlinearAmplitude => "NL",
            ModelKind::DlmFreeform => "DLM",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear-seasonal" => Ok(ModelKind::LinearSeasonal),
            "nonlinear" | "nonlinear-amplitude" => Ok(ModelKind::NonlinearAmplitude),
            "dlm" | "dlm-freeform" => Ok(ModelKind::DlmFreeform),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralSpec {
    pub model_kind: ModelKind,
    /// Samples per seasonal cycle.
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default = "default_interval")]
    pub sample_interval: f64,
    /// Per-component state noise variances; defaults depend on the model kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_noise_diag: Option<Vec<f64>>,
    #[serde(default = "default_obs_noise")]
    pub obs_noise: f64,
}

fn default_period() -> usize {
    96
}

fn default_interval() -> f64 {
    1.0
}

fn default_obs_noise() -> f64 {
    0.01
}

impl StructuralSpec {
    pub fn new(model_kind: ModelKind, period: usize) -> Self {
        Self {
            model_kind,
            period,
            sample_interval: default_interval(),
            state_noise_diag: None,
            obs_noise: default_obs_noise(),
        }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period as f64
    }

    pub fn state_dim(&self) -> usize {
        match self.model_kind {
            ModelKind::LinearSeasonal => 4,
            ModelKind::NonlinearAmplitude => 6,
            ModelKind::DlmFreeform => self.period + 1,
        }
    }

    /// State noise diagonal, falling back to the kind's default: velocity
    /// components (and the DLM's newest seasonal effect) get variance,
    /// instantaneous harmonic components get none.
    pub fn noise_diag(&self) -> Vec<f64> {
        if let Some(d) = &self.state_noise_diag {
            return d.clone();
        }
        match self.model_kind {
            ModelKind::LinearSeasonal => vec![0.0, 1e-8, 0.0, 1e-8],
            ModelKind::NonlinearAmplitude => vec![0.0, 1e-8, 0.0, 1e-8, 0.0, 0.0],
            ModelKind::DlmFreeform => {
                let mut d = vec![0.0; self.state_dim()];
                d[1] = 1e-8;
                d[2] = 1e-5;
                d
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.period < 2 {
            problems.push(format!("period: must be >= 2, got {}", self.period));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            problems.push(format!(
                "sample_interval: must be positive, got {}",
                self.sample_interval
            ));
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            problems.push(format!("obs_noise: must be >= 0, got {}", self.obs_noise));
        }
        if let Some(d) = &self.state_noise_diag {
            if self.period >= 2 && d.len() != self.state_dim() {
                problems.push(format!(
                    "state_noise_diag: expected {} entries, got {}",
                    self.state_dim(),
                    d.len()
                ));
            }
            if d.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                problems.push("state_noise_diag: variances must be finite and >= 0".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Named latent components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Trend,
    TrendVelocity,
    Seasonal,
    SeasonalVelocity,
    Amplitude,
    AmplitudeVelocity,
    HarmonicSin,
    HarmonicCos,
    /// Seasonal effect `j` samples in the past (0 is the current one).
    SeasonalFactor(usize),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Trend => f.write_str("trend"),
            Component::TrendVelocity => f.write_str("trend-velocity"),
            Component::Seasonal => f.write_str("seasonal"),
            Component::SeasonalVelocity => f.write_str("seasonal-velocity"),
            Component::Amplitude => f.write_str("amplitude"),
            Component::AmplitudeVelocity => f.write_str("amplitude-velocity"),
            Component::HarmonicSin => f.write_str("harmonic-sin"),
            Component::HarmonicCos => f.write_str("harmonic-cos"),
            Component::SeasonalFactor(j) => write!(f, "seasonal-factor[{j}]"),
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "trend" => Component::Trend,
            "trend-velocity" => Component::TrendVelocity,
            "seasonal" => Component::Seasonal,
            "seasonal-velocity" => Component::SeasonalVelocity,
            "amplitude" => Component::Amplitude,
            "amplitude-velocity" => Component::AmplitudeVelocity,
            "harmonic-sin" => Component::HarmonicSin,
            "harmonic-cos" => Component::HarmonicCos,
            other => {
                let j = other
                    .strip_prefix("seasonal-factor[")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|j| j.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown component `{other}`")))?;
                Component::SeasonalFactor(j)
            }
        })
    }
}

impl Serialize for Component {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Component {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered component list; position in the list is the state index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    components: Vec<Component>,
}

impl LatentLayout {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let mut seen = components.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != components.len() {
            return Err(Error::invalid("latent layout has duplicate components"));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn index_of(&self, c: Component) -> Option<usize> {
        self.components.iter().position(|&x| x == c)
    }

    fn idx(&self, c: Component) -> usize {
        self.index_of(c).expect("component present in layout")
    }
}

/// A built model together with its layout and the spec it came from.
#[derive(Debug, Clone)]
pub struct StructuralModel {
    pub spec: StructuralSpec,
    pub model: StateSpaceModel,
    pub layout: LatentLayout,
}

pub fn build(spec: &StructuralSpec) -> Result<StructuralModel> {
    match spec.model_kind {
        ModelKind::LinearSeasonal => build_linear_seasonal(spec),
        ModelKind::NonlinearAmplitude => build_nonlinear_amplitude(spec),
        ModelKind::DlmFreeform => build_dlm_freeform(spec),
    }
}

fn expect_kind(spec: &StructuralSpec, kind: ModelKind) -> Result<()> {
    spec.validate()?;
    if spec.model_kind != kind {
        return Err(Error::invalid(format!(
            "model_kind: expected {kind:?}, got {:?}",
            spec.model_kind
        )));
    }
    Ok(())
}

fn scalar_noise(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Trend `(γ, γ̇)` plus harmonic `(ψ, ψ̇)`; observes `γ + ψ`.
pub fn build_linear_seasonal(spec: &StructuralSpec) -> Result<StructuralModel> {
    expect_kind(spec, ModelKind::LinearSeasonal)?;
    let w2 = spec.omega().powi(2);
    // The harmonic block must be oscillatory, so the ψ̇ row carries -ω².
    #[rustfmt::skip]
    let continuous = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, -w2, 0.0,
    ]);
    let emission = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 0.0]);
    let model = StateSpaceModel::from_continuous(
        continuous,
        spec.sample_interval,
        Emission::Linear(emission),
        DMatrix::from_diagonal(&DVector::from_vec(spec.noise_diag())),
        scalar_noise(spec.obs_noise),
    )?;
    let layout = LatentLayout::new(vec![
        Component::Trend,
        Component::TrendVelocity,
        Component::Seasonal,
        Component::SeasonalVelocity,
    ])?;
    Ok(StructuralModel {
        spec: spec.clone(),
        model,
        layout,
    })
}

/// `b(h) = α·s + γ` over the state `(γ, γ̇, α, α̇, s, c)`.
#[derive(Debug, Clone, Copy)]
pub struct AmplitudeEmission;

impl NonlinearEmission for AmplitudeEmission {
    fn state_dim(&self) -> usize {
        6
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, h: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, h[2] * h[4] + h[0])
    }

    fn jacobian(&self, h: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 6, &[1.0, 0.0, h[4], 0.0, h[2], 0.0])
    }
}

/// Trend, amplitude and a unit harmonic as separate states, multiplied in
/// the emission.
pub fn build_nonlinear_amplitude(spec: &StructuralSpec) -> Result<StructuralModel> {
    expect_kind(spec, ModelKind::NonlinearAmplitude)?;
    let w2 = spec.omega().powi(2);
    #[rustfmt::skip]
    let continuous = DMatrix::from_row_slice(6, 6, &[
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 0.0, -w2, 0.0,
    ]);
    let model = StateSpaceModel::from_continuous(
        continuous,
        spec.sample_interval,
        Emission::Nonlinear(Arc::new(AmplitudeEmission)),
        DMatrix::from_diagonal(&DVector::from_vec(spec.noise_diag())),
        scalar_noise(spec.obs_noise),
    )?;
    let layout = LatentLayout::new(vec![
        Component::Trend,
        Component::TrendVelocity,
        Component::Amplitude,
        Component::AmplitudeVelocity,
        Component::HarmonicSin,
        Component::HarmonicCos,
    ])?;
    Ok(StructuralModel {
        spec: spec.clone(),
        model,
        layout,
    })
}

/// Local linear trend plus a form-free seasonal with `period - 1` free
/// effects; the effect for the remaining phase is minus their sum, so
/// effects over any full cycle sum to zero.
pub fn build_dlm_freeform(spec: &StructuralSpec) -> Result<StructuralModel> {
    expect_kind(spec, ModelKind::DlmFreeform)?;
    let p = spec.period;
    let n = p + 1;
    let mut a = DMatrix::<f64>::zeros(n, n);
    a[(0, 0)] = 1.0;
    a[(0, 1)] = spec.sample_interval;
    a[(1, 1)] = 1.0;
    // s_{t+1} = -(s_t + ... + s_{t-p+2}); the rest shift down one lag.
    for j in 2..n {
        a[(2, j)] = -1.0;
    }
    for j in 3..n {
        a[(j, j - 1)] = 1.0;
    }
    let mut b = DMatrix::<f64>::zeros(1, n);
    b[(0, 0)] = 1.0;
    b[(0, 2)] = 1.0;
    let model = StateSpaceModel::new(
        a,
        Emission::Linear(b),
        DMatrix::from_diagonal(&DVector::from_vec(spec.noise_diag())),
        scalar_noise(spec.obs_noise),
    )?;
    let mut components = vec![Component::Trend, Component::TrendVelocity];
    components.extend((0..p - 1).map(Component::SeasonalFactor));
    let layout = LatentLayout::new(components)?;
    Ok(StructuralModel {
        spec: spec.clone(),
        model,
        layout,
    })
}

/// Selection matrix with one unit row per requested component.
pub fn attractor_emission(layout: &LatentLayout, components: &[Component]) -> Result<DMatrix<f64>> {
    if components.is_empty() {
        return Err(Error::invalid("attractor components must be nonempty"));
    }
    let unknown: Vec<String> = components
        .iter()
        .filter(|c| layout.index_of(**c).is_none())
        .map(|c| format!("component `{c}` not in layout"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(unknown));
    }
    let mut b = DMatrix::zeros(components.len(), layout.dim());
    for (row, c) in components.iter().enumerate() {
        b[(row, layout.idx(*c))] = 1.0;
    }
    Ok(b)
}

/// Least-squares fit of `offset + a·sin(ωt) + b·cos(ωt)` to observed samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicFit {
    pub offset: f64,
    pub sin_coef: f64,
    pub cos_coef: f64,
}

impl HarmonicFit {
    pub fn amplitude(&self) -> f64 {
        self.sin_coef.hypot(self.cos_coef)
    }

    /// Phase `φ` with `a·sin(ωt) + b·cos(ωt) = A·sin(ωt + φ)`.
    pub fn phase(&self) -> f64 {
        self.cos_coef.atan2(self.sin_coef)
    }
}

/// Fits a harmonic to `(t, value)` samples; `None` when fewer than three
/// samples or the design is degenerate.
pub fn fit_harmonic(samples: &[(f64, f64)], omega: f64) -> Option<HarmonicFit> {
    if samples.len() < 3 {
        return None;
    }
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for &(t, y) in samples {
        let x = Vector3::new(1.0, (omega * t).sin(), (omega * t).cos());
        normal += x * x.transpose();
        rhs += x * y;
    }
    let eig = normal.symmetric_eigen();
    if eig.eigenvalues.min() <= 1e-10 * eig.eigenvalues.max() {
        return None;
    }
    let c = normal.cholesky()?.solve(&rhs);
    Some(HarmonicFit {
        offset: c[0],
        sin_coef: c[1],
        cos_coef: c[2],
    })
}

/// Starting belief for filtering a window whose first sample has series
/// index `first_index`. The belief refers to `first_index - 1`, so the first
/// prediction lands on the first sample.
///
/// The trend level and seasonal phase come from a harmonic fit to the first
/// observed seasonal cycle (widened until three samples are available);
/// unfitted components start at zero with variance [`INITIAL_VARIANCE`].
pub fn initial_belief(
    sm: &StructuralModel,
    observations: &[Option<f64>],
    first_index: usize,
) -> Result<GaussianBelief> {
    let spec = &sm.spec;
    let period = spec.period;
    let dt = spec.sample_interval;
    let omega = spec.omega();
    let Some(first_value) = observations.iter().flatten().next().copied() else {
        return Err(Error::invalid("training window has no observed samples"));
    };

    let mut fit = None;
    let mut span = period;
    while fit.is_none() && span <= observations.len().max(period) {
        let samples: Vec<(f64, f64)> = observations
            .iter()
            .take(span)
            .enumerate()
            .filter_map(|(i, v)| v.map(|y| ((first_index + i) as f64 * dt, y)))
            .collect();
        fit = fit_harmonic(&samples, omega);
        span += period;
    }

    let n = sm.layout.dim();
    let mut mean = DVector::<f64>::zeros(n);
    let mut var = DVector::<f64>::from_element(n, INITIAL_VARIANCE);
    let t0 = (first_index as f64 - 1.0) * dt;
    let level = fit.map_or(first_value, |f| f.offset);
    mean[sm.layout.idx(Component::Trend)] = level;

    match spec.model_kind {
        ModelKind::LinearSeasonal => {
            if let Some(f) = fit {
                let (s, c) = (omega * t0).sin_cos();
                mean[2] = f.sin_coef * s + f.cos_coef * c;
                mean[3] = omega * (f.sin_coef * c - f.cos_coef * s);
            }
        }
        ModelKind::NonlinearAmplitude => {
            let (amp, phase) = fit.map_or((0.0, 0.0), |f| (f.amplitude(), f.phase()));
            let (s, c) = (omega * t0 + phase).sin_cos();
            mean[2] = amp;
            mean[4] = s;
            mean[5] = omega * c;
            var[4] = HARMONIC_STATE_VARIANCE;
            var[5] = HARMONIC_STATE_VARIANCE * omega * omega;
        }
        ModelKind::DlmFreeform => {
            let effects = seasonal_effects(observations, first_index, period);
            let t_prev = first_index as i64 - 1;
            for j in 0..period - 1 {
                let phase = (t_prev - j as i64).rem_euclid(period as i64) as usize;
                mean[2 + j] = effects[phase];
            }
        }
    }
    GaussianBelief::new(mean, DMatrix::from_diagonal(&var), first_index as i64 - 1)
}

/// Centered per-phase averages of day-detrended observations.
fn seasonal_effects(observations: &[Option<f64>], first_index: usize, period: usize) -> Vec<f64> {
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (day, chunk) in observations.chunks(period).enumerate() {
        let obs: Vec<f64> = chunk.iter().flatten().copied().collect();
        if obs.len() * 2 < period {
            continue;
        }
        let day_mean = obs.iter().sum::<f64>() / obs.len() as f64;
        for (k, v) in chunk.iter().enumerate() {
            if let Some(y) = v {
                let phase = (first_index + day * period + k) % period;
                sums[phase] += y - day_mean;
                counts[phase] += 1;
            }
        }
    }
    let mut effects: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let centre = effects.iter().sum::<f64>() / period as f64;
    effects.iter_mut().for_each(|e| *e -= centre);
    effects
}
