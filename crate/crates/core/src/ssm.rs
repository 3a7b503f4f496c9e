//! Linear-Gaussian state-space models and Kalman recursions.
//!
//! ```text
//! h_t = A h_{t-1} + w_t,   w_t ~ N(0, Q)
//! v_t = B h_t + e_t,       e_t ~ N(0, R)
//! ```
//!
//! The emission may instead be a differentiable function `b(h)`, in which
//! case [`predict`] linearizes it at the predicted mean (extended Kalman
//! filter) and stores the Jacobian on the [`Prediction`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Innovation covariances with a worse condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-9;

/// Taylor terms smaller than this (max-abs entry) end the series.
const TAYLOR_TOL: f64 = 1e-14;
const TAYLOR_MAX_TERMS: usize = 50;

/// Mean and covariance of a latent state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Sample index the belief refers to.
    pub time_index: i64,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, time_index: i64) -> Result<Self> {
        let n = mean.len();
        check_shape("belief covariance", &covariance, n, n)?;
        Ok(Self {
            mean,
            covariance: symmetrize(&covariance),
            time_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// A differentiable observation function, linearized by the EKF.
pub trait NonlinearEmission: fmt::Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn evaluate(&self, state: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, state: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub enum Emission {
    Linear(DMatrix<f64>),
    Nonlinear(Arc<dyn NonlinearEmission>),
}

impl Emission {
    pub fn state_dim(&self) -> usize {
        match self {
            Emission::Linear(b) => b.ncols(),
            Emission::Nonlinear(f) => f.state_dim(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Emission::Linear(b) => b.nrows(),
            Emission::Nonlinear(f) => f.obs_dim(),
        }
    }

    /// Observation mean and emission matrix at `state`.
    pub fn linearize(&self, state: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            Emission::Linear(b) => (b * state, b.clone()),
            Emission::Nonlinear(f) => (f.evaluate(state), f.jacobian(state)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub transition: DMatrix<f64>,
    pub emission: Emission,
    pub state_noise: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
    /// Continuous-time generator the transition was discretized from, if any.
    pub continuous_transition: Option<DMatrix<f64>>,
    pub sample_interval: f64,
}

impl StateSpaceModel {
    pub fn new(
        transition: DMatrix<f64>,
        emission: Emission,
        state_noise: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self {
            transition,
            emission,
            state_noise,
            obs_noise,
            continuous_transition: None,
            sample_interval: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds the model from a continuous-time generator, discretized over
    /// `sample_interval`.
    pub fn from_continuous(
        continuous: DMatrix<f64>,
        sample_interval: f64,
        emission: Emission,
        state_noise: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let transition = discretize(&continuous, sample_interval)?;
        let model = Self {
            transition,
            emission,
            state_noise,
            obs_noise,
            continuous_transition: Some(continuous),
            sample_interval,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.emission.obs_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.transition.nrows();
        check_shape("transition", &self.transition, n, n)?;
        if self.emission.state_dim() != n {
            return Err(Error::Dimension {
                matrix: "emission",
                expected: (self.emission.obs_dim(), n),
                found: (self.emission.obs_dim(), self.emission.state_dim()),
            });
        }
        check_shape("state_noise", &self.state_noise, n, n)?;
        let m = self.emission.obs_dim();
        check_shape("obs_noise", &self.obs_noise, m, m)?;
        let mut problems = Vec::new();
        if !is_symmetric_psd(&self.state_noise) {
            problems.push("state_noise must be symmetric positive semi-definite".to_string());
        }
        if !is_symmetric_psd(&self.obs_noise) {
            problems.push("obs_noise must be symmetric positive semi-definite".to_string());
        }
        if let Some(ct) = &self.continuous_transition {
            let rederived = discretize(ct, self.sample_interval)?;
            if (&rederived - &self.transition).amax() > 1e-12 {
                problems.push("transition does not match discretized continuous_transition".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// One-step-ahead predictive moments for state and observation.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub state_mean: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    pub obs_mean: DVector<f64>,
    pub obs_cov: DMatrix<f64>,
    /// State/observation cross-covariance, n x m.
    pub cross_cov: DMatrix<f64>,
    /// Emission matrix used for the observation moments (the Jacobian for
    /// nonlinear emissions).
    pub emission_matrix: DMatrix<f64>,
    pub time_index: i64,
}

impl Prediction {
    /// The predicted state as a belief, i.e. the filter output when no
    /// observation arrives.
    pub fn state_belief(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.state_mean.clone(),
            covariance: self.state_cov.clone(),
            time_index: self.time_index,
        }
    }

    /// Standard deviation of the first observed channel.
    pub fn obs_std(&self) -> f64 {
        self.obs_cov[(0, 0)].max(0.0).sqrt()
    }
}

pub fn predict(model: &StateSpaceModel, belief: &GaussianBelief) -> Result<Prediction> {
    let n = model.state_dim();
    if belief.dim() != n {
        return Err(Error::Dimension {
            matrix: "belief mean",
            expected: (n, 1),
            found: (belief.dim(), 1),
        });
    }
    let a = &model.transition;
    let state_mean = a * &belief.mean;
    let state_cov = symmetrize(&(a * &belief.covariance * a.transpose() + &model.state_noise));
    let (obs_mean, b) = model.emission.linearize(&state_mean);
    let cross_cov = &state_cov * b.transpose();
    let obs_cov = symmetrize(&(&b * &cross_cov + &model.obs_noise));
    Ok(Prediction {
        state_mean,
        state_cov,
        obs_mean,
        obs_cov,
        cross_cov,
        emission_matrix: b,
        time_index: belief.time_index + 1,
    })
}

/// Conditions a prediction on an observation of the model's emission.
pub fn update(
    model: &StateSpaceModel,
    pred: &Prediction,
    observation: &DVector<f64>,
) -> Result<GaussianBelief> {
    let m = pred.obs_mean.len();
    if observation.len() != m {
        return Err(Error::Dimension {
            matrix: "observation",
            expected: (m, 1),
            found: (observation.len(), 1),
        });
    }
    let gain = kalman_gain(&pred.cross_cov, &pred.obs_cov)?;
    let mean = &pred.state_mean + &gain * (observation - &pred.obs_mean);
    let covariance = joseph_covariance(&pred.state_cov, &gain, &pred.emission_matrix, &model.obs_noise);
    Ok(GaussianBelief {
        mean,
        covariance,
        time_index: pred.time_index,
    })
}

/// Conditions `belief` on `observation = emission * h + noise`, with
/// `noise ~ N(0, noise_cov)`. This is the update used for pseudo-observations,
/// whose emission differs from the model's.
pub fn condition(
    belief: &GaussianBelief,
    emission: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    observation: &DVector<f64>,
) -> Result<GaussianBelief> {
    let n = belief.dim();
    let m = observation.len();
    check_shape("emission", emission, m, n)?;
    check_shape("observation noise", noise_cov, m, m)?;
    let cross_cov = &belief.covariance * emission.transpose();
    let innov_cov = symmetrize(&(emission * &cross_cov + noise_cov));
    let gain = kalman_gain(&cross_cov, &innov_cov)?;
    let mean = &belief.mean + &gain * (observation - emission * &belief.mean);
    let covariance = joseph_covariance(&belief.covariance, &gain, emission, noise_cov);
    Ok(GaussianBelief {
        mean,
        covariance,
        time_index: belief.time_index,
    })
}

/// `K = cross_cov * innov_cov^-1`, via Cholesky with a condition guard.
pub fn kalman_gain(cross_cov: &DMatrix<f64>, innov_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(innov_cov);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular {
            what: "innovation covariance",
            condition,
        });
    }
    let chol = innov_cov.clone().cholesky().ok_or(Error::Singular {
        what: "innovation covariance",
        condition,
    })?;
    Ok(chol.solve(&cross_cov.transpose()).transpose())
}

/// `(I - K B) P (I - K B)^T + K R K^T`, symmetrized.
pub fn joseph_covariance(
    prior_cov: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    emission: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = prior_cov.nrows();
    let i_kb = DMatrix::<f64>::identity(n, n) - gain * emission;
    let cov = &i_kb * prior_cov * i_kb.transpose() + gain * noise_cov * gain.transpose();
    symmetrize(&cov)
}

/// The textbook `(I - K B) P` covariance update. Only agrees with
/// [`joseph_covariance`] for the optimal gain.
pub fn plain_covariance(
    prior_cov: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    emission: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = prior_cov.nrows();
    (DMatrix::<f64>::identity(n, n) - gain * emission) * prior_cov
}

/// Predict, then update when an observation is present.
pub fn filter_step(
    model: &StateSpaceModel,
    belief: &GaussianBelief,
    observation: Option<&DVector<f64>>,
) -> Result<GaussianBelief> {
    let pred = predict(model, belief)?;
    match observation {
        Some(v) => update(model, &pred, v),
        None => Ok(pred.state_belief()),
    }
}

/// Runs the filter left to right; `None` entries are missing observations.
pub fn filter_sequence(
    model: &StateSpaceModel,
    initial: &GaussianBelief,
    observations: &[Option<DVector<f64>>],
) -> Result<Vec<GaussianBelief>> {
    let mut beliefs = Vec::with_capacity(observations.len());
    let mut current = initial.clone();
    for obs in observations {
        current = filter_step(model, &current, obs.as_ref())?;
        beliefs.push(current.clone());
    }
    Ok(beliefs)
}

/// Scalar-observation convenience wrapper over [`filter_sequence`].
pub fn filter_scalar(
    model: &StateSpaceModel,
    initial: &GaussianBelief,
    observations: &[Option<f64>],
) -> Result<Vec<GaussianBelief>> {
    let obs: Vec<_> = observations
        .iter()
        .map(|v| v.map(|x| DVector::from_element(1, x)))
        .collect();
    filter_sequence(model, initial, &obs)
}

/// Rauch-Tung-Striebel fixed-interval smoother over consecutive filtered
/// beliefs produced by [`filter_sequence`] with the same model.
pub fn rts_smooth(
    model: &StateSpaceModel,
    filtered: &[GaussianBelief],
) -> Result<Vec<GaussianBelief>> {
    let Some(last) = filtered.last() else {
        return Err(Error::invalid("rts_smooth needs at least one filtered belief"));
    };
    let a = &model.transition;
    let mut smoothed = vec![last.clone(); filtered.len()];
    for t in (0..filtered.len() - 1).rev() {
        let f = &filtered[t];
        let pred_mean = a * &f.mean;
        let pred_cov = symmetrize(&(a * &f.covariance * a.transpose() + &model.state_noise));
        // J = F A^T P^-1, solved as P J^T = A F.
        let rhs = a * &f.covariance;
        let jt = match pred_cov.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => pred_cov.clone().lu().solve(&rhs).ok_or(Error::Singular {
                what: "predicted covariance",
                condition: condition_number(&pred_cov),
            })?,
        };
        let j = jt.transpose();
        let next = &smoothed[t + 1];
        let mean = &f.mean + &j * (&next.mean - pred_mean);
        let cov = &f.covariance + &j * (&next.covariance - &pred_cov) * &jt;
        smoothed[t] = GaussianBelief {
            mean,
            covariance: symmetrize(&cov),
            time_index: f.time_index,
        };
    }
    Ok(smoothed)
}

/// Iterated prediction without updates; each step is seeded from the previous
/// predicted state.
pub fn forecast(
    model: &StateSpaceModel,
    belief: &GaussianBelief,
    steps: usize,
) -> Result<Vec<Prediction>> {
    if steps == 0 {
        return Err(Error::invalid("forecast steps must be at least 1"));
    }
    let mut out = Vec::with_capacity(steps);
    let mut current = belief.clone();
    for _ in 0..steps {
        let pred = predict(model, &current)?;
        current = pred.state_belief();
        out.push(pred);
    }
    Ok(out)
}

/// `exp(continuous * dt)` by its Taylor series.
pub fn discretize(continuous: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = continuous.nrows();
    check_shape("continuous_transition", continuous, n, n)?;
    let scaled = continuous * dt;
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..TAYLOR_MAX_TERMS {
        term = &term * &scaled / k as f64;
        if term.amax() < TAYLOR_TOL {
            break;
        }
        result += &term;
    }
    Ok(result)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return if m[(0, 0)] > 0.0 { 1.0 } else { f64::INFINITY };
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min() >= -SYMMETRY_TOL * scale
}

fn check_shape(matrix: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension {
            matrix,
            expected: (rows, cols),
            found: m.shape(),
        });
    }
    Ok(())
}
