#![allow(dead_code)]

//! Test-only oracles, independent of the filter recursions.

use attractor_core::ssm::{Emission, GaussianBelief, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random model, prior and (partially missing) observation sequence.
pub struct Instance {
    pub model: StateSpaceModel,
    pub prior: GaussianBelief,
    pub observations: Vec<Option<DVector<f64>>>,
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

pub fn random_instance(seed: u64, allow_missing: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let t = rng.random_range(1..=6);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let q = random_spd(&mut rng, n, 0.1);
    let r = random_spd(&mut rng, m, 0.1);
    let model = StateSpaceModel::new(a, Emission::Linear(b), q, r).unwrap();
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let prior = GaussianBelief::new(mean, random_spd(&mut rng, n, 0.2), 0).unwrap();
    let observations = (0..t)
        .map(|_| {
            if allow_missing && rng.random_bool(0.3) {
                None
            } else {
                Some(DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0)))
            }
        })
        .collect();
    Instance {
        model,
        prior,
        observations,
    }
}

fn emission_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    match &model.emission {
        Emission::Linear(b) => b.clone(),
        Emission::Nonlinear(_) => panic!("oracle needs a linear emission"),
    }
}

/// Dense prior over `(h_0, ..., h_T)` and the observed `v_t`, conditioned on
/// the observations by direct Gaussian conditioning.
pub struct JointGaussian {
    n: usize,
    steps: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn build(inst: &Instance) -> Self {
        let model = &inst.model;
        let n = model.state_dim();
        let m = model.obs_dim();
        let a = &model.transition;
        let b = emission_matrix(model);
        let steps = inst.observations.len();

        // State block: Cov(h_s, h_t) = A^(t-s) Var(h_s) for t >= s.
        let mut state_means = vec![inst.prior.mean.clone()];
        let mut state_vars = vec![inst.prior.covariance.clone()];
        for t in 1..=steps {
            state_means.push(a * &state_means[t - 1]);
            state_vars.push(a * &state_vars[t - 1] * a.transpose() + &model.state_noise);
        }
        let hs = n * (steps + 1);
        let mut cov_h = DMatrix::zeros(hs, hs);
        for (s, var) in state_vars.iter().enumerate() {
            let mut block = var.clone();
            for t in s..=steps {
                cov_h.view_mut((t * n, s * n), (n, n)).copy_from(&block);
                cov_h.view_mut((s * n, t * n), (n, n)).copy_from(&block.transpose());
                block = a * block;
            }
        }

        let observed: Vec<usize> = (0..steps).filter(|&t| inst.observations[t].is_some()).collect();
        let total = hs + m * observed.len();
        let mut mean = DVector::zeros(total);
        let mut cov = DMatrix::zeros(total, total);
        for (t, m) in state_means.iter().enumerate() {
            mean.rows_mut(t * n, n).copy_from(m);
        }
        cov.view_mut((0, 0), (hs, hs)).copy_from(&cov_h);
        for (k, &t) in observed.iter().enumerate() {
            let row = hs + k * m;
            let ht = (t + 1) * n;
            mean.rows_mut(row, m).copy_from(&(&b * &state_means[t + 1]));
            // Cov(v_t, h_s) = B Cov(h_t, h_s)
            let cross = &b * cov_h.view((ht, 0), (n, hs));
            cov.view_mut((row, 0), (m, hs)).copy_from(&cross);
            cov.view_mut((0, row), (hs, m)).copy_from(&cross.transpose());
            for (k2, &t2) in observed.iter().enumerate() {
                let col = hs + k2 * m;
                let h2 = (t2 + 1) * n;
                let mut block = &b * cov_h.view((ht, h2), (n, n)) * b.transpose();
                if t == t2 {
                    block += &model.obs_noise;
                }
                cov.view_mut((row, col), (m, m)).copy_from(&block);
            }
        }
        Self {
            n,
            steps,
            mean,
            cov,
        }
    }

    /// Posterior of `h_t` (t in 1..=T) given the observations at steps
    /// `< upto` (step t observes h_t, stored at index t - 1).
    pub fn posterior(&self, inst: &Instance, t: usize, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let hs = n * (self.steps + 1);
        let m = inst.model.obs_dim();
        let observed: Vec<usize> = (0..self.steps).filter(|&s| inst.observations[s].is_some()).collect();
        let rows: Vec<usize> = observed
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < upto)
            .flat_map(|(k, _)| (hs + k * m)..(hs + (k + 1) * m))
            .collect();
        let target: Vec<usize> = (t * n..(t + 1) * n).collect();
        let mu_h = DVector::from_fn(n, |i, _| self.mean[target[i]]);
        let cov_hh = DMatrix::from_fn(n, n, |i, j| self.cov[(target[i], target[j])]);
        if rows.is_empty() {
            return (mu_h, cov_hh);
        }
        let values: Vec<f64> = observed
            .iter()
            .filter(|&&s| s < upto)
            .flat_map(|&s| inst.observations[s].as_ref().unwrap().iter().copied().collect::<Vec<_>>())
            .collect();
        let v = DVector::from_vec(values);
        let mu_v = DVector::from_fn(rows.len(), |i, _| self.mean[rows[i]]);
        let cov_vv = DMatrix::from_fn(rows.len(), rows.len(), |i, j| self.cov[(rows[i], rows[j])]);
        let cov_hv = DMatrix::from_fn(n, rows.len(), |i, j| self.cov[(target[i], rows[j])]);
        let inv = cov_vv.try_inverse().expect("observation covariance invertible");
        let mean = &mu_h + &cov_hv * &inv * (v - mu_v);
        let cov = &cov_hh - &cov_hv * &inv * cov_hv.transpose();
        (mean, cov)
    }
}

/// Largest absolute deviation between filter beliefs and oracle posteriors.
pub fn filter_error(inst: &Instance, beliefs: &[GaussianBelief]) -> f64 {
    let joint = JointGaussian::build(inst);
    beliefs
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (mean, cov) = joint.posterior(inst, i + 1, i + 1);
            (&b.mean - mean).amax().max((&b.covariance - cov).amax())
        })
        .fold(0.0, f64::max)
}

pub fn smoother_error(inst: &Instance, smoothed: &[GaussianBelief]) -> f64 {
    let joint = JointGaussian::build(inst);
    let steps = inst.observations.len();
    smoothed
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (mean, cov) = joint.posterior(inst, i + 1, steps);
            (&b.mean - mean).amax().max((&b.covariance - cov).amax())
        })
        .fold(0.0, f64::max)
}

/// Closed-form `exp([[0, 1], [-ω², 0]] dt)`.
pub fn harmonic_exponential(omega: f64, dt: f64) -> DMatrix<f64> {
    let (s, c) = (omega * dt).sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, s / omega, -omega * s, c])
}

pub mod scenario {
    use attractor_core::data::{generate_synthetic, InflectionScenario, SyntheticData};
    use attractor_core::models::{ModelKind, StructuralSpec};
    use attractor_core::pipeline::{fit, FittedModel, DEFAULT_OBS_NOISE};

    pub const TRAIN_WINDOW: usize = 2880;

    pub fn inflection_data() -> (InflectionScenario, SyntheticData) {
        let sc = InflectionScenario::default();
        let data = generate_synthetic(&sc.synthetic_spec().unwrap()).unwrap();
        (sc, data)
    }

    pub fn spec(kind: ModelKind) -> StructuralSpec {
        let mut spec = StructuralSpec::new(kind, 96);
        spec.obs_noise = DEFAULT_OBS_NOISE;
        spec
    }

    /// Fits `kind` on the training window ending at `start`.
    pub fn fit_at(kind: ModelKind, data: &SyntheticData, start: usize) -> FittedModel {
        let first = start - TRAIN_WINDOW;
        let obs = data.series.slice(first, start).observations();
        fit(&spec(kind), &obs, first).unwrap()
    }
}
