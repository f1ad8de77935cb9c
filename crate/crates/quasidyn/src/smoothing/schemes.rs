//! Linearization strategies behind a common trait, registered by name.

use super::estimators::BaselinePolicy;
use super::noise::{NoiseDistribution, NoiseSource};
use super::SmoothingConfig;
use crate::dynamics::{
    linearize, step_exact, DynamicsError, LocalModel, ModelMode, StepMode, SystemModel,
};
use crate::rng::stream;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("unknown scheme '{0}' (available: analytic, randomized_first, randomized_zeroth, exact)")]
    UnknownScheme(String),
    #[error("invalid smoothing config: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{failed} of {total} samples failed; first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error("sample Gram matrix is singular ({samples} samples of dimension {dim})")]
    SingularRegression { samples: usize, dim: usize },
}

/// A strategy producing a locally affine model of the step map at `(q, u)`.
pub trait LinearizationScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn local_model(
        &self,
        model: &SystemModel,
        q: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
        cfg: &SmoothingConfig,
    ) -> Result<LocalModel, SchemeError>;
}

/// Log-barrier smoothing differentiated through its stationarity condition.
pub struct AnalyticSmoothing;

/// Mean of exact-mode `(A, B, c)` over noise-perturbed nominal points.
pub struct RandomizedFirstOrder;

/// Affine fit to sampled exact steps (least squares under Gaussian noise,
/// score function otherwise).
pub struct RandomizedZerothOrder;

/// Plain linearization of the hard dynamics; the no-smoothing baseline.
pub struct ExactLinearization;

static REGISTRY: [&dyn LinearizationScheme; 4] = [
    &AnalyticSmoothing,
    &RandomizedFirstOrder,
    &RandomizedZerothOrder,
    &ExactLinearization,
];

pub fn scheme_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|s| s.name()).collect()
}

pub fn scheme_by_name(name: &str) -> Option<&'static dyn LinearizationScheme> {
    REGISTRY.iter().copied().find(|s| s.name() == name)
}

/// Locally affine model of the (smoothed) step map, using the scheme named
/// in the config.
pub fn smoothed_linear_model(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    cfg: &SmoothingConfig,
) -> Result<LocalModel, SchemeError> {
    let scheme = scheme_by_name(&cfg.scheme).ok_or_else(|| {
        SchemeError::UnknownScheme(cfg.scheme.clone())
    })?;
    scheme.local_model(model, q, u, h, cfg)
}

impl LinearizationScheme for AnalyticSmoothing {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn local_model(
        &self,
        model: &SystemModel,
        q: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
        cfg: &SmoothingConfig,
    ) -> Result<LocalModel, SchemeError> {
        Ok(linearize(model, q, u, h, StepMode::Smoothed { kappa: cfg.kappa })?)
    }
}

impl LinearizationScheme for ExactLinearization {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn local_model(
        &self,
        model: &SystemModel,
        q: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
        _cfg: &SmoothingConfig,
    ) -> Result<LocalModel, SchemeError> {
        Ok(linearize(model, q, u, h, StepMode::Exact)?)
    }
}

/// Joint noise over `(q, u)` per the configured scales.
fn joint_noise(model: &SystemModel, cfg: &SmoothingConfig) -> NoiseDistribution {
    let n_q = model.n_q();
    let mut scales = DVector::zeros(n_q + model.n_a);
    for i in 0..n_q {
        scales[i] = cfg.noise.scale_q();
    }
    for j in 0..model.n_a {
        scales[n_q + j] = cfg.noise.scale_u;
    }
    NoiseDistribution::new(cfg.noise.family, scales)
}

fn split_noise(model: &SystemModel, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n_q = model.n_q();
    (w.rows(0, n_q).into_owned(), w.rows(n_q, model.n_a).into_owned())
}

/// Run per-sample evaluations over fixed index streams; tolerate up to 10%
/// failures (penetrating or otherwise awkward samples may fail to solve).
fn sampled<T: Send>(
    n: usize,
    eval: impl Fn(usize) -> Result<T, String> + Sync,
) -> Result<Vec<T>, SchemeError> {
    let results: Vec<Result<T, String>> = (0..n).into_par_iter().map(&eval).collect();
    let mut ok = Vec::with_capacity(n);
    let mut first = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    if failed * 10 > n {
        return Err(SchemeError::TooManyFailures {
            failed,
            total: n,
            first: first.unwrap_or_default(),
        });
    }
    if ok.is_empty() {
        return Err(SchemeError::TooManyFailures {
            failed,
            total: n,
            first: first.unwrap_or_default(),
        });
    }
    Ok(ok)
}

impl LinearizationScheme for RandomizedFirstOrder {
    fn name(&self) -> &'static str {
        "randomized_first"
    }

    fn local_model(
        &self,
        model: &SystemModel,
        q: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
        cfg: &SmoothingConfig,
    ) -> Result<LocalModel, SchemeError> {
        let noise = joint_noise(model, cfg);
        let n = cfg.samples;
        let models = sampled(n, |i| {
            let w = noise.sample(&mut stream(cfg.seed, "noise", i as u64));
            let (wq, wu) = split_noise(model, &w);
            linearize(model, &(q + wq), &(u + wu), h, StepMode::Exact)
                .map(|lm| (lm.a, lm.b, lm.c))
                .map_err(|e| e.to_string())
        })?;
        let count = models.len();
        let n_q = model.n_q();
        let mut a = DMatrix::zeros(n_q, n_q);
        let mut b = DMatrix::zeros(n_q, model.n_a);
        let mut c = DVector::zeros(n_q);
        for (ai, bi, ci) in &models {
            a += ai;
            b += bi;
            c += ci;
        }
        let inv = 1.0 / count as f64;
        Ok(LocalModel {
            a: a * inv,
            b: b * inv,
            c: c * inv,
            q_nominal: q.clone(),
            u_nominal: u.clone(),
            mode: ModelMode::RandomizedFirst { samples: count },
        })
    }
}

impl LinearizationScheme for RandomizedZerothOrder {
    fn name(&self) -> &'static str {
        "randomized_zeroth"
    }

    fn local_model(
        &self,
        model: &SystemModel,
        q: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
        cfg: &SmoothingConfig,
    ) -> Result<LocalModel, SchemeError> {
        let noise = joint_noise(model, cfg);
        let n = cfg.samples;
        let pairs = sampled(n, |i| {
            let w = noise.sample(&mut stream(cfg.seed, "noise", i as u64));
            let (wq, wu) = split_noise(model, &w);
            step_exact(model, &(q + &wq), &(u + &wu), h)
                .map(|r| (w, r.q_next))
                .map_err(|e| e.to_string())
        })?;
        let count = pairs.len();
        let n_q = model.n_q();
        let d = n_q + model.n_a;
        let mut c = DVector::zeros(n_q);
        for (_, f) in &pairs {
            c += f;
        }
        c /= count as f64;

        let gains = if noise.is_gaussian() {
            // Least squares of (f - c) on the raw noise, intercept fixed to
            // the sample mean.
            let mut gram = DMatrix::zeros(d, d);
            let mut cross = DMatrix::zeros(d, n_q);
            for (w, f) in &pairs {
                let fc = f - &c;
                gram.ger(1.0, w, w, 1.0);
                cross.ger(1.0, w, &fc, 1.0);
            }
            let chol = gram
                .cholesky()
                .ok_or(SchemeError::SingularRegression { samples: count, dim: d })?;
            chol.solve(&cross).transpose()
        } else {
            // Score-function form.
            let b = match cfg.baseline {
                BaselinePolicy::Zero => DVector::zeros(n_q),
                BaselinePolicy::NominalValue => {
                    step_exact(model, q, u, h).map(|r| r.q_next).map_err(SchemeError::from)?
                }
            };
            let mut acc = DMatrix::zeros(n_q, d);
            for (w, f) in &pairs {
                let s = noise.score(w);
                acc.ger(1.0, &(f - &b), &s, 1.0);
            }
            acc / count as f64
        };
        let a = gains.columns(0, n_q).into_owned();
        let b = gains.columns(n_q, model.n_a).into_owned();
        Ok(LocalModel {
            a,
            b,
            c,
            q_nominal: q.clone(),
            u_nominal: u.clone(),
            mode: ModelMode::RandomizedZeroth { samples: count },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tests_support::{block_wall, cart_wall};
    use crate::smoothing::{NoiseConfig, NoiseFamily};

    fn randomized_cfg(scheme: &str, samples: usize, seed: u64) -> SmoothingConfig {
        SmoothingConfig {
            scheme: scheme.into(),
            noise: NoiseConfig {
                family: NoiseFamily::Gaussian,
                scale_u: 0.1,
                scale_q: Some(0.05),
            },
            samples,
            seed,
            ..SmoothingConfig::default()
        }
    }

    #[test]
    fn registry_lists_all_schemes() {
        let names = scheme_names();
        assert_eq!(names, vec!["analytic", "randomized_first", "randomized_zeroth", "exact"]);
        for n in names {
            assert!(scheme_by_name(n).is_some());
        }
        assert!(scheme_by_name("bogus").is_none());
    }

    #[test]
    fn analytic_scheme_equals_smoothed_linearize() {
        let model = cart_wall(1.0);
        let q = nalgebra::dvector![0.5];
        let u = nalgebra::dvector![0.2];
        let cfg = SmoothingConfig { kappa: 100.0, ..SmoothingConfig::default() };
        let via_scheme = smoothed_linear_model(&model, &q, &u, 0.1, &cfg).unwrap();
        let direct = linearize(&model, &q, &u, 0.1, StepMode::Smoothed { kappa: 100.0 }).unwrap();
        assert_eq!(via_scheme.b[(0, 0)].to_bits(), direct.b[(0, 0)].to_bits());
        assert_eq!(via_scheme.c[0].to_bits(), direct.c[0].to_bits());
    }

    #[test]
    fn stochastic_force_field_pushes_off_the_wall() {
        // Averaging the projection dynamics over noise biases the block away
        // from the wall even at zero gap.
        let model = block_wall();
        let q = nalgebra::dvector![0.0];
        let u = nalgebra::dvector![];
        let cfg = randomized_cfg("randomized_zeroth", 4000, 5);
        let lm = smoothed_linear_model(&model, &q, &u, 0.1, &cfg).unwrap();
        assert!(lm.c[0] > 0.01, "expected positive bias, got {}", lm.c[0]);
    }

    #[test]
    fn randomized_first_on_smooth_region_matches_exact() {
        // Far from the wall every sampled linearization is the same.
        let model = cart_wall(1.0);
        let q = nalgebra::dvector![5.0];
        let u = nalgebra::dvector![5.0];
        let cfg = randomized_cfg("randomized_first", 64, 6);
        let lm = smoothed_linear_model(&model, &q, &u, 0.1, &cfg).unwrap();
        assert!((lm.b[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(lm.a[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn schemes_are_deterministic_and_seed_sensitive() {
        let model = cart_wall(1.0);
        let q = nalgebra::dvector![0.3];
        let u = nalgebra::dvector![0.1];
        let cfg = randomized_cfg("randomized_zeroth", 500, 7);
        let a = smoothed_linear_model(&model, &q, &u, 0.1, &cfg).unwrap();
        let b = smoothed_linear_model(&model, &q, &u, 0.1, &cfg).unwrap();
        assert_eq!(a.b[(0, 0)].to_bits(), b.b[(0, 0)].to_bits());
        let c = smoothed_linear_model(&model, &q, &u, 0.1, &cfg.with_seed(8)).unwrap();
        assert!(a.b[(0, 0)] != c.b[(0, 0)]);
    }
}
