//! Smoothed function estimators and interchangeable linearization schemes.
//!
//! The scheme registry maps runtime names to strategies producing locally
//! affine models of the step map: `analytic` (log-barrier smoothing plus
//! implicit differentiation), `randomized_first` (averaged exact gradients
//! at noise-perturbed states), `randomized_zeroth` (least-squares or
//! score-function fit to sampled steps) and `exact` (plain linearization of
//! the hard dynamics, kept as an ablation baseline).

mod estimators;
mod noise;
mod schemes;

pub use estimators::{
    gradient_first_order, gradient_zeroth_order, surrogate_mean, BaselinePolicy, EstimatorError,
    JacobianEstimate, MeanEstimate,
};
pub use noise::{HeavyTail1d, NoiseDistribution, NoiseFamily, NoiseSource};
pub use schemes::{
    scheme_by_name, scheme_names, smoothed_linear_model, LinearizationScheme, SchemeError,
};

use serde::{Deserialize, Serialize};

fn default_scheme() -> String {
    "analytic".to_string()
}
fn default_kappa() -> f64 {
    100.0
}
fn default_samples() -> usize {
    100
}

/// Noise over the `(q, u)` coordinates used by the randomized schemes.
/// The state noise defaults to one tenth of the input noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    pub scale_u: f64,
    #[serde(default)]
    pub scale_q: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { family: NoiseFamily::Gaussian, scale_u: 0.1, scale_q: None }
    }
}

impl NoiseConfig {
    pub fn scale_q(&self) -> f64 {
        self.scale_q.unwrap_or(0.1 * self.scale_u)
    }
}

/// Scheme selection plus its parameters; carried by scenarios and planners.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Registry name: `analytic`, `randomized_first`, `randomized_zeroth`
    /// or `exact`.
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Barrier weight (analytic scheme only).
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Sample count for the randomized schemes.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub baseline: BaselinePolicy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            scheme: default_scheme(),
            kappa: default_kappa(),
            noise: NoiseConfig::default(),
            samples: default_samples(),
            baseline: BaselinePolicy::default(),
            seed: 0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), SchemeError> {
        if scheme_by_name(&self.scheme).is_none() {
            return Err(SchemeError::UnknownScheme(self.scheme.clone()));
        }
        if self.kappa <= 0.0 {
            return Err(SchemeError::Config("kappa must be positive".into()));
        }
        if self.samples == 0 {
            return Err(SchemeError::Config("sample count must be at least 1".into()));
        }
        if self.noise.scale_u <= 0.0 || self.noise.scale_q() <= 0.0 {
            return Err(SchemeError::Config("noise scales must be positive".into()));
        }
        Ok(())
    }

    /// Copy with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SmoothingConfig { seed, ..self.clone() }
    }
}
