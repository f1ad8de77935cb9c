//! Sampling distributions for randomized smoothing.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A zero-mean noise source with density, score and sampling.
pub trait NoiseSource: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64>;
    fn log_density(&self, w: &DVector<f64>) -> f64;
    /// Score `S(w) = -grad log rho(w)`.
    fn score(&self, w: &DVector<f64>) -> DVector<f64>;
    fn is_gaussian(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Logistic,
}

/// Independent per-coordinate noise from one of the supported families.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    pub family: NoiseFamily,
    pub scales: DVector<f64>,
}

impl NoiseDistribution {
    pub fn new(family: NoiseFamily, scales: DVector<f64>) -> Self {
        assert!(scales.iter().all(|&s| s > 0.0), "noise scales must be positive");
        NoiseDistribution { family, scales }
    }

    pub fn isotropic(family: NoiseFamily, dim: usize, scale: f64) -> Self {
        Self::new(family, DVector::from_element(dim, scale))
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            return r;
        }
    }
}

impl NoiseSource for NoiseDistribution {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self.family {
            NoiseFamily::Gaussian => DVector::from_fn(self.dim(), |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                self.scales[i] * z
            }),
            NoiseFamily::Logistic => DVector::from_fn(self.dim(), |i, _| {
                let p = open_unit(rng);
                self.scales[i] * (p / (1.0 - p)).ln()
            }),
        }
    }

    fn log_density(&self, w: &DVector<f64>) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                let mut acc = 0.0;
                for i in 0..self.dim() {
                    let s = self.scales[i];
                    acc += -0.5 * (w[i] / s).powi(2)
                        - s.ln()
                        - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                acc
            }
            NoiseFamily::Logistic => {
                let mut acc = 0.0;
                for i in 0..self.dim() {
                    let s = self.scales[i];
                    let t = w[i] / s;
                    acc += -t - s.ln() - 2.0 * (1.0 + (-t).exp()).ln();
                }
                acc
            }
        }
    }

    fn score(&self, w: &DVector<f64>) -> DVector<f64> {
        match self.family {
            NoiseFamily::Gaussian => {
                DVector::from_fn(self.dim(), |i, _| w[i] / (self.scales[i] * self.scales[i]))
            }
            NoiseFamily::Logistic => DVector::from_fn(self.dim(), |i, _| {
                let s = self.scales[i];
                (w[i] / (2.0 * s)).tanh() / s
            }),
        }
    }

    fn is_gaussian(&self) -> bool {
        self.family == NoiseFamily::Gaussian
    }
}

/// Heavy-tailed 1D density `rho(w) = sqrt(4 sigma / (sigma w^2 + 4)^3)`,
/// sampled by inverse CDF. Used to validate the correspondence between
/// barrier smoothing and randomized smoothing on the cart-wall system.
#[derive(Debug, Clone, Copy)]
pub struct HeavyTail1d {
    pub sigma: f64,
}

impl NoiseSource for HeavyTail1d {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        // CDF is F(w) = (1 + sqrt(sigma) w / sqrt(sigma w^2 + 4)) / 2,
        // inverted in closed form.
        let p = open_unit(rng);
        let t: f64 = 2.0 * p - 1.0;
        let w = (2.0 / self.sigma.sqrt()) * t / (1.0 - t * t).sqrt();
        DVector::from_element(1, w)
    }

    fn log_density(&self, w: &DVector<f64>) -> f64 {
        0.5 * (4.0 * self.sigma).ln() - 1.5 * (self.sigma * w[0] * w[0] + 4.0).ln()
    }

    fn score(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 3.0 * self.sigma * w[0] / (self.sigma * w[0] * w[0] + 4.0))
    }
}
