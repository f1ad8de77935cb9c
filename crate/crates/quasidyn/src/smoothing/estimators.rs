//! Monte-Carlo estimators of smoothed function values and gradients.
//!
//! Given a (possibly non-smooth) function `f`, its smooth surrogate is the
//! expectation of `f` under additive noise. Three estimators are provided:
//!
//! - [`surrogate_mean`]: sample mean of `f(x + w_i)`,
//! - [`gradient_first_order`]: sample mean of `df/dx (x + w_i)` (requires a
//!   gradient evaluator; biased on discontinuities),
//! - [`gradient_zeroth_order`]: either the score-function form
//!   `mean[(f(x + w_i) - b) S(w_i)']` or, for Gaussian noise, the
//!   least-squares fit of an affine model to the sampled values.
//!
//! Samples are drawn from per-index RNG streams and reduced in index order,
//! so results are reproducible and independent of thread count.

use super::noise::NoiseSource;
use crate::rng::stream;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("evaluator failed at sample {index}: {message}")]
    Evaluator { index: usize, message: String },
    #[error("sample Gram matrix is singular ({samples} samples of dimension {dim})")]
    SingularRegression { samples: usize, dim: usize },
}

/// Baseline subtracted inside the score-function estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaselinePolicy {
    #[default]
    Zero,
    /// Subtract `f` evaluated at the nominal point (zero noise).
    NominalValue,
}

/// Estimate of a smoothed value with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub mean: DVector<f64>,
    pub std_error: DVector<f64>,
    pub samples: usize,
}

/// Estimate of a smoothed Jacobian with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct JacobianEstimate {
    pub jacobian: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub samples: usize,
}

/// Single-pass mean/variance accumulator over matrix entries.
struct Welford {
    n: usize,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(rows: usize, cols: usize) -> Self {
        Welford { n: 0, mean: DMatrix::zeros(rows, cols), m2: DMatrix::zeros(rows, cols) }
    }

    fn push(&mut self, x: &DMatrix<f64>) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let d = x[(i, j)] - self.mean[(i, j)];
                self.mean[(i, j)] += d * inv;
                self.m2[(i, j)] += d * (x[(i, j)] - self.mean[(i, j)]);
            }
        }
    }

    /// Standard error of the mean per entry.
    fn std_error(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::zeros(self.mean.nrows(), self.mean.ncols());
        }
        let denom = (self.n * (self.n - 1)) as f64;
        self.m2.map(|v| (v / denom).sqrt())
    }
}

fn draw(noise: &dyn NoiseSource, seed: u64, index: usize) -> DVector<f64> {
    noise.sample(&mut stream(seed, "noise", index as u64))
}

fn collect_samples<T: Send>(
    n: usize,
    eval: impl Fn(usize) -> Result<T, String> + Sync,
) -> Result<Vec<T>, EstimatorError> {
    let results: Vec<Result<T, String>> = (0..n).into_par_iter().map(&eval).collect();
    let mut out = Vec::with_capacity(n);
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(message) => return Err(EstimatorError::Evaluator { index, message }),
        }
    }
    Ok(out)
}

/// Sample mean of `f(x + w_i)`: unbiased estimate of the smooth surrogate.
pub fn surrogate_mean(
    f: impl Fn(&DVector<f64>) -> Result<DVector<f64>, String> + Sync,
    x: &DVector<f64>,
    noise: &dyn NoiseSource,
    n: usize,
    seed: u64,
) -> Result<MeanEstimate, EstimatorError> {
    assert!(n >= 1, "need at least one sample");
    let values = collect_samples(n, |i| f(&(x + draw(noise, seed, i))))?;
    let m = values[0].len();
    let mut acc = Welford::new(m, 1);
    for v in &values {
        acc.push(&DMatrix::from_column_slice(m, 1, v.as_slice()));
    }
    Ok(MeanEstimate {
        mean: acc.mean.column(0).into_owned(),
        std_error: acc.std_error().column(0).into_owned(),
        samples: n,
    })
}

/// Sample mean of Jacobians at perturbed points (reparametrization form).
pub fn gradient_first_order(
    f_jacobian: impl Fn(&DVector<f64>) -> Result<DMatrix<f64>, String> + Sync,
    x: &DVector<f64>,
    noise: &dyn NoiseSource,
    n: usize,
    seed: u64,
) -> Result<JacobianEstimate, EstimatorError> {
    assert!(n >= 1, "need at least one sample");
    let jacs = collect_samples(n, |i| f_jacobian(&(x + draw(noise, seed, i))))?;
    let mut acc = Welford::new(jacs[0].nrows(), jacs[0].ncols());
    for j in &jacs {
        acc.push(j);
    }
    Ok(JacobianEstimate { jacobian: acc.mean.clone(), std_error: acc.std_error(), samples: n })
}

/// Zeroth-order gradient estimate from function values only.
///
/// Gaussian noise uses the least-squares fit of an affine model (jointly in
/// slope and intercept); other noise uses the score-function form with the
/// requested baseline.
pub fn gradient_zeroth_order(
    f: impl Fn(&DVector<f64>) -> Result<DVector<f64>, String> + Sync,
    x: &DVector<f64>,
    noise: &dyn NoiseSource,
    n: usize,
    baseline: BaselinePolicy,
    seed: u64,
) -> Result<JacobianEstimate, EstimatorError> {
    assert!(n >= 1, "need at least one sample");
    let pairs = collect_samples(n, |i| {
        let w = draw(noise, seed, i);
        f(&(x + &w)).map(|v| (w, v))
    })?;
    let d = noise.dim();
    let m = pairs[0].1.len();
    if noise.is_gaussian() {
        // Centered least squares; exact for affine data.
        let mut w_mean = DVector::zeros(d);
        let mut f_mean = DVector::zeros(m);
        for (w, v) in &pairs {
            w_mean += w;
            f_mean += v;
        }
        w_mean /= n as f64;
        f_mean /= n as f64;
        let mut gram = DMatrix::zeros(d, d);
        let mut cross = DMatrix::zeros(d, m);
        for (w, v) in &pairs {
            let wc = w - &w_mean;
            let vc = v - &f_mean;
            gram.ger(1.0, &wc, &wc, 1.0);
            cross.ger(1.0, &wc, &vc, 1.0);
        }
        let chol = gram
            .clone()
            .cholesky()
            .ok_or(EstimatorError::SingularRegression { samples: n, dim: d })?;
        let jac_t = chol.solve(&cross); // d x m
        let jacobian = jac_t.transpose();
        // Classic OLS standard errors per output row.
        let mut resid_ss: DVector<f64> = DVector::zeros(m);
        for (w, v) in &pairs {
            let pred = &jacobian * (w - &w_mean) + &f_mean;
            for k in 0..m {
                resid_ss[k] += (v[k] - pred[k]).powi(2);
            }
        }
        let dof = (n as f64 - d as f64 - 1.0).max(1.0);
        let gram_inv_diag: DVector<f64> = {
            let identity: DMatrix<f64> = DMatrix::identity(d, d);
            let inv = chol.solve(&identity);
            DVector::from_fn(d, |i, _| inv[(i, i)].max(0.0))
        };
        let std_error: DMatrix<f64> = DMatrix::from_fn(m, d, |k, j| {
            ((resid_ss[k] / dof) * gram_inv_diag[j]).sqrt()
        });
        Ok(JacobianEstimate { jacobian, std_error, samples: n })
    } else {
        let b = match baseline {
            BaselinePolicy::Zero => DVector::zeros(m),
            BaselinePolicy::NominalValue => f(x).map_err(|message| EstimatorError::Evaluator {
                index: usize::MAX,
                message,
            })?,
        };
        let mut acc = Welford::new(m, d);
        for (w, v) in &pairs {
            let s = noise.score(w);
            let term = DMatrix::from_fn(m, d, |k, j| (v[k] - b[k]) * s[j]);
            acc.push(&term);
        }
        Ok(JacobianEstimate { jacobian: acc.mean.clone(), std_error: acc.std_error(), samples: n })
    }
}
