//! Newton log-barrier engine for small dense convex QPs.
//!
//! One engine serves two jobs:
//!
//! - [`minimize_barrier`]: minimize `0.5 z'Qz + b'z - (1/kappa) sum_i log(s_i)`
//!   with `s = Cz + d`, at a fixed barrier weight. This is the smoothed
//!   dynamics problem and also one stage of the path-following loop.
//! - [`solve_qp`]: solve `min 0.5 z'Qz + b'z  s.t.  Cz + d >= 0` by
//!   path-following (`kappa <- 10 kappa` until the duality-gap proxy
//!   `rows/kappa` is small), followed by an active-set polish that solves the
//!   equality-constrained KKT system exactly.
//!
//! Problems are tiny (tens of variables, at most a few hundred rows), so
//! everything is dense and factored from scratch each iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no strictly feasible starting point found (residual {residual:.3e})")]
    NoFeasibleStart { residual: f64 },
    #[error("newton iteration failed to converge: {reason} (residual {residual:.3e})")]
    NewtonFailure { reason: String, residual: f64 },
    #[error("cost matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Linear inequality rows `coeffs * z + offsets >= 0`.
#[derive(Debug, Clone)]
pub struct InequalityRows {
    pub coeffs: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl InequalityRows {
    pub fn empty(n: usize) -> Self {
        InequalityRows { coeffs: DMatrix::zeros(0, n), offsets: DVector::zeros(0) }
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.coeffs * z + &self.offsets
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Infinity-norm tolerance on the barrier gradient, scaled by problem size.
    pub grad_tol: f64,
    /// Also accept once the Newton step shrinks below this (relative) size;
    /// the remaining solution error is of the order of the step itself.
    pub step_tol: f64,
    pub max_newton_iters: usize,
    /// Initial barrier weight for path following.
    pub kappa_initial: f64,
    /// Multiplicative barrier growth per stage.
    pub kappa_growth: f64,
    /// Stop path following once rows/kappa falls below this gap.
    pub gap_tol: f64,
    /// Armijo slope fraction for backtracking.
    pub armijo_c: f64,
    /// Phase-I target slack as a fraction of typical offsets.
    pub phase1_target: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grad_tol: 1e-11,
            step_tol: 1e-12,
            max_newton_iters: 100,
            kappa_initial: 100.0,
            kappa_growth: 10.0,
            gap_tol: 1e-8,
            armijo_c: 1e-4,
            phase1_target: 0.05,
        }
    }
}

/// Solution of a fixed-weight barrier problem.
#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub z: DVector<f64>,
    /// Row multipliers `1/(kappa * slack)`.
    pub lambda: DVector<f64>,
    pub slacks: DVector<f64>,
    pub newton_iters: usize,
    /// Infinity norm of the barrier gradient at the solution.
    pub residual: f64,
}

/// Solution of an inequality-constrained QP.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub slacks: DVector<f64>,
    pub active: Vec<bool>,
    pub newton_iters: usize,
    /// Infinity norm of the stationarity residual `Qz + b - C' lambda`.
    pub stationarity: f64,
    /// Largest `|lambda_i * slack_i|`.
    pub complementarity: f64,
    /// True when the active-set polish succeeded.
    pub polished: bool,
}

fn barrier_value(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    rows: &InequalityRows,
    kappa: f64,
    z: &DVector<f64>,
) -> f64 {
    let s = rows.slacks(z);
    if s.iter().any(|&v| v <= 0.0) {
        return f64::INFINITY;
    }
    let quadratic = 0.5 * z.dot(&(quad * z)) + lin.dot(z);
    quadratic - s.iter().map(|v| v.ln()).sum::<f64>() / kappa
}

fn cholesky_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = h.clone().cholesky()?;
    Some(chol.solve(rhs))
}

/// Gauss-Newton push along violated constraint normals until all slacks
/// reach `target`; halves the target when it proves unreachable.
pub fn feasible_start(
    rows: &InequalityRows,
    n: usize,
    target: f64,
) -> Result<DVector<f64>, SolverError> {
    let mut z = DVector::zeros(n);
    if rows.is_empty() {
        return Ok(z);
    }
    let mut target = target;
    for _ in 0..24 {
        let mut converged = false;
        for _ in 0..80 {
            let s = rows.slacks(&z);
            let viol: Vec<usize> =
                (0..rows.len()).filter(|&i| s[i] < target).collect();
            if viol.is_empty() {
                converged = true;
                break;
            }
            let m = viol.len();
            let mut cv = DMatrix::zeros(m, n);
            let mut r = DVector::zeros(m);
            for (k, &i) in viol.iter().enumerate() {
                cv.row_mut(k).copy_from(&rows.coeffs.row(i));
                r[k] = target - s[i];
            }
            let gram = cv.transpose() * &cv;
            let damp = 1e-10 * (1.0 + gram.trace());
            let lhs = gram + DMatrix::identity(n, n) * damp;
            let rhs = cv.transpose() * &r;
            let Some(step) = cholesky_solve(&lhs, &rhs) else { break };
            // Backtrack on the violation sum-of-squares.
            let value = |z: &DVector<f64>| -> f64 {
                let s = rows.slacks(z);
                s.iter().map(|&v| (target - v).max(0.0).powi(2)).sum()
            };
            let v0 = value(&z);
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial = &z + alpha * &step;
                if value(&trial) < v0 * (1.0 - 1e-4 * alpha) {
                    z = trial;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if converged {
            return Ok(z);
        }
        target *= 0.25;
        if target < 1e-12 {
            break;
        }
    }
    let worst = rows.slacks(&z).min();
    Err(SolverError::NoFeasibleStart { residual: -worst })
}

/// Damped Newton minimization of the barrier-augmented quadratic at fixed
/// `kappa`, starting from a strictly feasible `z0`.
pub fn minimize_barrier(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    rows: &InequalityRows,
    kappa: f64,
    z0: DVector<f64>,
    opts: &SolverOptions,
) -> Result<BarrierSolution, SolverError> {
    let n = lin.len();
    let mut z = z0;
    debug_assert!(rows.slacks(&z).iter().all(|&s| s > 0.0), "start must be interior");
    let scale = 1.0 + lin.amax();
    let tol = opts.grad_tol * scale;
    let mut iters = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    for _ in 0..opts.max_newton_iters {
        let s = rows.slacks(&z);
        let mut grad = quad * &z + lin;
        let mut hess = quad.clone();
        for i in 0..rows.len() {
            let ci = rows.coeffs.row(i);
            let w = 1.0 / (kappa * s[i]);
            grad -= w * ci.transpose();
            let h = w / s[i];
            hess.ger(h, &ci.transpose(), &ci.transpose(), 1.0);
        }
        grad_norm = grad.amax();
        if grad_norm <= tol {
            converged = true;
            break;
        }
        iters += 1;
        let step = match cholesky_solve(&hess, &(-&grad)) {
            Some(s) => s,
            None => {
                // Barely positive definite (e.g. rows empty and Q nearly
                // singular): add a small diagonal and retry once.
                let jitter = 1e-14 * (1.0 + hess.trace());
                let hj = hess + DMatrix::identity(n, n) * jitter;
                cholesky_solve(&hj, &(-&grad)).ok_or(SolverError::NotPositiveDefinite)?
            }
        };
        // Largest step keeping all slacks strictly positive.
        let cdelta = &rows.coeffs * &step;
        let mut alpha_max: f64 = 1.0;
        for i in 0..rows.len() {
            if cdelta[i] < 0.0 {
                alpha_max = alpha_max.min(0.99 * (-s[i] / cdelta[i]));
            }
        }
        // Newton step negligible: take it and stop. The remaining solution
        // error is of the order of the step length.
        if step.amax() <= opts.step_tol * (1.0 + z.amax()) {
            z += alpha_max.min(1.0) * step;
            converged = true;
            break;
        }
        let f0 = barrier_value(quad, lin, rows, kappa, &z);
        let slope = grad.dot(&step);
        // Local phase: once the predicted decrease is below the resolution
        // of the objective value, backtracking can only deadlock on float
        // noise. Take the (feasibility-clipped) Newton step as is.
        if (slope * alpha_max).abs() < 1e-15 * (1.0 + f0.abs()) {
            z += alpha_max * &step;
            continue;
        }
        let mut alpha = alpha_max;
        let mut accepted = false;
        for _ in 0..50 {
            let trial = &z + alpha * &step;
            let ft = barrier_value(quad, lin, rows, kappa, &trial);
            if ft <= f0 + opts.armijo_c * alpha * slope {
                z = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // The objective cannot be improved along the Newton direction:
            // we are at numerical stationarity.
            converged = grad_norm <= 1e3 * tol;
            break;
        }
    }
    if !converged {
        return Err(SolverError::NewtonFailure {
            reason: format!("gradient {grad_norm:.3e} above tolerance after {iters} iterations"),
            residual: grad_norm,
        });
    }
    let slacks = rows.slacks(&z);
    let lambda = DVector::from_fn(rows.len(), |i, _| 1.0 / (kappa * slacks[i]));
    Ok(BarrierSolution { z, lambda, slacks, newton_iters: iters, residual: grad_norm })
}

fn unconstrained_minimum(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
) -> Result<DVector<f64>, SolverError> {
    cholesky_solve(quad, &(-lin)).ok_or(SolverError::NotPositiveDefinite)
}

/// Active-set polish with refinement: starting from a guessed active set,
/// repeatedly solve the equality-constrained KKT system, dropping rows with
/// negative multipliers and adding violated rows, until clean or the
/// iteration budget runs out.
fn polish_with_refinement(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    rows: &InequalityRows,
    initial_active: Vec<usize>,
    offset_scale: f64,
) -> Option<(DVector<f64>, DVector<f64>, Vec<bool>)> {
    let mut active = initial_active;
    active.sort_unstable();
    for _ in 0..(2 * rows.len() + 4) {
        let (z, lam) = kkt_polish(quad, lin, rows, &active)?;
        let lam_scale = 1.0 + lam.amax();
        if let Some((k, _)) = lam
            .iter()
            .enumerate()
            .filter(|(_, &l)| l < -1e-9 * lam_scale)
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite multipliers"))
        {
            active.remove(k);
            continue;
        }
        let slacks = rows.slacks(&z);
        let worst = (0..rows.len())
            .filter(|i| !active.contains(i))
            .map(|i| (i, slacks[i]))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite slacks"));
        if let Some((i, s)) = worst {
            if s < -1e-10 * offset_scale {
                active.push(i);
                active.sort_unstable();
                continue;
            }
        }
        let mut lambda = DVector::zeros(rows.len());
        let mut mask = vec![false; rows.len()];
        for (k, &i) in active.iter().enumerate() {
            lambda[i] = lam[k].max(0.0);
            mask[i] = true;
        }
        return Some((z, lambda, mask));
    }
    None
}

/// Solve the equality-constrained KKT system for a fixed active set.
/// Returns `(z, lambda_active)` or `None` when the system is singular.
fn kkt_polish(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    rows: &InequalityRows,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = lin.len();
    let m = active.len();
    if m == 0 {
        return cholesky_solve(quad, &(-lin)).map(|z| (z, DVector::zeros(0)));
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(quad);
    for (k, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + k)] = -rows.coeffs[(i, j)];
            kkt[(n + k, j)] = rows.coeffs[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-lin));
    for (k, &i) in active.iter().enumerate() {
        rhs[n + k] = -rows.offsets[i];
    }
    let lu = kkt.full_piv_lu();
    let sol = lu.solve(&rhs)?;
    let z = sol.rows(0, n).into_owned();
    let lambda = sol.rows(n, m).into_owned();
    Some((z, lambda))
}

/// Inequality-constrained QP via path following plus active-set polish.
pub fn solve_qp(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    rows: &InequalityRows,
    opts: &SolverOptions,
) -> Result<QpSolution, SolverError> {
    let n = lin.len();
    if rows.is_empty() {
        let z = unconstrained_minimum(quad, lin)?;
        let stationarity = (quad * &z + lin).amax();
        return Ok(QpSolution {
            z,
            lambda: DVector::zeros(0),
            slacks: DVector::zeros(0),
            active: Vec::new(),
            newton_iters: 0,
            stationarity,
            complementarity: 0.0,
            polished: true,
        });
    }
    let offset_scale = 1.0 + rows.offsets.amax();
    let mut z = feasible_start(rows, n, opts.phase1_target * offset_scale)?;
    // Intermediate central-path points only need to warm-start the next
    // stage; the polish below restores full accuracy.
    let stage_opts = SolverOptions { grad_tol: opts.grad_tol.max(1e-9), ..opts.clone() };
    let mut kappa = opts.kappa_initial;
    let mut total_iters = 0;
    let mut last: Option<BarrierSolution> = None;
    let mut stage_error = None;
    for _ in 0..64 {
        match minimize_barrier(quad, lin, rows, kappa, z.clone(), &stage_opts) {
            Ok(sol) => {
                total_iters += sol.newton_iters;
                z = sol.z.clone();
                let gap = rows.len() as f64 / kappa;
                last = Some(sol);
                if gap <= opts.gap_tol {
                    break;
                }
                kappa *= opts.kappa_growth;
            }
            Err(e) => {
                // A late, ill-conditioned stage may stall; the polish below
                // can still certify the solution from the last good iterate.
                stage_error = Some(e);
                break;
            }
        }
    }
    let sol = match last {
        Some(sol) => sol,
        None => {
            return Err(stage_error.expect("first barrier stage either solves or errors"))
        }
    };

    // Classify rows: on the central path active rows have slack of order
    // 1/(kappa lambda) while inactive rows keep an O(1) slack.
    let threshold = 1.0 / kappa.sqrt();
    let active_guess: Vec<usize> =
        (0..rows.len()).filter(|&i| sol.slacks[i] < threshold).collect();

    if let Some((zp, lambda, active)) =
        polish_with_refinement(quad, lin, rows, active_guess, offset_scale)
    {
        let slacks = rows.slacks(&zp);
        let stationarity = (quad * &zp + lin - rows.coeffs.transpose() * &lambda).amax();
        let complementarity = (0..rows.len())
            .map(|i| (lambda[i] * slacks[i]).abs())
            .fold(0.0, f64::max);
        return Ok(QpSolution {
            z: zp,
            lambda,
            slacks,
            active,
            newton_iters: total_iters,
            stationarity,
            complementarity,
            polished: true,
        });
    }
    if let Some(e) = stage_error {
        return Err(e);
    }

    // Polish failed (degenerate or redundant active rows): report the
    // interior iterate with its central-path classification.
    let active = (0..rows.len()).map(|i| sol.slacks[i] < threshold).collect();
    let stationarity =
        (quad * &sol.z + lin - rows.coeffs.transpose() * &sol.lambda).amax();
    let complementarity = (0..rows.len())
        .map(|i| (sol.lambda[i] * sol.slacks[i]).abs())
        .fold(0.0, f64::max);
    Ok(QpSolution {
        z: sol.z,
        lambda: sol.lambda,
        slacks: sol.slacks,
        active,
        newton_iters: total_iters,
        stationarity,
        complementarity,
        polished: false,
    })
}
