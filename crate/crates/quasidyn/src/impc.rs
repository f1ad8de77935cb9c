//! Iterative MPC over locally affine models.
//!
//! The optimizer alternates between (i) building time-varying affine models
//! of the step map along the nominal trajectory with a configurable
//! linearization scheme, and (ii) an inner sweep that at each step `j`
//! solves a receding-horizon QP over the remaining steps and pushes the
//! first optimal input through the exact dynamics. Nominal trajectories are
//! therefore always dynamically consistent under the hard contact model, no
//! matter which smoothing produced the models. Between outer iterations the
//! smoothing is annealed (barrier weight up, noise scale down).

use crate::dynamics::{step_exact, DynamicsError, LocalModel, StepResult, SystemModel};
use crate::rng::derive_seed;
use crate::smoothing::{smoothed_linear_model, SchemeError, SmoothingConfig};
use crate::solver::{solve_qp, InequalityRows, SolverError, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImpcError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("MPC subproblem infeasible at step {step}")]
    Infeasible { step: usize },
    #[error("dynamics failed at step {step}: {source}")]
    Dynamics { step: usize, source: DynamicsError },
    #[error("linearization failed at step {step}: {source}")]
    Scheme { step: usize, source: SchemeError },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid config: {0}")]
    Config(String),
}

fn default_horizon() -> usize {
    10
}
fn default_u_trust() -> f64 {
    0.2
}
fn default_x_trust() -> f64 {
    1.0
}
fn default_kappa_anneal() -> f64 {
    5.0
}
fn default_sigma_anneal() -> f64 {
    0.7
}
fn default_max_outer() -> usize {
    20
}
fn default_cost_tol() -> f64 {
    1e-3
}

/// Trajectory optimizer parameters. Weight vectors left empty fall back to
/// ones (stage and terminal state) and `1e-2` (inputs).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpcConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub q_weights: Vec<f64>,
    #[serde(default)]
    pub r_weights: Vec<f64>,
    #[serde(default)]
    pub terminal_weights: Vec<f64>,
    #[serde(default = "default_u_trust")]
    pub u_trust: f64,
    #[serde(default = "default_x_trust")]
    pub x_trust: f64,
    /// Barrier weight multiplier per outer iteration (analytic scheme).
    #[serde(default = "default_kappa_anneal")]
    pub kappa_anneal: f64,
    /// Noise scale multiplier per outer iteration (randomized schemes).
    #[serde(default = "default_sigma_anneal")]
    pub sigma_anneal: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Relative cost-decrease threshold ending the outer loop.
    #[serde(default = "default_cost_tol")]
    pub cost_tol: f64,
}

impl Default for ImpcConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ImpcConfig {
    pub fn validate(&self) -> Result<(), ImpcError> {
        if self.horizon == 0 {
            return Err(ImpcError::Config("horizon must be at least 1".into()));
        }
        let nonneg = |v: &[f64]| v.iter().all(|&w| w >= 0.0);
        if !nonneg(&self.q_weights) || !nonneg(&self.r_weights) || !nonneg(&self.terminal_weights)
        {
            return Err(ImpcError::Config("cost weights must be nonnegative".into()));
        }
        if self.u_trust <= 0.0 || self.x_trust <= 0.0 {
            return Err(ImpcError::Config("trust radii must be positive".into()));
        }
        if self.kappa_anneal <= 1.0 {
            return Err(ImpcError::Config("kappa anneal factor must exceed 1".into()));
        }
        if self.sigma_anneal <= 0.0 || self.sigma_anneal > 1.0 {
            return Err(ImpcError::Config("sigma anneal factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-coordinate cost weights resolved against a model.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub stage_q: DVector<f64>,
    pub stage_r: DVector<f64>,
    pub terminal_q: DVector<f64>,
}

impl CostWeights {
    pub fn resolve(cfg: &ImpcConfig, model: &SystemModel) -> Result<Self, ImpcError> {
        let n_q = model.n_q();
        let fill = |v: &[f64], n: usize, def: f64, what: &str| -> Result<DVector<f64>, ImpcError> {
            if v.is_empty() {
                Ok(DVector::from_element(n, def))
            } else if v.len() == n {
                Ok(DVector::from_vec(v.to_vec()))
            } else {
                Err(ImpcError::LengthMismatch(format!(
                    "{what} has {} entries, expected {n}",
                    v.len()
                )))
            }
        };
        let stage_q = fill(&cfg.q_weights, n_q, 1.0, "q_weights")?;
        let stage_r = fill(&cfg.r_weights, model.n_a, 1e-2, "r_weights")?;
        let terminal_q = if cfg.terminal_weights.is_empty() {
            &stage_q * 10.0
        } else {
            fill(&cfg.terminal_weights, n_q, 1.0, "terminal_weights")?
        };
        Ok(CostWeights { stage_q, stage_r, terminal_q })
    }
}

/// Optimized trajectory: inputs, the exact-dynamics rollout they induce,
/// and the outer-iteration cost history.
#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost_history: Vec<f64>,
    pub best_cost: f64,
    pub outer_iterations: usize,
    /// Wall-clock seconds per outer iteration (diagnostic only).
    pub timings_s: Vec<f64>,
}

/// Roll inputs through the exact dynamics from `x0`.
pub fn rollout(
    model: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    h: f64,
) -> Result<Vec<DVector<f64>>, ImpcError> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (t, u) in inputs.iter().enumerate() {
        let r: StepResult = step_exact(model, states.last().unwrap(), u, h)
            .map_err(|source| ImpcError::Dynamics { step: t, source })?;
        states.push(r.q_next);
    }
    Ok(states)
}

/// Quadratic tracking cost
/// `|x_T - ref_T|_QT^2 + sum_t (|x_t - ref_t|_Q^2 + |u_t|_R^2)`.
pub fn trajectory_cost(
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    references: &[DVector<f64>],
    weights: &CostWeights,
) -> Result<f64, ImpcError> {
    let t_end = states.len().checked_sub(1).ok_or_else(|| {
        ImpcError::LengthMismatch("need at least one state".into())
    })?;
    if inputs.len() != t_end {
        return Err(ImpcError::LengthMismatch(format!(
            "{} inputs for {} steps",
            inputs.len(),
            t_end
        )));
    }
    if references.len() != states.len() {
        return Err(ImpcError::LengthMismatch(format!(
            "{} references for {} states",
            references.len(),
            states.len()
        )));
    }
    let mut cost = 0.0;
    for t in 0..t_end {
        let dx = &states[t] - &references[t];
        cost += dx.dot(&dx.component_mul(&weights.stage_q));
        cost += inputs[t].dot(&inputs[t].component_mul(&weights.stage_r));
    }
    let dx = &states[t_end] - &references[t_end];
    cost += dx.dot(&dx.component_mul(&weights.terminal_q));
    Ok(cost)
}

/// Receding-horizon QP data shared by the inner sweep of one outer
/// iteration: fixed models and nominals, varying start index and state.
pub struct MpcContext<'a> {
    pub model: &'a SystemModel,
    pub models: &'a [LocalModel],
    pub nominal_states: &'a [DVector<f64>],
    pub nominal_inputs: &'a [DVector<f64>],
    pub references: &'a [DVector<f64>],
    pub weights: &'a CostWeights,
    pub u_trust: f64,
    pub x_trust: f64,
}

/// Solution of one truncated MPC problem.
pub struct MpcSolution {
    pub first_input: DVector<f64>,
    pub planned_inputs: Vec<DVector<f64>>,
    pub planned_states: Vec<DVector<f64>>,
}

/// Solve the trajectory QP on steps `j..T` with the state pinned at `x_j`,
/// by condensing the affine dynamics into the input variables.
pub fn mpc_qp(ctx: &MpcContext, j: usize, x_j: &DVector<f64>) -> Result<MpcSolution, ImpcError> {
    let horizon = ctx.models.len();
    if j >= horizon {
        return Err(ImpcError::LengthMismatch(format!("start index {j} beyond horizon {horizon}")));
    }
    let n_q = ctx.model.n_q();
    let n_a = ctx.model.n_a;
    let steps = horizon - j;
    let dim = steps * n_a;

    // Forward maps x_t = s[t] * U + r[t] for t = j..=T.
    let mut s_maps: Vec<DMatrix<f64>> = Vec::with_capacity(steps + 1);
    let mut r_offs: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    s_maps.push(DMatrix::zeros(n_q, dim));
    r_offs.push(x_j.clone());
    for (k, t) in (j..horizon).enumerate() {
        let lm = &ctx.models[t];
        let d_t = &lm.c - &lm.a * &lm.q_nominal - &lm.b * &lm.u_nominal;
        let mut s_next = &lm.a * &s_maps[k];
        let mut block = s_next.view_mut((0, k * n_a), (n_q, n_a));
        block += &lm.b;
        let r_next = &lm.a * &r_offs[k] + d_t;
        s_maps.push(s_next);
        r_offs.push(r_next);
    }

    // Condensed quadratic cost over U.
    let mut quad = DMatrix::zeros(dim, dim);
    let mut lin = DVector::zeros(dim);
    for k in 1..=steps {
        let t = j + k;
        let w = if t == horizon { &ctx.weights.terminal_q } else { &ctx.weights.stage_q };
        let sw = DMatrix::from_fn(n_q, dim, |r, c| s_maps[k][(r, c)] * w[r]);
        quad += s_maps[k].transpose() * &sw;
        let err = &r_offs[k] - &ctx.references[t];
        lin += s_maps[k].transpose() * err.component_mul(w);
    }
    for k in 0..steps {
        for a in 0..n_a {
            quad[(k * n_a + a, k * n_a + a)] += ctx.weights.stage_r[a];
        }
    }
    quad *= 2.0;
    lin *= 2.0;
    // Tiny ridge keeps the condensed problem positive definite when both
    // R and the reachable-state weights vanish along some direction.
    let ridge = 1e-10 * (1.0 + quad.trace() / dim as f64);
    for i in 0..dim {
        quad[(i, i)] += ridge;
    }

    // Trust regions: boxes on inputs, and on states through the maps.
    let mut coeffs_rows: Vec<DVector<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for k in 0..steps {
        let t = j + k;
        for a in 0..n_a {
            let mut row = DVector::zeros(dim);
            row[k * n_a + a] = 1.0;
            let nominal = ctx.nominal_inputs[t][a];
            // u <= nominal + trust  and  u >= nominal - trust.
            coeffs_rows.push(-row.clone());
            offsets.push(ctx.u_trust + nominal);
            coeffs_rows.push(row);
            offsets.push(ctx.u_trust - nominal);
        }
    }
    for k in 1..steps {
        let t = j + k;
        for r in 0..n_q {
            let row = s_maps[k].row(r).transpose();
            let base = r_offs[k][r] - ctx.nominal_states[t][r];
            // |x_t - nominal| <= x_trust.
            coeffs_rows.push(-row.clone());
            offsets.push(ctx.x_trust - base);
            coeffs_rows.push(row);
            offsets.push(ctx.x_trust + base);
        }
    }
    let mut coeffs = DMatrix::zeros(coeffs_rows.len(), dim);
    for (i, r) in coeffs_rows.iter().enumerate() {
        coeffs.row_mut(i).copy_from(&r.transpose());
    }
    let rows = InequalityRows { coeffs, offsets: DVector::from_vec(offsets) };

    let sol = solve_qp(&quad, &lin, &rows, &SolverOptions::default()).map_err(|e| match e {
        SolverError::NoFeasibleStart { .. } => ImpcError::Infeasible { step: j },
        other => ImpcError::Solver(other),
    })?;

    let planned_inputs: Vec<DVector<f64>> =
        (0..steps).map(|k| sol.z.rows(k * n_a, n_a).into_owned()).collect();
    let planned_states: Vec<DVector<f64>> =
        (0..=steps).map(|k| &s_maps[k] * &sol.z + &r_offs[k]).collect();
    Ok(MpcSolution { first_input: planned_inputs[0].clone(), planned_inputs, planned_states })
}

/// Smoothing config annealed to outer iteration `outer`.
fn annealed(smoothing: &SmoothingConfig, cfg: &ImpcConfig, outer: usize) -> SmoothingConfig {
    let mut s = smoothing.clone();
    let p = outer as i32;
    s.kappa = smoothing.kappa * cfg.kappa_anneal.powi(p);
    let shrink = cfg.sigma_anneal.powi(p);
    s.noise.scale_u = smoothing.noise.scale_u * shrink;
    s.noise.scale_q = Some(smoothing.noise.scale_q() * shrink);
    s
}

/// Run the iterative MPC loop from `x0` with the given initial inputs.
///
/// Each outer iteration rebuilds the affine models along the nominal plan
/// (in parallel across steps), then sweeps `j = 0..T` solving the truncated
/// QP and applying the first input through the exact dynamics. The returned
/// trajectory is the best-cost nominal encountered.
pub fn impc_run(
    model: &SystemModel,
    x0: &DVector<f64>,
    initial_inputs: &[DVector<f64>],
    references: &[DVector<f64>],
    h: f64,
    cfg: &ImpcConfig,
    smoothing: &SmoothingConfig,
) -> Result<TrajectoryResult, ImpcError> {
    cfg.validate()?;
    let horizon = cfg.horizon;
    if initial_inputs.len() != horizon {
        return Err(ImpcError::LengthMismatch(format!(
            "{} initial inputs for horizon {horizon}",
            initial_inputs.len()
        )));
    }
    if references.len() != horizon + 1 {
        return Err(ImpcError::LengthMismatch(format!(
            "{} references for horizon {horizon}",
            references.len()
        )));
    }
    let weights = CostWeights::resolve(cfg, model)?;

    let mut inputs: Vec<DVector<f64>> = initial_inputs.to_vec();
    let mut states = rollout(model, x0, &inputs, h)?;
    let mut cost = trajectory_cost(&states, &inputs, references, &weights)?;
    let mut history = vec![cost];
    let mut timings = Vec::new();
    let mut best = (cost, inputs.clone(), states.clone());

    let mut outer_done = 0;
    for outer in 0..cfg.max_outer {
        let started = std::time::Instant::now();
        let scheme_cfg = annealed(smoothing, cfg, outer);
        let models: Vec<LocalModel> = (0..horizon)
            .into_par_iter()
            .map(|t| {
                let cfg_t = scheme_cfg.with_seed(derive_seed(
                    scheme_cfg.seed,
                    "impc-lin",
                    (outer * horizon + t) as u64,
                ));
                smoothed_linear_model(model, &states[t], &inputs[t], h, &cfg_t)
                    .map_err(|source| ImpcError::Scheme { step: t, source })
            })
            .collect::<Result<_, _>>()?;

        let nominal_states = states.clone();
        let nominal_inputs = inputs.clone();
        let ctx = MpcContext {
            model,
            models: &models,
            nominal_states: &nominal_states,
            nominal_inputs: &nominal_inputs,
            references,
            weights: &weights,
            u_trust: cfg.u_trust,
            x_trust: cfg.x_trust,
        };
        for j in 0..horizon {
            let sol = mpc_qp(&ctx, j, &states[j])?;
            inputs[j] = sol.first_input;
            let r = step_exact(model, &states[j], &inputs[j], h)
                .map_err(|source| ImpcError::Dynamics { step: j, source })?;
            states[j + 1] = r.q_next;
        }

        let prev = cost;
        cost = trajectory_cost(&states, &inputs, references, &weights)?;
        history.push(cost);
        timings.push(started.elapsed().as_secs_f64());
        outer_done = outer + 1;
        if cost < best.0 {
            best = (cost, inputs.clone(), states.clone());
        }
        if (prev - cost).abs() < cfg.cost_tol * prev.abs().max(1.0) {
            break;
        }
    }

    Ok(TrajectoryResult {
        inputs: best.1,
        states: best.2,
        cost_history: history,
        best_cost: best.0,
        outer_iterations: outer_done,
        timings_s: timings,
    })
}
