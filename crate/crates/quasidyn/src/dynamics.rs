//! Convex quasi-dynamic contact stepping for planar systems.
//!
//! One simulation step solves
//!
//! ```text
//! min_dq  0.5 dq' Q dq + b' dq
//! s.t.    (Jn_i + mu_i Jt_i) dq + phi_i >= 0     (per contact, frictional)
//!         (Jn_i - mu_i Jt_i) dq + phi_i >= 0
//! ```
//!
//! with `Q = blkdiag(eps M_u / h, h K_a)` and
//! `b = -h [tau_u; K_a (u - q_a) + tau_a]`. Frictionless contacts contribute
//! a single normal row. The exact step solves the QP; the smoothed step
//! replaces the constraints with log-barrier terms of weight `1/kappa`,
//! which keeps the step differentiable and lets constraints act at a
//! distance. Starting from a penetrating configuration is legal: the step
//! then acts as a projection onto the linearized feasible set.
//!
//! Locally affine models `(A, B, c)` come from differentiating the
//! optimality conditions: the stationarity condition in smoothed mode, the
//! active-set KKT system in exact mode. Derivatives of the contact rows with
//! respect to the configuration are obtained by central finite differences
//! of the geometry data; everything downstream of the solve is analytic.

use crate::geometry::{contact_frame, pair_candidates, Body, ContactFrame, GeometryError, Pose2};
use crate::solver::{
    feasible_start, minimize_barrier, solve_qp, InequalityRows, SolverError, SolverOptions,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate active set: row {row} is weakly active (zero multiplier at zero slack)")]
    DegenerateActiveSet { row: usize },
    #[error("active set could not be certified; exact-mode derivatives unavailable")]
    ActiveSetUncertain,
    #[error("active contact rows are rank deficient")]
    RankDeficient,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Step flavor: hard constraints or log-barrier smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Exact,
    Smoothed { kappa: f64 },
}

/// One contact pair declared on a system (shape on body A vs shape on body B).
#[derive(Debug, Clone)]
pub struct ContactPairDef {
    pub body_a: usize,
    pub geom_a: usize,
    pub body_b: usize,
    pub geom_b: usize,
    pub mu: f64,
}

/// Immutable description of a planar quasi-dynamic system.
///
/// The configuration is ordered unactuated first: `q = (q_u, q_a)` with
/// `n_u + n_a` coordinates. Robots are position-commanded springs with
/// diagonal stiffness `k_a`; objects carry the constant planar mass matrix
/// `m_u`, regularized by `eps_reg` in the step cost.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    pub n_u: usize,
    pub n_a: usize,
    pub m_u: DMatrix<f64>,
    pub k_a: DVector<f64>,
    pub tau_u: DVector<f64>,
    pub tau_a: DVector<f64>,
    pub eps_reg: f64,
    pub bodies: Vec<Body>,
    pub pairs: Vec<ContactPairDef>,
    /// Contacts with a gap above this margin are not enumerated.
    pub margin: f64,
    /// Per-coordinate `(lower, upper)` bounds, `n_u + n_a` entries.
    pub joint_limits: Vec<(f64, f64)>,
    /// Which unactuated coordinates are angles (wrapped by planners).
    pub angular_u: Vec<bool>,
}

impl SystemModel {
    pub fn n_q(&self) -> usize {
        self.n_u + self.n_a
    }

    /// Split a configuration into (object, robot) parts.
    pub fn split(&self, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (q.rows(0, self.n_u).into_owned(), q.rows(self.n_u, self.n_a).into_owned())
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fail = |m: String| Err(DynamicsError::InvalidModel(m));
        if self.m_u.nrows() != self.n_u || self.m_u.ncols() != self.n_u {
            return fail("mass matrix dimension mismatch".into());
        }
        if self.k_a.len() != self.n_a {
            return fail("stiffness dimension mismatch".into());
        }
        if self.k_a.iter().any(|&k| k <= 0.0) {
            return fail("stiffness entries must be positive".into());
        }
        if self.eps_reg < 0.0 {
            return fail("eps_reg must be nonnegative".into());
        }
        if self.eps_reg == 0.0 && self.n_u > 0 {
            return fail("eps_reg = 0 with unactuated DOFs admits multiple solutions".into());
        }
        if self.n_u > 0 {
            let sym = (&self.m_u - self.m_u.transpose()).amax();
            if sym > 1e-9 {
                return fail("mass matrix must be symmetric".into());
            }
            if self.m_u.clone().cholesky().is_none() {
                return fail("mass matrix must be positive definite".into());
            }
        }
        if self.joint_limits.len() != self.n_q() {
            return fail("joint limit count must equal DOF count".into());
        }
        if self.angular_u.len() != self.n_u {
            return fail("angular flag count must equal unactuated DOF count".into());
        }
        for p in &self.pairs {
            if p.mu < 0.0 {
                return fail("friction coefficients must be nonnegative".into());
            }
            if p.body_a >= self.bodies.len() || p.body_b >= self.bodies.len() {
                return fail("contact pair references unknown body".into());
            }
        }
        for b in &self.bodies {
            for g in &b.geoms {
                g.validate()?;
            }
        }
        Ok(())
    }

    pub fn body_poses(&self, q: &DVector<f64>) -> Vec<Pose2> {
        self.bodies.iter().map(|b| b.kinematics.pose(q)).collect()
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(&v, &(lo, hi))| v >= lo - 1e-9 && v <= hi + 1e-9)
    }

    /// All contact candidates within the activation margin at `q`.
    pub fn contacts(&self, q: &DVector<f64>) -> Result<Vec<Contact>, DynamicsError> {
        let poses = self.body_poses(q);
        let mut out = Vec::new();
        for (pair_idx, p) in self.pairs.iter().enumerate() {
            let ga = &self.bodies[p.body_a].geoms[p.geom_a];
            let gb = &self.bodies[p.body_b].geoms[p.geom_b];
            for cand in pair_candidates(ga, &poses[p.body_a], gb, &poses[p.body_b])? {
                if cand.phi <= self.margin {
                    let frame = contact_frame(
                        &self.bodies[p.body_a],
                        &self.bodies[p.body_b],
                        q,
                        &cand,
                        p.mu,
                    );
                    out.push(Contact { pair: pair_idx, sub: cand.sub, frame });
                }
            }
        }
        Ok(out)
    }

    /// Re-evaluate a fixed contact selection at a (possibly perturbed) `q`.
    /// The selection keeps candidate identity stable, which matters when
    /// differentiating the contact rows.
    pub fn contacts_for(
        &self,
        selection: &[(usize, (usize, usize))],
        q: &DVector<f64>,
    ) -> Result<Vec<Contact>, DynamicsError> {
        let poses = self.body_poses(q);
        let mut out = Vec::with_capacity(selection.len());
        for &(pair_idx, sub) in selection {
            let p = &self.pairs[pair_idx];
            let ga = &self.bodies[p.body_a].geoms[p.geom_a];
            let gb = &self.bodies[p.body_b].geoms[p.geom_b];
            let cands = pair_candidates(ga, &poses[p.body_a], gb, &poses[p.body_b])?;
            let cand = cands
                .into_iter()
                .find(|c| c.sub == sub)
                .ok_or_else(|| DynamicsError::Dimension("contact selection out of range".into()))?;
            let frame =
                contact_frame(&self.bodies[p.body_a], &self.bodies[p.body_b], q, &cand, p.mu);
            out.push(Contact { pair: pair_idx, sub, frame });
        }
        Ok(out)
    }

    /// Smallest signed distance over all declared pairs (ignoring the margin).
    pub fn min_phi(&self, q: &DVector<f64>) -> Result<f64, DynamicsError> {
        let poses = self.body_poses(q);
        let mut min = f64::INFINITY;
        for p in &self.pairs {
            let ga = &self.bodies[p.body_a].geoms[p.geom_a];
            let gb = &self.bodies[p.body_b].geoms[p.geom_b];
            for cand in pair_candidates(ga, &poses[p.body_a], gb, &poses[p.body_b])? {
                min = min.min(cand.phi);
            }
        }
        Ok(min)
    }
}

/// One enumerated contact: pair index, sub-shape key and velocity rows.
#[derive(Debug, Clone)]
pub struct Contact {
    pub pair: usize,
    pub sub: (usize, usize),
    pub frame: ContactFrame,
}

/// Assembled step program data.
#[derive(Debug, Clone)]
pub struct QpData {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub rows: InequalityRows,
    pub contacts: Vec<Contact>,
    /// For each inequality row: contact index and friction branch
    /// (+1 / -1 for the frictional pair, 0 for a frictionless normal row).
    pub row_map: Vec<(usize, i8)>,
}

/// Cost matrix and vector of the step program at `(q, u, h)`.
fn cost_terms(model: &SystemModel, q: &DVector<f64>, u: &DVector<f64>, h: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n_q = model.n_q();
    let mut quad = DMatrix::zeros(n_q, n_q);
    quad.view_mut((0, 0), (model.n_u, model.n_u))
        .copy_from(&(&model.m_u * (model.eps_reg / h)));
    for j in 0..model.n_a {
        quad[(model.n_u + j, model.n_u + j)] = h * model.k_a[j];
    }
    let mut lin = DVector::zeros(n_q);
    for i in 0..model.n_u {
        lin[i] = -h * model.tau_u[i];
    }
    for j in 0..model.n_a {
        lin[model.n_u + j] =
            -h * (model.k_a[j] * (u[j] - q[model.n_u + j]) + model.tau_a[j]);
    }
    (quad, lin)
}

fn rows_from_contacts(contacts: &[Contact], n_q: usize) -> (InequalityRows, Vec<(usize, i8)>) {
    let mut coeffs_rows: Vec<DVector<f64>> = Vec::new();
    let mut offsets = Vec::new();
    let mut row_map = Vec::new();
    for (ci, c) in contacts.iter().enumerate() {
        let jn = &c.frame.jn;
        let phi = c.frame.candidate.phi;
        if c.frame.mu > 0.0 {
            let jt = &c.frame.jt;
            coeffs_rows.push((jn + c.frame.mu * jt).transpose());
            offsets.push(phi);
            row_map.push((ci, 1));
            coeffs_rows.push((jn - c.frame.mu * jt).transpose());
            offsets.push(phi);
            row_map.push((ci, -1));
        } else {
            coeffs_rows.push(jn.transpose());
            offsets.push(phi);
            row_map.push((ci, 0));
        }
    }
    let m = coeffs_rows.len();
    let mut coeffs = DMatrix::zeros(m, n_q);
    for (i, r) in coeffs_rows.iter().enumerate() {
        coeffs.row_mut(i).copy_from(&r.transpose());
    }
    (InequalityRows { coeffs, offsets: DVector::from_vec(offsets) }, row_map)
}

/// Assemble the step program at `(q, u)` with step size `h`.
pub fn assemble_qp(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<QpData, DynamicsError> {
    if q.len() != model.n_q() {
        return Err(DynamicsError::Dimension(format!(
            "q has {} entries, model has {} DOFs",
            q.len(),
            model.n_q()
        )));
    }
    if u.len() != model.n_a {
        return Err(DynamicsError::Dimension(format!(
            "u has {} entries, model has {} actuated DOFs",
            u.len(),
            model.n_a
        )));
    }
    if h <= 0.0 {
        return Err(DynamicsError::Dimension("step size must be positive".into()));
    }
    let (quad, lin) = cost_terms(model, q, u, h);
    let contacts = model.contacts(q)?;
    let (rows, row_map) = rows_from_contacts(&contacts, model.n_q());
    Ok(QpData { quad, lin, rows, contacts, row_map })
}

/// Normal/tangential impulse of one contact, recovered from row multipliers.
#[derive(Debug, Clone)]
pub struct ContactImpulse {
    pub pair: usize,
    pub sub: (usize, usize),
    pub normal: f64,
    pub tangential: f64,
}

/// Outcome of one dynamics step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub q_next: DVector<f64>,
    pub delta_q: DVector<f64>,
    pub impulses: Vec<ContactImpulse>,
    pub mode: StepMode,
    pub newton_iters: usize,
    /// Stationarity residual (exact) or barrier gradient norm (smoothed).
    pub residual: f64,
    /// Row-level multipliers, aligned with `QpData::row_map`.
    pub row_lambda: DVector<f64>,
    /// Active rows in exact mode (empty for smoothed steps).
    pub active_rows: Vec<bool>,
    pub contacts: Vec<Contact>,
}

fn impulses_from_rows(
    contacts: &[Contact],
    row_map: &[(usize, i8)],
    lambda: &DVector<f64>,
) -> Vec<ContactImpulse> {
    let mut out: Vec<ContactImpulse> = contacts
        .iter()
        .map(|c| ContactImpulse { pair: c.pair, sub: c.sub, normal: 0.0, tangential: 0.0 })
        .collect();
    for (row, &(ci, sign)) in row_map.iter().enumerate() {
        let l = lambda[row];
        match sign {
            0 => out[ci].normal += l,
            s => {
                out[ci].normal += l;
                out[ci].tangential += s as f64 * contacts[ci].frame.mu * l;
            }
        }
    }
    out
}

/// One exact quasi-dynamic step.
pub fn step_exact(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<StepResult, DynamicsError> {
    let qp = assemble_qp(model, q, u, h)?;
    let sol = solve_qp(&qp.quad, &qp.lin, &qp.rows, &SolverOptions::default())?;
    Ok(StepResult {
        q_next: q + &sol.z,
        delta_q: sol.z.clone(),
        impulses: impulses_from_rows(&qp.contacts, &qp.row_map, &sol.lambda),
        mode: StepMode::Exact,
        newton_iters: sol.newton_iters,
        residual: sol.stationarity,
        row_lambda: sol.lambda,
        active_rows: sol.active,
        contacts: qp.contacts,
    })
}

/// One log-barrier smoothed step at barrier weight `kappa`.
pub fn step_smoothed(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    kappa: f64,
) -> Result<StepResult, DynamicsError> {
    if kappa <= 0.0 {
        return Err(DynamicsError::Dimension("kappa must be positive".into()));
    }
    let qp = assemble_qp(model, q, u, h)?;
    let opts = SolverOptions::default();
    let z0 = feasible_start(&qp.rows, model.n_q(), opts.phase1_target * (1.0 + qp.rows.offsets.amax()))?;
    let sol = minimize_barrier(&qp.quad, &qp.lin, &qp.rows, kappa, z0, &opts)?;
    Ok(StepResult {
        q_next: q + &sol.z,
        delta_q: sol.z.clone(),
        impulses: impulses_from_rows(&qp.contacts, &qp.row_map, &sol.lambda),
        mode: StepMode::Smoothed { kappa },
        newton_iters: sol.newton_iters,
        residual: sol.residual,
        row_lambda: sol.lambda,
        active_rows: Vec::new(),
        contacts: qp.contacts,
    })
}

/// Convenience: next configuration under the given mode.
pub fn step(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    mode: StepMode,
) -> Result<StepResult, DynamicsError> {
    match mode {
        StepMode::Exact => step_exact(model, q, u, h),
        StepMode::Smoothed { kappa } => step_smoothed(model, q, u, h, kappa),
    }
}

/// Tag recording how a locally affine model was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelMode {
    Exact,
    Smoothed { kappa: f64 },
    RandomizedFirst { samples: usize },
    RandomizedZeroth { samples: usize },
}

/// Locally affine model `q+ ~ A (q - q_nom) + B (u - u_nom) + c`.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q_nominal: DVector<f64>,
    pub u_nominal: DVector<f64>,
    pub mode: ModelMode,
}

impl LocalModel {
    /// Predicted next configuration at `(q, u)`.
    pub fn predict(&self, q: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * (q - &self.q_nominal) + &self.b * (u - &self.u_nominal) + &self.c
    }

    /// Rows of `B` for the unactuated coordinates.
    pub fn b_object(&self, n_u: usize) -> DMatrix<f64> {
        self.b.rows(0, n_u).into_owned()
    }

    /// Unactuated part of the bias `c`.
    pub fn c_object(&self, n_u: usize) -> DVector<f64> {
        self.c.rows(0, n_u).into_owned()
    }
}

/// `d b / d u` (cost vector sensitivity to the command).
fn db_du(model: &SystemModel, h: f64) -> DMatrix<f64> {
    let n_q = model.n_q();
    let mut m = DMatrix::zeros(n_q, model.n_a);
    for j in 0..model.n_a {
        m[(model.n_u + j, j)] = -h * model.k_a[j];
    }
    m
}

/// `d b / d q` (only the actuated block is nonzero).
fn db_dq(model: &SystemModel, h: f64) -> DMatrix<f64> {
    let n_q = model.n_q();
    let mut m = DMatrix::zeros(n_q, n_q);
    for j in 0..model.n_a {
        m[(model.n_u + j, model.n_u + j)] = h * model.k_a[j];
    }
    m
}

/// Central finite differences of the contact row data with respect to `q`.
/// Returns per-coordinate derivatives of the row coefficient matrix and the
/// row offsets, for a fixed contact selection.
fn contact_row_derivatives(
    model: &SystemModel,
    selection: &[(usize, (usize, usize))],
    q: &DVector<f64>,
    n_rows: usize,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>), DynamicsError> {
    let n_q = model.n_q();
    let eps = 1e-6;
    let mut dc = Vec::with_capacity(n_q);
    let mut dphi = Vec::with_capacity(n_q);
    for j in 0..n_q {
        let mut qp = q.clone();
        qp[j] += eps;
        let mut qm = q.clone();
        qm[j] -= eps;
        let cp = model.contacts_for(selection, &qp)?;
        let cm = model.contacts_for(selection, &qm)?;
        let (rows_p, _) = rows_from_contacts(&cp, n_q);
        let (rows_m, _) = rows_from_contacts(&cm, n_q);
        if rows_p.len() != n_rows || rows_m.len() != n_rows {
            return Err(DynamicsError::Dimension("contact row count changed under perturbation".into()));
        }
        dc.push((rows_p.coeffs - rows_m.coeffs) / (2.0 * eps));
        dphi.push((rows_p.offsets - rows_m.offsets) / (2.0 * eps));
    }
    Ok((dc, dphi))
}

fn selection_of(contacts: &[Contact]) -> Vec<(usize, (usize, usize))> {
    contacts.iter().map(|c| (c.pair, c.sub)).collect()
}

/// Locally affine model of the step map at `(q, u)`.
///
/// Smoothed mode differentiates the barrier stationarity condition; exact
/// mode differentiates the active-set KKT system and reports
/// [`DynamicsError::DegenerateActiveSet`] when a constraint is weakly active
/// (the derivative is set-valued there).
pub fn linearize(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    mode: StepMode,
) -> Result<LocalModel, DynamicsError> {
    match mode {
        StepMode::Smoothed { kappa } => linearize_smoothed(model, q, u, h, kappa),
        StepMode::Exact => linearize_exact(model, q, u, h),
    }
}

fn linearize_smoothed(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    kappa: f64,
) -> Result<LocalModel, DynamicsError> {
    let n_q = model.n_q();
    let qp = assemble_qp(model, q, u, h)?;
    let opts = SolverOptions::default();
    let z0 = feasible_start(&qp.rows, n_q, opts.phase1_target * (1.0 + qp.rows.offsets.amax()))?;
    let sol = minimize_barrier(&qp.quad, &qp.lin, &qp.rows, kappa, z0, &opts)?;
    let z = &sol.z;
    let s = &sol.slacks;

    // Hessian of the barrier objective at the solution.
    let mut hess = qp.quad.clone();
    for i in 0..qp.rows.len() {
        let ci = qp.rows.coeffs.row(i).transpose();
        let w = 1.0 / (kappa * s[i] * s[i]);
        hess.ger(w, &ci, &ci, 1.0);
    }
    let chol = hess
        .clone()
        .cholesky()
        .ok_or(SolverError::NotPositiveDefinite)
        .map_err(DynamicsError::Solver)?;

    // B = -H^{-1} db/du.
    let mut b = -db_du(model, h);
    chol.solve_mut(&mut b);

    // A = I + dz/dq with dz/dq = -H^{-1} dG/dq, where G is the stationarity
    // residual. dG/dq collects the cost term and the barrier row data.
    let selection = selection_of(&qp.contacts);
    let (dc, dphi) = contact_row_derivatives(model, &selection, q, qp.rows.len())?;
    let dbq = db_dq(model, h);
    let mut dg = dbq.clone();
    for j in 0..n_q {
        let mut col = dg.column_mut(j);
        for i in 0..qp.rows.len() {
            let ci = qp.rows.coeffs.row(i).transpose();
            let dci = dc[j].row(i).transpose();
            let ds = dci.dot(z) + dphi[j][i];
            // d/dq_j of  -(1/kappa) c_i / s_i.
            let term = (dci * s[i] - ci * ds) / (kappa * s[i] * s[i]);
            col -= term;
        }
    }
    let mut dz_dq = -dg;
    chol.solve_mut(&mut dz_dq);
    let a = DMatrix::identity(n_q, n_q) + dz_dq;

    Ok(LocalModel {
        a,
        b,
        c: q + z,
        q_nominal: q.clone(),
        u_nominal: u.clone(),
        mode: ModelMode::Smoothed { kappa },
    })
}

fn linearize_exact(
    model: &SystemModel,
    q: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<LocalModel, DynamicsError> {
    let n_q = model.n_q();
    let qp = assemble_qp(model, q, u, h)?;
    let sol = solve_qp(&qp.quad, &qp.lin, &qp.rows, &SolverOptions::default())?;
    if !sol.polished && !qp.rows.is_empty() {
        return Err(DynamicsError::ActiveSetUncertain);
    }
    // Weakly active rows make the derivative set-valued. The band matches
    // the solver's certification precision: wider bands misclassify valid
    // weak contacts, tighter ones let uncertified ties through.
    for i in 0..qp.rows.len() {
        if sol.slacks[i].abs() < 1e-8 && sol.lambda[i] < 1e-8 {
            return Err(DynamicsError::DegenerateActiveSet { row: i });
        }
    }
    let active: Vec<usize> =
        (0..qp.rows.len()).filter(|&i| sol.active[i]).collect();
    let m = active.len();

    // KKT system of the equality-constrained problem on the active set.
    let mut kkt = DMatrix::zeros(n_q + m, n_q + m);
    kkt.view_mut((0, 0), (n_q, n_q)).copy_from(&qp.quad);
    for (k, &i) in active.iter().enumerate() {
        for j in 0..n_q {
            kkt[(j, n_q + k)] = -qp.rows.coeffs[(i, j)];
            kkt[(n_q + k, j)] = qp.rows.coeffs[(i, j)];
        }
    }
    let lu = kkt.full_piv_lu();

    // Input sensitivity: only the cost vector depends on u.
    let dbu = db_du(model, h);
    let mut b = DMatrix::zeros(n_q, model.n_a);
    for col in 0..model.n_a {
        let mut rhs = DVector::zeros(n_q + m);
        for r in 0..n_q {
            rhs[r] = -dbu[(r, col)];
        }
        let x = lu.solve(&rhs).ok_or(DynamicsError::RankDeficient)?;
        b.column_mut(col).copy_from(&x.rows(0, n_q));
    }

    // Configuration sensitivity: cost vector plus active row data.
    let selection = selection_of(&qp.contacts);
    let (dc, dphi) = contact_row_derivatives(model, &selection, q, qp.rows.len())?;
    let dbq = db_dq(model, h);
    let mut a = DMatrix::identity(n_q, n_q);
    for j in 0..n_q {
        let mut rhs = DVector::zeros(n_q + m);
        // Stationarity: Q z + b - sum_i lambda_i c_i = 0.
        for r in 0..n_q {
            let mut v = dbq[(r, j)];
            for &i in &active {
                v -= sol.lambda[i] * dc[j][(i, r)];
            }
            rhs[r] = -v;
        }
        // Primal feasibility of active rows: c_i' z + phi_i = 0.
        for (k, &i) in active.iter().enumerate() {
            let ds = dc[j].row(i).transpose().dot(&sol.z) + dphi[j][i];
            rhs[n_q + k] = -ds;
        }
        let x = lu.solve(&rhs).ok_or(DynamicsError::RankDeficient)?;
        for r in 0..n_q {
            a[(r, j)] += x[r];
        }
    }

    Ok(LocalModel {
        a,
        b,
        c: q + &sol.z,
        q_nominal: q.clone(),
        u_nominal: u.clone(),
        mode: ModelMode::Exact,
    })
}

/// Closed-form input sensitivity for planar systems with a fixed active set.
///
/// With `J~` the active rows split into object columns `J~_u` and robot
/// columns `J~_a`, and `M^ = eps M_u` the regularized mass,
///
/// ```text
/// P   = [ J~_u M^^-1 J~_u' + J~_a (h^2 K_a)^-1 J~_a' ]^-1
/// B_a = I - (h^2 K_a)^-1 J~_a' P J~_a
/// B_u = - M^^-1 J~_u' P J~_a
/// ```
///
/// `active_rows` indexes the inequality rows of [`assemble_qp`] at the same
/// `q`. Fails with [`DynamicsError::RankDeficient`] when the active rows are
/// linearly dependent.
pub fn explicit_b_planar(
    model: &SystemModel,
    q: &DVector<f64>,
    h: f64,
    active_rows: &[usize],
) -> Result<DMatrix<f64>, DynamicsError> {
    let n_q = model.n_q();
    let (n_u, n_a) = (model.n_u, model.n_a);
    let contacts = model.contacts(q)?;
    let (rows, _) = rows_from_contacts(&contacts, n_q);
    for &i in active_rows {
        if i >= rows.len() {
            return Err(DynamicsError::Dimension("active row index out of range".into()));
        }
    }
    let m = active_rows.len();
    if m == 0 {
        let mut b = DMatrix::zeros(n_q, n_a);
        for j in 0..n_a {
            b[(n_u + j, j)] = 1.0;
        }
        return Ok(b);
    }
    let mut j_u = DMatrix::zeros(m, n_u);
    let mut j_a = DMatrix::zeros(m, n_a);
    for (k, &i) in active_rows.iter().enumerate() {
        for c in 0..n_u {
            j_u[(k, c)] = rows.coeffs[(i, c)];
        }
        for c in 0..n_a {
            j_a[(k, c)] = rows.coeffs[(i, n_u + c)];
        }
    }
    // M^^-1 J~_u' and (h^2 K_a)^-1 J~_a'.
    let minv_ju_t = if n_u > 0 {
        let mhat = &model.m_u * model.eps_reg;
        let chol = mhat
            .cholesky()
            .ok_or_else(|| DynamicsError::InvalidModel("regularized mass not PD".into()))?;
        chol.solve(&j_u.transpose())
    } else {
        DMatrix::zeros(0, m)
    };
    let mut kinv_ja_t = j_a.transpose();
    for j in 0..n_a {
        let w = 1.0 / (h * h * model.k_a[j]);
        kinv_ja_t.row_mut(j).scale_mut(w);
    }
    let p_inv = &j_u * &minv_ju_t + &j_a * &kinv_ja_t;
    let p_chol = p_inv.cholesky().ok_or(DynamicsError::RankDeficient)?;
    let p_ja = p_chol.solve(&j_a);
    let b_a = DMatrix::identity(n_a, n_a) - &kinv_ja_t * &p_ja;
    let b_u = -(&minv_ju_t * &p_ja);
    let mut b = DMatrix::zeros(n_q, n_a);
    b.view_mut((0, 0), (n_u, n_a)).copy_from(&b_u);
    b.view_mut((n_u, 0), (n_a, n_a)).copy_from(&b_a);
    Ok(b)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::geometry::{BodyKinematics, CollisionGeometry};
    use nalgebra::{dvector, Vector2};

    /// Actuated cart (spring k) against a wall at the origin: phi = q_a.
    pub(crate) fn cart_wall(k: f64) -> SystemModel {
        let r = 0.05;
        SystemModel {
            name: "cart_wall".into(),
            n_u: 0,
            n_a: 1,
            m_u: DMatrix::zeros(0, 0),
            k_a: dvector![k],
            tau_u: dvector![],
            tau_a: dvector![0.0],
            eps_reg: 1e-4,
            bodies: vec![
                Body {
                    name: "cart".into(),
                    kinematics: BodyKinematics::PrismaticX { dof: 0, origin: Vector2::zeros() },
                    geoms: vec![CollisionGeometry::Disc { radius: r, offset: Vector2::zeros() }],
                },
                Body {
                    name: "wall".into(),
                    kinematics: BodyKinematics::Fixed { pose: Pose2::identity() },
                    geoms: vec![CollisionGeometry::HalfPlane {
                        normal: Vector2::new(1.0, 0.0),
                        offset: -r,
                    }],
                },
            ],
            pairs: vec![ContactPairDef { body_a: 0, geom_a: 0, body_b: 1, geom_b: 0, mu: 0.0 }],
            margin: 1e6,
            joint_limits: vec![(-10.0, 10.0)],
            angular_u: vec![],
        }
    }

    /// Unactuated block against a wall at the origin: phi = q_u.
    pub(crate) fn block_wall() -> SystemModel {
        let r = 0.05;
        SystemModel {
            name: "block_wall".into(),
            n_u: 1,
            n_a: 0,
            m_u: DMatrix::from_element(1, 1, 1.0),
            k_a: dvector![],
            tau_u: dvector![0.0],
            tau_a: dvector![],
            eps_reg: 1.0,
            bodies: vec![
                Body {
                    name: "block".into(),
                    kinematics: BodyKinematics::PrismaticX { dof: 0, origin: Vector2::zeros() },
                    geoms: vec![CollisionGeometry::Disc { radius: r, offset: Vector2::zeros() }],
                },
                Body {
                    name: "wall".into(),
                    kinematics: BodyKinematics::Fixed { pose: Pose2::identity() },
                    geoms: vec![CollisionGeometry::HalfPlane {
                        normal: Vector2::new(1.0, 0.0),
                        offset: -r,
                    }],
                },
            ],
            pairs: vec![ContactPairDef { body_a: 0, geom_a: 0, body_b: 1, geom_b: 0, mu: 0.0 }],
            margin: 1e6,
            joint_limits: vec![(-10.0, 10.0)],
            angular_u: vec![false],
        }
    }

    /// Contact-free position-controlled robot: q+ = u exactly.
    pub(crate) fn free_robot(n_a: usize) -> SystemModel {
        SystemModel {
            name: "free_robot".into(),
            n_u: 0,
            n_a,
            m_u: DMatrix::zeros(0, 0),
            k_a: DVector::from_element(n_a, 10.0),
            tau_u: dvector![],
            tau_a: DVector::zeros(n_a),
            eps_reg: 1e-4,
            bodies: Vec::new(),
            pairs: Vec::new(),
            margin: 0.5,
            joint_limits: vec![(-10.0, 10.0); n_a],
            angular_u: vec![],
        }
    }
}
