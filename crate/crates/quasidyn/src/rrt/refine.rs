//! Post-processing of RRT plans: shortcut redundant regrasps, drop inert
//! segments, re-optimize contact-rich segments at a finer step size, and
//! join segments with collision-free robot-only motions.

use crate::dynamics::SystemModel;
use crate::impc::{impc_run, ImpcConfig, ImpcError};
use crate::rng::stream;
use crate::rrt::{object_delta, PlanOutput, Provenance};
use crate::systems::Scenario;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("plan did not reach the goal; nothing to refine")]
    NotSuccessful,
    #[error("path references nodes outside the tree")]
    MalformedPath,
}

fn default_division() -> usize {
    4
}
fn default_refine_outer() -> usize {
    5
}
fn default_motion_tol() -> f64 {
    1e-7
}
fn default_bridge_checks() -> usize {
    50
}
fn default_bridge_iters() -> usize {
    2000
}
fn default_bridge_step() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// The refined segments run at `h / substep_division`.
    #[serde(default = "default_division")]
    pub substep_division: usize,
    /// Outer-iteration cap of the per-segment trajectory optimization.
    #[serde(default = "default_refine_outer")]
    pub max_outer: usize,
    /// Segments whose object motion stays below this are dropped.
    #[serde(default = "default_motion_tol")]
    pub motion_tol: f64,
    /// Interpolation points checked along straight-line bridges.
    #[serde(default = "default_bridge_checks")]
    pub bridge_checks: usize,
    #[serde(default = "default_bridge_iters")]
    pub bridge_rrt_iters: usize,
    #[serde(default = "default_bridge_step")]
    pub bridge_step: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// One contact-rich piece of the plan, possibly re-optimized at a finer
/// step size.
#[derive(Debug, Clone)]
pub struct RefinedSegment {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub h: f64,
    pub refined: bool,
    pub warning: Option<String>,
}

/// Robot-only connection between two segments with the object frozen.
#[derive(Debug, Clone)]
pub struct Bridge {
    /// Full configurations visited (object part constant).
    pub waypoints: Vec<DVector<f64>>,
    pub collision_free: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RefinedPlan {
    pub segments: Vec<RefinedSegment>,
    pub bridges: Vec<Bridge>,
}

/// Raw segment extracted from the tree path.
#[derive(Debug, Clone)]
pub(crate) struct RawSegment {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

/// Collapse runs of consecutive contact-sample nodes (keeping the last of
/// each run) and split the path into extend-edge segments.
pub(crate) fn split_segments(
    plan: &PlanOutput,
    model: &SystemModel,
    motion_tol: f64,
) -> Result<Vec<RawSegment>, RefineError> {
    let nodes = &plan.tree.nodes;
    for &i in &plan.path {
        if i >= nodes.len() {
            return Err(RefineError::MalformedPath);
        }
    }
    // Deduplicate consecutive contact samples.
    let mut compressed: Vec<usize> = Vec::new();
    for &i in &plan.path {
        if let Some(&last) = compressed.last() {
            if nodes[last].provenance == Provenance::ContactSample
                && nodes[i].provenance == Provenance::ContactSample
            {
                *compressed.last_mut().unwrap() = i;
                continue;
            }
        }
        compressed.push(i);
    }
    // Cut into runs of extend edges.
    let mut segments = Vec::new();
    let mut current: Option<RawSegment> = None;
    for &i in &compressed {
        match nodes[i].provenance {
            Provenance::Root => {
                current = Some(RawSegment { states: vec![nodes[i].q.clone()], inputs: vec![] });
            }
            Provenance::Extend => {
                let seg = current.get_or_insert_with(|| RawSegment {
                    states: vec![nodes[plan.path[0]].q.clone()],
                    inputs: vec![],
                });
                // The parent may have been a deduplicated contact sample;
                // segments always continue from their own last state.
                seg.states.push(nodes[i].q.clone());
                seg.inputs.push(nodes[i].input.clone().expect("extend nodes carry inputs"));
            }
            Provenance::ContactSample => {
                if let Some(seg) = current.take() {
                    segments.push(seg);
                }
                current = Some(RawSegment { states: vec![nodes[i].q.clone()], inputs: vec![] });
            }
        }
    }
    if let Some(seg) = current.take() {
        segments.push(seg);
    }
    // Keep segments that actually move the object.
    let kept = segments
        .into_iter()
        .filter(|s| {
            if s.inputs.is_empty() {
                return false;
            }
            let q0 = s.states[0].rows(0, model.n_u).into_owned();
            s.states.iter().any(|q| {
                let qu = q.rows(0, model.n_u).into_owned();
                object_delta(&qu, &q0, &model.angular_u).norm() > motion_tol
            })
        })
        .collect();
    Ok(kept)
}

/// Piecewise-linear upsampling of segment states as tracking references.
fn upsample(states: &[DVector<f64>], division: usize) -> Vec<DVector<f64>> {
    let steps = states.len() - 1;
    let mut refs = Vec::with_capacity(steps * division + 1);
    for t in 0..steps {
        for k in 0..division {
            let alpha = k as f64 / division as f64;
            refs.push(&states[t] * (1.0 - alpha) + &states[t + 1] * alpha);
        }
    }
    refs.push(states[steps].clone());
    refs
}

fn refine_segment(
    scenario: &Scenario,
    seg: &RawSegment,
    cfg: &RefineConfig,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64), ImpcError> {
    let division = cfg.substep_division.max(1);
    let h_fine = scenario.h / division as f64;
    let horizon = seg.inputs.len() * division;
    let impc_cfg = ImpcConfig {
        horizon,
        max_outer: cfg.max_outer,
        ..scenario.impc.clone()
    };
    let mut inputs = Vec::with_capacity(horizon);
    for u in &seg.inputs {
        for _ in 0..division {
            inputs.push(u.clone());
        }
    }
    let refs = upsample(&seg.states, division);
    let out = impc_run(
        &scenario.model,
        &seg.states[0],
        &inputs,
        &refs,
        h_fine,
        &impc_cfg,
        &scenario.smoothing,
    )?;
    Ok((out.states, out.inputs, h_fine))
}

fn collision_free_line(
    model: &SystemModel,
    from: &DVector<f64>,
    to: &DVector<f64>,
    checks: usize,
) -> bool {
    for k in 0..=checks {
        let alpha = k as f64 / checks as f64;
        let q = from * (1.0 - alpha) + to * alpha;
        match model.min_phi(&q) {
            Ok(phi) if phi >= -1e-6 => {}
            _ => return false,
        }
    }
    true
}

/// Straight-line bridge if collision free, otherwise a robot-only RRT with
/// the object frozen.
fn bridge(
    scenario: &Scenario,
    from: &DVector<f64>,
    to_robot: &DVector<f64>,
    cfg: &RefineConfig,
    seed_index: u64,
) -> Bridge {
    let model = &scenario.model;
    let mut target = from.clone();
    for j in 0..model.n_a {
        target[model.n_u + j] = to_robot[j];
    }
    if collision_free_line(model, from, &target, cfg.bridge_checks) {
        return Bridge { waypoints: vec![from.clone(), target], collision_free: true, warning: None };
    }
    // Robot-only tree in the joint-limit box.
    let mut rng = stream(scenario.seed, "bridge", seed_index);
    let mut nodes: Vec<DVector<f64>> = vec![from.clone()];
    let mut parents: Vec<usize> = vec![0];
    let robot = |q: &DVector<f64>| q.rows(model.n_u, model.n_a).into_owned();
    let goal_r = robot(&target);
    for _ in 0..cfg.bridge_rrt_iters {
        let sample_r: DVector<f64> = if rng.random::<f64>() < 0.2 {
            goal_r.clone()
        } else {
            DVector::from_fn(model.n_a, |j, _| {
                let (lo, hi) = model.joint_limits[model.n_u + j];
                rng.random_range(lo..hi)
            })
        };
        let (near, _) = nodes
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (robot(q) - &sample_r).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let from_r = robot(&nodes[near]);
        let dir = &sample_r - &from_r;
        let dist = dir.norm();
        if dist < 1e-9 {
            continue;
        }
        let step_r = &from_r + dir * (cfg.bridge_step.min(dist) / dist);
        let mut q_new = nodes[near].clone();
        for j in 0..model.n_a {
            q_new[model.n_u + j] = step_r[j];
        }
        if !collision_free_line(model, &nodes[near], &q_new, 5) {
            continue;
        }
        let idx = nodes.len();
        nodes.push(q_new.clone());
        parents.push(near);
        if (robot(&q_new) - &goal_r).norm() <= cfg.bridge_step
            && collision_free_line(model, &q_new, &target, 5)
        {
            let mut path = vec![target.clone()];
            let mut i = idx;
            loop {
                path.push(nodes[i].clone());
                if i == 0 {
                    break;
                }
                i = parents[i];
            }
            path.reverse();
            return Bridge { waypoints: path, collision_free: true, warning: None };
        }
    }
    Bridge {
        waypoints: vec![from.clone(), target],
        collision_free: false,
        warning: Some("robot-only connection search exhausted; straight line kept".into()),
    }
}

/// Shortcut and re-optimize a successful plan.
pub fn refine_path(
    scenario: &Scenario,
    plan: &PlanOutput,
    cfg: &RefineConfig,
) -> Result<RefinedPlan, RefineError> {
    if !plan.success {
        return Err(RefineError::NotSuccessful);
    }
    let model = &scenario.model;
    let raw = split_segments(plan, model, cfg.motion_tol)?;
    let mut segments = Vec::with_capacity(raw.len());
    for seg in &raw {
        match refine_segment(scenario, seg, cfg) {
            Ok((states, inputs, h)) => segments.push(RefinedSegment {
                states,
                inputs,
                h,
                refined: true,
                warning: None,
            }),
            Err(e) => segments.push(RefinedSegment {
                states: seg.states.clone(),
                inputs: seg.inputs.clone(),
                h: scenario.h,
                refined: false,
                warning: Some(format!("segment optimization failed: {e}")),
            }),
        }
    }
    let mut bridges = Vec::new();
    for i in 0..segments.len().saturating_sub(1) {
        let from = segments[i].states.last().expect("segments are nonempty").clone();
        let to_robot = raw[i + 1].states[0].rows(model.n_u, model.n_a).into_owned();
        bridges.push(bridge(scenario, &from, &to_robot, cfg, i as u64));
    }
    Ok(RefinedPlan { segments, bridges })
}
