//! Reachability-guided RRT through contact dynamics.
//!
//! Nearest-neighbor queries use a local Mahalanobis metric built from the
//! smoothed input sensitivity of each node: with `B_u` the object rows of
//! the node's smoothed `B` and `mu_u` its predicted object configuration,
//!
//! ```text
//! d(q; node) = 0.5 (q - mu_u)' (B_u B_u' + gamma I)^-1 (q - mu_u)
//! ```
//!
//! so object configurations reachable by small commanded motions are close.
//! Extension solves a least-squares problem in the smoothed model and then
//! steps the *exact* dynamics, keeping every edge dynamically consistent.
//! With some probability the extension is replaced by a contact sample that
//! re-places the robot on the object surface.

pub mod refine;

pub use refine::{refine_path, Bridge, RefineConfig, RefineError, RefinedPlan, RefinedSegment};

use crate::dynamics::{step_exact, LocalModel, SystemModel};
use crate::rng::{derive_seed, stream};
use crate::smoothing::smoothed_linear_model;
use crate::systems::{contact_sample, Scenario};
use crate::wrap_angle;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RrtError {
    #[error("invalid rrt config: {0}")]
    Config(String),
}

fn default_max_iters() -> usize {
    1000
}
fn default_step_size() -> f64 {
    0.3
}
fn default_gamma() -> f64 {
    1e-6
}
fn default_goal_bias() -> f64 {
    0.1
}
fn default_contact_prob() -> f64 {
    0.3
}
fn default_goal_tolerance() -> f64 {
    0.2
}
fn default_eta() -> f64 {
    1.0
}
fn default_packing_samples() -> usize {
    1000
}
fn default_packing_interval() -> usize {
    50
}
fn default_stop_at_goal() -> bool {
    true
}

/// Which metric drives the nearest-neighbor query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Mahalanobis,
    /// Ablation baseline: globally uniform weighted Euclidean metric.
    WeightedEuclidean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrtConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Command-space norm of one extension.
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Metric regularization.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Probability of sampling the goal as the subgoal.
    #[serde(default = "default_goal_bias")]
    pub goal_bias: f64,
    /// Probability of replacing an extension by a contact sample.
    #[serde(default = "default_contact_prob")]
    pub contact_sample_prob: f64,
    /// Success radius on the object configuration (angles wrapped).
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    /// Metric threshold of the packing-ratio sublevel set.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_packing_samples")]
    pub packing_samples: usize,
    /// Iterations between packing-ratio snapshots.
    #[serde(default = "default_packing_interval")]
    pub packing_interval: usize,
    #[serde(default)]
    pub metric: MetricKind,
    /// Keep growing after the goal is reached (exploration studies measure
    /// packing over the full iteration budget).
    #[serde(default = "default_stop_at_goal")]
    pub stop_at_goal: bool,
    /// Per-object-coordinate weights of the weighted Euclidean ablation
    /// metric (empty = ones).
    #[serde(default)]
    pub global_metric_weights: Vec<f64>,
}

impl Default for RrtConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RrtConfig {
    pub fn validate(&self, n_u: usize) -> Result<(), RrtError> {
        if self.step_size <= 0.0 {
            return Err(RrtError::Config("step_size must be positive".into()));
        }
        if self.gamma <= 0.0 {
            return Err(RrtError::Config("gamma must be positive".into()));
        }
        if self.eta <= 0.0 {
            return Err(RrtError::Config("eta must be positive".into()));
        }
        for (name, p) in
            [("goal_bias", self.goal_bias), ("contact_sample_prob", self.contact_sample_prob)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(RrtError::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.goal_tolerance <= 0.0 {
            return Err(RrtError::Config("goal_tolerance must be positive".into()));
        }
        if self.packing_interval == 0 {
            return Err(RrtError::Config("packing_interval must be positive".into()));
        }
        if !self.global_metric_weights.is_empty() && self.global_metric_weights.len() != n_u {
            return Err(RrtError::Config(format!(
                "global_metric_weights has {} entries, expected {n_u}",
                self.global_metric_weights.len()
            )));
        }
        Ok(())
    }
}

/// Reachability data cached per node: object rows of the smoothed input
/// sensitivity, the predicted object configuration, and a factorization of
/// the regularized covariance.
#[derive(Debug, Clone)]
pub struct NodeModel {
    pub b_u: DMatrix<f64>,
    pub mu_u: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    pub det_sigma: f64,
}

impl NodeModel {
    pub fn new(b_u: DMatrix<f64>, mu_u: DVector<f64>, gamma: f64) -> Self {
        let n_u = mu_u.len();
        let sigma = &b_u * b_u.transpose() + DMatrix::identity(n_u, n_u) * gamma;
        let chol = sigma.cholesky().expect("sigma is positive definite for gamma > 0");
        let det_sigma = chol.l().diagonal().iter().map(|d| d * d).product();
        NodeModel { b_u, mu_u, chol, det_sigma }
    }

    pub fn from_local_model(lm: &LocalModel, n_u: usize, gamma: f64) -> Self {
        NodeModel::new(lm.b_object(n_u), lm.c_object(n_u), gamma)
    }

    /// Fallback when no model could be computed: reachability limited to
    /// the regularization ball around the node's own object configuration.
    pub fn degenerate(q_u: DVector<f64>, n_a: usize, gamma: f64) -> Self {
        NodeModel::new(DMatrix::zeros(q_u.len(), n_a), q_u, gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Root,
    Extend,
    ContactSample,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub q: DVector<f64>,
    pub parent: Option<usize>,
    /// Command that produced this node (extend nodes only).
    pub input: Option<DVector<f64>>,
    pub provenance: Provenance,
    pub model: NodeModel,
}

#[derive(Debug, Clone, Default)]
pub struct PlanTree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone)]
pub struct IterationDiag {
    pub iteration: usize,
    pub min_goal_distance: f64,
    pub packing_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub tree: PlanTree,
    pub success: bool,
    /// Node indices from the root to the goal-reaching node (empty on
    /// failure).
    pub path: Vec<usize>,
    pub diagnostics: Vec<IterationDiag>,
    pub failed_extends: usize,
    pub failed_samples: usize,
    pub model_failures: usize,
    pub iterations: usize,
    /// Iteration at which the goal was first reached.
    pub goal_iteration: Option<usize>,
}

/// Difference on object coordinates with angular wrapping.
pub fn object_delta(a: &DVector<f64>, b: &DVector<f64>, angular: &[bool]) -> DVector<f64> {
    DVector::from_fn(a.len(), |i, _| {
        let d = a[i] - b[i];
        if angular[i] {
            wrap_angle(d)
        } else {
            d
        }
    })
}

/// Local Mahalanobis distance of an object configuration from a node.
pub fn mahalanobis_distance(
    node_model: &NodeModel,
    q_u_query: &DVector<f64>,
    angular: &[bool],
) -> f64 {
    let delta = object_delta(q_u_query, &node_model.mu_u, angular);
    let x = node_model.chol.solve(&delta);
    0.5 * delta.dot(&x)
}

fn weighted_euclidean(
    node_q_u: &DVector<f64>,
    q_u_query: &DVector<f64>,
    weights: &[f64],
    angular: &[bool],
) -> f64 {
    let delta = object_delta(q_u_query, node_q_u, angular);
    let mut d = 0.0;
    for i in 0..delta.len() {
        let w = weights.get(i).copied().unwrap_or(1.0);
        d += 0.5 * w * delta[i] * delta[i];
    }
    d
}

/// Distance from a tree node to a queried object configuration under the
/// configured metric.
pub fn node_distance(
    model: &SystemModel,
    cfg: &RrtConfig,
    node: &TreeNode,
    q_u_query: &DVector<f64>,
) -> f64 {
    match cfg.metric {
        MetricKind::Mahalanobis => {
            mahalanobis_distance(&node.model, q_u_query, &model.angular_u)
        }
        MetricKind::WeightedEuclidean => {
            let q_u = node.q.rows(0, model.n_u).into_owned();
            weighted_euclidean(&q_u, q_u_query, &cfg.global_metric_weights, &model.angular_u)
        }
    }
}

/// Index of the metric-nearest node; ties break to the lowest index.
pub fn nearest(
    model: &SystemModel,
    cfg: &RrtConfig,
    tree: &PlanTree,
    q_u_query: &DVector<f64>,
) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, node) in tree.nodes.iter().enumerate() {
        let d = node_distance(model, cfg, node, q_u_query);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// One dynamically consistent extension toward an object subgoal: pick the
/// least-squares command direction in the node's smoothed model, scale it
/// to `step_size`, and run the exact dynamics.
pub fn extend(
    model: &SystemModel,
    node: &TreeNode,
    q_u_subgoal: &DVector<f64>,
    step_size: f64,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>), String> {
    let target = object_delta(q_u_subgoal, &node.model.mu_u, &model.angular_u);
    let pinv = node
        .model
        .b_u
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| e.to_string())?;
    let mut du = &pinv * &target;
    if du.norm() <= 1e-8 {
        // Degenerate direction (object unreachable in this model): take a
        // random command direction instead of stalling.
        du = DVector::from_fn(model.n_a, |_, _| {
            let v: f64 = rng.random::<f64>() - 0.5;
            v
        });
        if du.norm() <= 1e-12 {
            du = DVector::from_element(model.n_a, 1.0);
        }
    }
    let u = node.q.rows(model.n_u, model.n_a) + du.clone() * (step_size / du.norm());
    let child = step_exact(model, &node.q, &u, h).map_err(|e| e.to_string())?;
    Ok((child.q_next, u))
}

fn goal_distance(model: &SystemModel, q: &DVector<f64>, goal_u: &DVector<f64>) -> f64 {
    let q_u = q.rows(0, model.n_u).into_owned();
    object_delta(&q_u, goal_u, &model.angular_u).norm()
}

/// Fraction of the workspace samples within metric `eta` of some node.
fn packing_with_samples(
    scenario_model: &SystemModel,
    cfg: &RrtConfig,
    tree: &PlanTree,
    samples: &[DVector<f64>],
) -> f64 {
    let hits: usize = samples
        .par_iter()
        .map(|s| {
            let within = tree
                .nodes
                .iter()
                .any(|n| mahalanobis_distance(&n.model, s, &scenario_model.angular_u) <= cfg.eta);
            usize::from(within)
        })
        .sum();
    hits as f64 / samples.len() as f64
}

/// Monte-Carlo packing ratio of a tree over a workspace box.
pub fn packing_ratio(
    model: &SystemModel,
    cfg: &RrtConfig,
    tree: &PlanTree,
    workspace: &[[f64; 2]],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let samples: Vec<DVector<f64>> = (0..n_samples)
        .map(|_| {
            DVector::from_fn(workspace.len(), |i, _| rng.random_range(workspace[i][0]..workspace[i][1]))
        })
        .collect();
    packing_with_samples(model, cfg, tree, &samples)
}

fn node_model_for(
    scenario: &Scenario,
    q: &DVector<f64>,
    node_index: usize,
    failures: &mut usize,
) -> NodeModel {
    let model = &scenario.model;
    let u = q.rows(model.n_u, model.n_a).into_owned();
    let cfg = scenario
        .smoothing
        .with_seed(derive_seed(scenario.seed, "rrt-node", node_index as u64));
    match smoothed_linear_model(model, q, &u, scenario.h, &cfg) {
        Ok(lm) => NodeModel::from_local_model(&lm, model.n_u, scenario.rrt.gamma),
        Err(_) => {
            *failures += 1;
            NodeModel::degenerate(
                q.rows(0, model.n_u).into_owned(),
                model.n_a,
                scenario.rrt.gamma,
            )
        }
    }
}

/// Grow a tree from the scenario's initial configuration toward its goal.
pub fn rrt_plan(scenario: &Scenario) -> PlanOutput {
    let model = &scenario.model;
    let cfg = &scenario.rrt;
    let goal_u = scenario.goal_u();
    let mut rng = stream(scenario.seed, "rrt", 0);
    let mut model_failures = 0;

    let mut tree = PlanTree::default();
    tree.nodes.push(TreeNode {
        q: scenario.q_init.clone(),
        parent: None,
        input: None,
        provenance: Provenance::Root,
        model: node_model_for(scenario, &scenario.q_init, 0, &mut model_failures),
    });

    // Fixed Monte-Carlo samples make packing snapshots exactly monotone.
    let mut packing_rng = stream(scenario.seed, "rrt-packing", 0);
    let packing_samples: Vec<DVector<f64>> = (0..cfg.packing_samples)
        .map(|_| {
            DVector::from_fn(model.n_u, |i, _| {
                packing_rng.random_range(scenario.workspace[i][0]..scenario.workspace[i][1])
            })
        })
        .collect();

    let mut diagnostics = Vec::new();
    let mut min_dist = goal_distance(model, &scenario.q_init, &goal_u);
    let mut success = min_dist <= cfg.goal_tolerance;
    let mut goal_node = if success { Some(0) } else { None };
    let mut goal_iteration = if success { Some(0) } else { None };
    let mut failed_extends = 0;
    let mut failed_samples = 0;
    let mut iterations = 0;

    if !(success && cfg.stop_at_goal) {
        for k in 1..=cfg.max_iters {
            iterations = k;
            let subgoal = if rng.random::<f64>() < cfg.goal_bias {
                goal_u.clone()
            } else {
                DVector::from_fn(model.n_u, |i, _| {
                    rng.random_range(scenario.workspace[i][0]..scenario.workspace[i][1])
                })
            };
            let near = nearest(model, cfg, &tree, &subgoal);
            let use_contact_sample = rng.random::<f64>() < cfg.contact_sample_prob;
            let new_node = if use_contact_sample {
                match contact_sample(model, &tree.nodes[near].q, scenario.h, &mut rng) {
                    Ok(s) => Some((s.q_new, None, Provenance::ContactSample)),
                    Err(_) => {
                        failed_samples += 1;
                        None
                    }
                }
            } else {
                match extend(model, &tree.nodes[near], &subgoal, cfg.step_size, scenario.h, &mut rng)
                {
                    Ok((q, u)) => Some((q, Some(u), Provenance::Extend)),
                    Err(_) => {
                        failed_extends += 1;
                        None
                    }
                }
            };
            if let Some((q, input, provenance)) = new_node {
                let idx = tree.nodes.len();
                let node_model = node_model_for(scenario, &q, idx, &mut model_failures);
                min_dist = min_dist.min(goal_distance(model, &q, &goal_u));
                tree.nodes.push(TreeNode {
                    q,
                    parent: Some(near),
                    input,
                    provenance,
                    model: node_model,
                });
                if !success
                    && goal_distance(model, &tree.nodes[idx].q, &goal_u) <= cfg.goal_tolerance
                {
                    success = true;
                    goal_node = Some(idx);
                    goal_iteration = Some(k);
                }
            }
            let stop_now = success && cfg.stop_at_goal;
            let packing = if k % cfg.packing_interval == 0 || stop_now || k == cfg.max_iters {
                Some(packing_with_samples(model, cfg, &tree, &packing_samples))
            } else {
                None
            };
            diagnostics.push(IterationDiag {
                iteration: k,
                min_goal_distance: min_dist,
                packing_ratio: packing,
            });
            if stop_now {
                break;
            }
        }
    }

    let path = goal_node
        .map(|mut i| {
            let mut p = vec![i];
            while let Some(parent) = tree.nodes[i].parent {
                p.push(parent);
                i = parent;
            }
            p.reverse();
            p
        })
        .unwrap_or_default();

    PlanOutput {
        tree,
        success,
        path,
        diagnostics,
        failed_extends,
        failed_samples,
        model_failures,
        iterations,
        goal_iteration,
    }
}
