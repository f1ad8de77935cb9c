//! Scenario files: a system with its parameters, start/goal configurations,
//! planner configs and a master seed, stored as strict JSON.

use super::{build_system, SystemsError};
use crate::dynamics::SystemModel;
use crate::impc::ImpcConfig;
use crate::rrt::RrtConfig;
use crate::smoothing::SmoothingConfig;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("validation failed: {field}")]
    Validation { field: String },
    #[error(transparent)]
    System(#[from] SystemsError),
}

fn invalid(field: &str) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

/// On-disk scenario document. Top-level structural keys are mandatory;
/// planner configs fall back to defaults field by field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    system: Option<SystemDoc>,
    q_init: Option<Vec<f64>>,
    q_goal: Option<Vec<f64>>,
    /// Per-object-coordinate `[lo, hi]` subgoal sampling bounds.
    workspace: Option<Vec<[f64; 2]>>,
    /// Step size in seconds.
    h: Option<f64>,
    #[serde(default)]
    smoothing: Option<SmoothingConfig>,
    #[serde(default)]
    impc: Option<ImpcConfig>,
    #[serde(default)]
    rrt: Option<RrtConfig>,
    #[serde(default)]
    seed: Option<u64>,
}

/// A validated scenario with its system model built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system_name: String,
    pub params: BTreeMap<String, f64>,
    pub model: SystemModel,
    pub q_init: DVector<f64>,
    pub q_goal: DVector<f64>,
    pub workspace: Vec<[f64; 2]>,
    pub h: f64,
    pub smoothing: SmoothingConfig,
    pub impc: ImpcConfig,
    pub rrt: RrtConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let system = doc.system.ok_or_else(|| invalid("system"))?;
        let q_init = doc.q_init.ok_or_else(|| invalid("q_init"))?;
        let q_goal = doc.q_goal.ok_or_else(|| invalid("q_goal"))?;
        let workspace = doc.workspace.ok_or_else(|| invalid("workspace"))?;
        let h = doc.h.ok_or_else(|| invalid("h"))?;

        let model = build_system(&system.name, &system.params)?;
        let scenario = Scenario {
            system_name: system.name,
            params: system.params,
            model,
            q_init: DVector::from_vec(q_init),
            q_goal: DVector::from_vec(q_goal),
            workspace,
            h,
            smoothing: doc.smoothing.unwrap_or_default(),
            impc: doc.impc.unwrap_or_default(),
            rrt: doc.rrt.unwrap_or_default(),
            seed: doc.seed.unwrap_or(0),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n_q = self.model.n_q();
        if self.h <= 0.0 {
            return Err(invalid("h"));
        }
        if self.q_init.len() != n_q {
            return Err(invalid("q_init length"));
        }
        if self.q_goal.len() != n_q {
            return Err(invalid("q_goal length"));
        }
        if !self.model.within_limits(&self.q_init) {
            return Err(invalid("q_init outside joint limits"));
        }
        let phi = self.model.min_phi(&self.q_init).map_err(|_| invalid("q_init geometry"))?;
        if phi < -1e-6 {
            return Err(invalid("initial penetration"));
        }
        if self.workspace.len() != self.model.n_u {
            return Err(invalid("workspace length"));
        }
        for (i, [lo, hi]) in self.workspace.iter().enumerate() {
            if lo >= hi {
                return Err(invalid("workspace bounds"));
            }
            let g = self.q_goal[i];
            if g < *lo - 1e-9 || g > *hi + 1e-9 {
                return Err(invalid("goal outside workspace"));
            }
        }
        self.smoothing
            .validate()
            .map_err(|e| ScenarioError::Validation { field: format!("smoothing: {e}") })?;
        self.impc
            .validate()
            .map_err(|e| ScenarioError::Validation { field: format!("impc: {e}") })?;
        self.rrt
            .validate(self.model.n_u)
            .map_err(|e| ScenarioError::Validation { field: format!("rrt: {e}") })?;
        Ok(())
    }

    /// Serialize with all defaults materialized; re-parsing yields an
    /// equivalent scenario.
    pub fn to_json(&self) -> String {
        let doc = ScenarioDoc {
            system: Some(SystemDoc { name: self.system_name.clone(), params: self.params.clone() }),
            q_init: Some(self.q_init.iter().copied().collect()),
            q_goal: Some(self.q_goal.iter().copied().collect()),
            workspace: Some(self.workspace.clone()),
            h: Some(self.h),
            smoothing: Some(self.smoothing.clone()),
            impc: Some(self.impc.clone()),
            rrt: Some(self.rrt.clone()),
            seed: Some(self.seed),
        };
        serde_json::to_string_pretty(&doc).expect("scenario serializes")
    }

    /// Object part of the goal configuration.
    pub fn goal_u(&self) -> DVector<f64> {
        self.q_goal.rows(0, self.model.n_u).into_owned()
    }
}

/// Bundled scenario documents, compiled into the library.
pub fn bundled_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("cart_wall", include_str!("../../../../scenarios/cart_wall.scenario")),
        ("block_wall", include_str!("../../../../scenarios/block_wall.scenario")),
        ("cart_ball", include_str!("../../../../scenarios/cart_ball.scenario")),
        ("planar_pushing", include_str!("../../../../scenarios/planar_pushing.scenario")),
        ("planar_hand", include_str!("../../../../scenarios/planar_hand.scenario")),
        (
            "planar_hand_fixed_y",
            include_str!("../../../../scenarios/planar_hand_fixed_y.scenario"),
        ),
    ]
}

/// Load a bundled scenario by system name.
pub fn bundled_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    let text = bundled_scenarios()
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ScenarioError::System(SystemsError::UnknownSystem(name.to_string())))?;
    Scenario::from_json(text)
}
