//! Serializable run outputs and the run manifest.
//!
//! All numbers are serialized through serde_json, which prints the shortest
//! decimal that parses back to the same float; stored results round-trip
//! exactly.

use nalgebra::DVector;
use quasidyn::dynamics::{ModelMode, StepMode, StepResult};
use quasidyn::impc::TrajectoryResult;
use quasidyn::rrt::{IterationDiag, NodeModel, PlanOutput, PlanTree, Provenance, TreeNode};
use quasidyn::systems::Scenario;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_vec(v.to_vec())
}

#[derive(Serialize, Deserialize)]
pub struct ImpulseOut {
    pub pair: usize,
    pub sub: [usize; 2],
    pub normal: f64,
    pub tangential: f64,
}

#[derive(Serialize, Deserialize)]
pub struct StepOut {
    pub mode: String,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub q_next: Vec<f64>,
    pub delta_q: Vec<f64>,
    pub impulses: Vec<ImpulseOut>,
    pub newton_iters: usize,
    pub residual: f64,
}

impl StepOut {
    pub fn new(q: &DVector<f64>, u: &DVector<f64>, r: &StepResult) -> Self {
        StepOut {
            mode: match r.mode {
                StepMode::Exact => "exact".to_string(),
                StepMode::Smoothed { kappa } => format!("smoothed(kappa={kappa})"),
            },
            q: vec_of(q),
            u: vec_of(u),
            q_next: vec_of(&r.q_next),
            delta_q: vec_of(&r.delta_q),
            impulses: r
                .impulses
                .iter()
                .map(|i| ImpulseOut {
                    pair: i.pair,
                    sub: [i.sub.0, i.sub.1],
                    normal: i.normal,
                    tangential: i.tangential,
                })
                .collect(),
            newton_iters: r.newton_iters,
            residual: r.residual,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct LocalModelOut {
    /// Row-major `A` (state sensitivity).
    pub a: Vec<Vec<f64>>,
    /// Row-major `B` (input sensitivity).
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub q_nominal: Vec<f64>,
    pub u_nominal: Vec<f64>,
    pub mode: String,
}

pub fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn mode_name(mode: &ModelMode) -> String {
    match mode {
        ModelMode::Exact => "exact".into(),
        ModelMode::Smoothed { kappa } => format!("smoothed(kappa={kappa})"),
        ModelMode::RandomizedFirst { samples } => format!("randomized_first(n={samples})"),
        ModelMode::RandomizedZeroth { samples } => format!("randomized_zeroth(n={samples})"),
    }
}

#[derive(Serialize, Deserialize)]
pub struct TrajectoryOut {
    pub h: f64,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Contact impulses along the trajectory, one list per step.
    pub impulses: Vec<Vec<ImpulseOut>>,
    pub cost_history: Vec<f64>,
    pub best_cost: f64,
    pub outer_iterations: usize,
}

impl TrajectoryOut {
    pub fn new(scn: &Scenario, t: &TrajectoryResult) -> Self {
        // Re-step to recover the impulse sequence of the stored plan.
        let mut impulses = Vec::with_capacity(t.inputs.len());
        for (x, u) in t.states.iter().zip(&t.inputs) {
            let imps = quasidyn::dynamics::step_exact(&scn.model, x, u, scn.h)
                .map(|r| {
                    r.impulses
                        .iter()
                        .map(|i| ImpulseOut {
                            pair: i.pair,
                            sub: [i.sub.0, i.sub.1],
                            normal: i.normal,
                            tangential: i.tangential,
                        })
                        .collect()
                })
                .unwrap_or_default();
            impulses.push(imps);
        }
        TrajectoryOut {
            h: scn.h,
            states: t.states.iter().map(vec_of).collect(),
            inputs: t.inputs.iter().map(vec_of).collect(),
            impulses,
            cost_history: t.cost_history.clone(),
            best_cost: t.best_cost,
            outer_iterations: t.outer_iterations,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct NodeOut {
    pub q: Vec<f64>,
    pub parent: Option<usize>,
    pub input: Option<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
pub struct DiagOut {
    pub iteration: usize,
    pub min_goal_distance: f64,
    pub packing_ratio: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct PlanOut {
    pub success: bool,
    pub iterations: usize,
    pub goal_iteration: Option<usize>,
    pub path: Vec<usize>,
    pub nodes: Vec<NodeOut>,
    pub diagnostics: Vec<DiagOut>,
    pub failed_extends: usize,
    pub failed_samples: usize,
    pub model_failures: usize,
}

impl PlanOut {
    pub fn new(p: &PlanOutput) -> Self {
        PlanOut {
            success: p.success,
            iterations: p.iterations,
            goal_iteration: p.goal_iteration,
            path: p.path.clone(),
            nodes: p
                .tree
                .nodes
                .iter()
                .map(|n| NodeOut {
                    q: vec_of(&n.q),
                    parent: n.parent,
                    input: n.input.as_ref().map(vec_of),
                    provenance: n.provenance,
                })
                .collect(),
            diagnostics: p
                .diagnostics
                .iter()
                .map(|d| DiagOut {
                    iteration: d.iteration,
                    min_goal_distance: d.min_goal_distance,
                    packing_ratio: d.packing_ratio,
                })
                .collect(),
            failed_extends: p.failed_extends,
            failed_samples: p.failed_samples,
            model_failures: p.model_failures,
        }
    }

    /// Rebuild a plan for refinement. Node reachability models are not
    /// stored; refinement does not use them.
    pub fn into_plan(self, scn: &Scenario) -> PlanOutput {
        let n_u = scn.model.n_u;
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                let q = dvec(&n.q);
                TreeNode {
                    model: NodeModel::degenerate(
                        q.rows(0, n_u).into_owned(),
                        scn.model.n_a,
                        scn.rrt.gamma,
                    ),
                    q,
                    parent: n.parent,
                    input: n.input.as_deref().map(dvec),
                    provenance: n.provenance,
                }
            })
            .collect();
        PlanOutput {
            tree: PlanTree { nodes },
            success: self.success,
            path: self.path,
            diagnostics: self
                .diagnostics
                .into_iter()
                .map(|d| IterationDiag {
                    iteration: d.iteration,
                    min_goal_distance: d.min_goal_distance,
                    packing_ratio: d.packing_ratio,
                })
                .collect(),
            failed_extends: self.failed_extends,
            failed_samples: self.failed_samples,
            model_failures: self.model_failures,
            iterations: self.iterations,
            goal_iteration: self.goal_iteration,
        }
    }
}

/// Per-iteration diagnostics CSV (`iteration,min_dist,packing_ratio`); the
/// packing column repeats the last snapshot and is empty before the first.
pub fn diagnostics_csv(diags: &[IterationDiag]) -> String {
    let mut out = String::from("iteration,min_dist,packing_ratio\n");
    let mut last_packing: Option<f64> = None;
    for d in diags {
        if let Some(p) = d.packing_ratio {
            last_packing = Some(p);
        }
        match last_packing {
            Some(p) => out.push_str(&format!("{},{},{}\n", d.iteration, d.min_goal_distance, p)),
            None => out.push_str(&format!("{},{},\n", d.iteration, d.min_goal_distance)),
        }
    }
    out
}

/// Outer-iteration cost CSV (`outer_iteration,cost`).
pub fn cost_history_csv(history: &[f64]) -> String {
    let mut out = String::from("outer_iteration,cost\n");
    for (i, c) in history.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

/// Collects output files of one run and writes the manifest last.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    started: chrono::DateTime<chrono::Utc>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    scenario: Option<&'a str>,
    resolved_config: serde_json::Value,
    seed: u64,
    version: &'a str,
    started: String,
    finished: String,
    outputs: &'a [String],
}

impl RunDir {
    pub fn create(dir: &Path) -> std::io::Result<RunDir> {
        std::fs::create_dir_all(dir)?;
        Ok(RunDir { dir: dir.to_path_buf(), files: Vec::new(), started: chrono::Utc::now() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        let mut f = std::fs::File::create(self.dir.join(name))?;
        f.write_all(contents.as_bytes())?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, &text)
    }

    /// Write `manifest.json`; call once, after all outputs.
    pub fn finish(
        self,
        command: &str,
        scenario_path: Option<&str>,
        resolved_config: serde_json::Value,
        seed: u64,
    ) -> std::io::Result<()> {
        let manifest = Manifest {
            command,
            scenario: scenario_path,
            resolved_config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            started: self.started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
            outputs: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)
    }
}
