//! Command-line driver: dynamics steps, linearizations, estimator
//! benchmarks, trajectory optimization, RRT planning with ablations, and
//! plan refinement. Every run writes its outputs plus a `manifest.json`
//! with the fully resolved configuration; re-running with the same seed
//! reproduces the output files byte for byte. Worker threads are
//! controlled by `RAYON_NUM_THREADS` (default: all cores).

mod output;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use output::{
    cost_history_csv, diagnostics_csv, dvec, mode_name, rows_of, vec_of, LocalModelOut, PlanOut,
    RunDir, StepOut, TrajectoryOut,
};
use quasidyn::dynamics::{step, StepMode};
use quasidyn::impc::impc_run;
use quasidyn::rrt::{refine_path, rrt_plan, MetricKind, PlanOutput, RefineConfig};
use quasidyn::smoothing::{
    gradient_first_order, gradient_zeroth_order, smoothed_linear_model, surrogate_mean,
    BaselinePolicy, NoiseDistribution, NoiseFamily,
};
use quasidyn::systems::Scenario;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quasidyn", version, about = "Planar quasi-dynamic contact planning toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// One dynamics step from the scenario's initial configuration.
    Step {
        #[command(flatten)]
        common: Common,
        /// Commanded positions (comma separated); defaults to holding the
        /// robot at its initial configuration.
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
        /// exact | smoothed
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Barrier weight for smoothed mode (default: scenario value).
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Locally affine model at the initial configuration.
    Linearize {
        #[command(flatten)]
        common: Common,
        /// Scheme override: analytic | randomized_first | randomized_zeroth | exact.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Estimator convergence tables on closed-form test functions.
    SmoothBench {
        /// Output directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest sample count in the table.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Iterative MPC toward the scenario goal.
    Impc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Reachability-guided RRT toward the scenario goal.
    Rrt {
        #[command(flatten)]
        common: Common,
        /// Ablation: exact linearization instead of smoothing.
        #[arg(long)]
        exact_gradients: bool,
        /// Ablation: disable contact sampling.
        #[arg(long)]
        no_contact_sampling: bool,
        /// Ablation: weighted Euclidean nearest-neighbor metric.
        #[arg(long)]
        global_metric: bool,
        /// Keep growing the tree after the goal is reached.
        #[arg(long)]
        run_to_cap: bool,
    },
    /// Shortcut and re-optimize a stored RRT plan.
    Refine {
        #[command(flatten)]
        common: Common,
        /// plan.json produced by the rrt command.
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run the RRT ablation matrix (full / exact / global / no-contact).
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Seeds per arm.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

enum CliError {
    /// Bad invocation or unreadable/invalid inputs: exit code 2.
    Usage(String),
    /// Solver or planner failure at runtime: exit code 1.
    Run(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Usage(m) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
            CliError::Run(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Run(e.to_string())
}

fn load_scenario(common: &Common) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(&common.scenario)
        .map_err(|e| usage(format!("cannot read {}: {e}", common.scenario.display())))?;
    let mut scn = Scenario::from_json(&text).map_err(usage)?;
    if let Some(seed) = common.seed {
        scn.seed = seed;
        scn.smoothing.seed = seed;
    } else {
        scn.smoothing.seed = scn.seed;
    }
    Ok(scn)
}

fn resolved_json(scn: &Scenario) -> serde_json::Value {
    serde_json::from_str(&scn.to_json()).expect("scenario round-trips")
}

fn holding_input(scn: &Scenario) -> DVector<f64> {
    scn.q_init.rows(scn.model.n_u, scn.model.n_a).into_owned()
}

fn goal_references(scn: &Scenario) -> Vec<DVector<f64>> {
    (0..=scn.impc.horizon).map(|_| scn.q_goal.clone()).collect()
}

fn cmd_step(
    common: &Common,
    u: Option<Vec<f64>>,
    mode: &str,
    kappa: Option<f64>,
) -> Result<(), CliError> {
    let scn = load_scenario(common)?;
    let u = u.map(|v| dvec(&v)).unwrap_or_else(|| holding_input(&scn));
    if u.len() != scn.model.n_a {
        return Err(usage(format!(
            "--u needs {} entries for this system",
            scn.model.n_a
        )));
    }
    let mode = match mode {
        "exact" => StepMode::Exact,
        "smoothed" => StepMode::Smoothed { kappa: kappa.unwrap_or(scn.smoothing.kappa) },
        other => return Err(usage(format!("unknown mode '{other}' (exact | smoothed)"))),
    };
    let result = step(&scn.model, &scn.q_init, &u, scn.h, mode).map_err(run_err)?;
    let out = StepOut::new(&scn.q_init, &u, &result);
    println!("{}", serde_json::to_string_pretty(&out).expect("step serializes"));
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    dir.write_json("step.json", &out).map_err(run_err)?;
    dir.finish("step", common.scenario.to_str(), resolved_json(&scn), scn.seed)
        .map_err(run_err)?;
    Ok(())
}

fn cmd_linearize(common: &Common, scheme: Option<String>) -> Result<(), CliError> {
    let mut scn = load_scenario(common)?;
    if let Some(s) = scheme {
        scn.smoothing.scheme = s;
        scn.smoothing.validate().map_err(usage)?;
    }
    let u = holding_input(&scn);
    let lm = smoothed_linear_model(&scn.model, &scn.q_init, &u, scn.h, &scn.smoothing)
        .map_err(run_err)?;
    let out = LocalModelOut {
        a: rows_of(&lm.a),
        b: rows_of(&lm.b),
        c: vec_of(&lm.c),
        q_nominal: vec_of(&lm.q_nominal),
        u_nominal: vec_of(&lm.u_nominal),
        mode: mode_name(&lm.mode),
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("model serializes"));
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    dir.write_json("local_model.json", &out).map_err(run_err)?;
    dir.finish("linearize", common.scenario.to_str(), resolved_json(&scn), scn.seed)
        .map_err(run_err)?;
    Ok(())
}

fn cmd_smooth_bench(out: &PathBuf, seed: u64, samples: usize) -> Result<(), CliError> {
    let relu = |x: &DVector<f64>| Ok(DVector::from_element(1, x[0].max(0.0)));
    let relu_grad = |x: &DVector<f64>| {
        Ok(nalgebra::DMatrix::from_element(1, 1, if x[0] >= 0.0 { 1.0 } else { 0.0 }))
    };
    let heaviside =
        |x: &DVector<f64>| Ok(DVector::from_element(1, if x[0] >= 0.0 { 1.0 } else { 0.0 }));
    let heaviside_grad = |_: &DVector<f64>| Ok(nalgebra::DMatrix::zeros(1, 1));
    let logistic = NoiseDistribution::isotropic(NoiseFamily::Logistic, 1, 1.0);
    let x0 = DVector::zeros(1);

    let mut csv = String::from("function,quantity,method,samples,estimate,std_error,truth,abs_error\n");
    let mut n = 100;
    while n <= samples {
        let rows: [(&str, &str, &str, f64, f64, f64); 5] = {
            let mean = surrogate_mean(relu, &x0, &logistic, n, seed).map_err(run_err)?;
            let first =
                gradient_first_order(relu_grad, &x0, &logistic, n, seed).map_err(run_err)?;
            let zero = gradient_zeroth_order(
                relu,
                &x0,
                &logistic,
                n,
                BaselinePolicy::NominalValue,
                seed,
            )
            .map_err(run_err)?;
            let hz = gradient_zeroth_order(
                heaviside,
                &x0,
                &logistic,
                n,
                BaselinePolicy::NominalValue,
                seed,
            )
            .map_err(run_err)?;
            let hf = gradient_first_order(heaviside_grad, &x0, &logistic, n, seed)
                .map_err(run_err)?;
            [
                ("relu", "value", "surrogate_mean", mean.mean[0], mean.std_error[0], 2f64.ln()),
                ("relu", "gradient", "first_order", first.jacobian[(0, 0)], first.std_error[(0, 0)], 0.5),
                ("relu", "gradient", "zeroth_order", zero.jacobian[(0, 0)], zero.std_error[(0, 0)], 0.5),
                ("heaviside", "gradient", "zeroth_order", hz.jacobian[(0, 0)], hz.std_error[(0, 0)], 0.25),
                ("heaviside", "gradient", "first_order", hf.jacobian[(0, 0)], hf.std_error[(0, 0)], 0.0),
            ]
        };
        for (f, q, m, est, se, truth) in rows {
            csv.push_str(&format!(
                "{f},{q},{m},{n},{est},{se},{truth},{}\n",
                (est - truth).abs()
            ));
        }
        n *= 10;
    }
    print!("{csv}");
    let mut dir = RunDir::create(out).map_err(run_err)?;
    dir.write("smooth_bench.csv", &csv).map_err(run_err)?;
    dir.finish("smooth-bench", None, serde_json::json!({ "samples": samples }), seed)
        .map_err(run_err)?;
    Ok(())
}

fn cmd_impc(common: &Common, scheme: Option<String>) -> Result<(), CliError> {
    let mut scn = load_scenario(common)?;
    if let Some(s) = scheme {
        scn.smoothing.scheme = s;
        scn.smoothing.validate().map_err(usage)?;
    }
    let refs = goal_references(&scn);
    let hold = holding_input(&scn);
    let inputs: Vec<DVector<f64>> = (0..scn.impc.horizon).map(|_| hold.clone()).collect();
    let result = impc_run(
        &scn.model,
        &scn.q_init,
        &inputs,
        &refs,
        scn.h,
        &scn.impc,
        &scn.smoothing,
    )
    .map_err(run_err)?;
    println!(
        "best cost {:.6} after {} outer iterations",
        result.best_cost, result.outer_iterations
    );
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    dir.write_json("trajectory.json", &TrajectoryOut::new(&scn, &result))
        .map_err(run_err)?;
    dir.write("cost_history.csv", &cost_history_csv(&result.cost_history))
        .map_err(run_err)?;
    dir.finish("impc", common.scenario.to_str(), resolved_json(&scn), scn.seed)
        .map_err(run_err)?;
    Ok(())
}

fn apply_ablations(
    scn: &mut Scenario,
    exact_gradients: bool,
    no_contact_sampling: bool,
    global_metric: bool,
    run_to_cap: bool,
) {
    if exact_gradients {
        scn.smoothing.scheme = "exact".into();
    }
    if no_contact_sampling {
        scn.rrt.contact_sample_prob = 0.0;
    }
    if global_metric {
        scn.rrt.metric = MetricKind::WeightedEuclidean;
    }
    if run_to_cap {
        scn.rrt.stop_at_goal = false;
    }
}

fn cmd_rrt(
    common: &Common,
    exact_gradients: bool,
    no_contact_sampling: bool,
    global_metric: bool,
    run_to_cap: bool,
) -> Result<(), CliError> {
    let mut scn = load_scenario(common)?;
    apply_ablations(&mut scn, exact_gradients, no_contact_sampling, global_metric, run_to_cap);
    let plan = rrt_plan(&scn);
    println!(
        "success={} iterations={} nodes={} goal_iteration={:?}",
        plan.success,
        plan.iterations,
        plan.tree.nodes.len(),
        plan.goal_iteration
    );
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    dir.write_json("plan.json", &PlanOut::new(&plan)).map_err(run_err)?;
    dir.write("diagnostics.csv", &diagnostics_csv(&plan.diagnostics))
        .map_err(run_err)?;
    dir.finish("rrt", common.scenario.to_str(), resolved_json(&scn), scn.seed)
        .map_err(run_err)?;
    if plan.success {
        Ok(())
    } else {
        Err(CliError::Run("planner did not reach the goal".into()))
    }
}

fn cmd_refine(common: &Common, plan_path: &PathBuf) -> Result<(), CliError> {
    let scn = load_scenario(common)?;
    let text = std::fs::read_to_string(plan_path)
        .map_err(|e| usage(format!("cannot read {}: {e}", plan_path.display())))?;
    let plan_out: PlanOut = serde_json::from_str(&text).map_err(usage)?;
    let plan: PlanOutput = plan_out.into_plan(&scn);
    let refined = refine_path(&scn, &plan, &RefineConfig::default()).map_err(run_err)?;
    #[derive(Serialize)]
    struct SegmentOut {
        h: f64,
        refined: bool,
        warning: Option<String>,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    }
    #[derive(Serialize)]
    struct BridgeOut {
        collision_free: bool,
        warning: Option<String>,
        waypoints: Vec<Vec<f64>>,
    }
    #[derive(Serialize)]
    struct RefinedOut {
        segments: Vec<SegmentOut>,
        bridges: Vec<BridgeOut>,
    }
    let out = RefinedOut {
        segments: refined
            .segments
            .iter()
            .map(|s| SegmentOut {
                h: s.h,
                refined: s.refined,
                warning: s.warning.clone(),
                states: s.states.iter().map(vec_of).collect(),
                inputs: s.inputs.iter().map(vec_of).collect(),
            })
            .collect(),
        bridges: refined
            .bridges
            .iter()
            .map(|b| BridgeOut {
                collision_free: b.collision_free,
                warning: b.warning.clone(),
                waypoints: b.waypoints.iter().map(vec_of).collect(),
            })
            .collect(),
    };
    println!(
        "refined {} segments, {} bridges",
        out.segments.len(),
        out.bridges.len()
    );
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    dir.write_json("refined.json", &out).map_err(run_err)?;
    dir.finish("refine", common.scenario.to_str(), resolved_json(&scn), scn.seed)
        .map_err(run_err)?;
    Ok(())
}

fn cmd_ablate(common: &Common, seeds: u64) -> Result<(), CliError> {
    use rayon::prelude::*;
    let base = load_scenario(common)?;
    let arms: [(&str, fn(&mut Scenario)); 4] = [
        ("full", |_| {}),
        ("exact_gradients", |s| s.smoothing.scheme = "exact".into()),
        ("global_metric", |s| s.rrt.metric = MetricKind::WeightedEuclidean),
        ("no_contact_sampling", |s| s.rrt.contact_sample_prob = 0.0),
    ];
    let mut jobs = Vec::new();
    for (arm, mutate) in arms {
        for i in 0..seeds {
            jobs.push((arm, mutate, base.seed + i));
        }
    }
    let results: Vec<(String, u64, PlanOutput)> = jobs
        .par_iter()
        .map(|(arm, mutate, seed)| {
            let mut scn = base.clone();
            scn.seed = *seed;
            scn.smoothing.seed = *seed;
            // Exploration metrics are measured over the full budget.
            scn.rrt.stop_at_goal = false;
            mutate(&mut scn);
            (arm.to_string(), *seed, rrt_plan(&scn))
        })
        .collect();

    #[derive(Serialize)]
    struct ArmSummary {
        arm: String,
        seeds: Vec<u64>,
        successes: usize,
        goal_iterations: Vec<Option<usize>>,
        final_min_distance: Vec<f64>,
        median_packing_at_midpoint: f64,
    }
    let midpoint = base.rrt.max_iters / 2;
    let mut dir = RunDir::create(&common.out).map_err(run_err)?;
    let mut summaries = Vec::new();
    for (arm, _) in arms {
        let runs: Vec<&(String, u64, PlanOutput)> =
            results.iter().filter(|(a, _, _)| a == arm).collect();
        let mut packs: Vec<f64> = runs
            .iter()
            .map(|(_, _, p)| {
                p.diagnostics
                    .iter()
                    .filter(|d| d.iteration <= midpoint)
                    .rev()
                    .find_map(|d| d.packing_ratio)
                    .unwrap_or(0.0)
            })
            .collect();
        packs.sort_by(|a, b| a.partial_cmp(b).expect("finite packing"));
        for (_, seed, p) in &runs {
            dir.write(
                &format!("{arm}_seed{seed}.csv"),
                &diagnostics_csv(&p.diagnostics),
            )
            .map_err(run_err)?;
        }
        summaries.push(ArmSummary {
            arm: arm.to_string(),
            seeds: runs.iter().map(|(_, s, _)| *s).collect(),
            successes: runs.iter().filter(|(_, _, p)| p.success).count(),
            goal_iterations: runs.iter().map(|(_, _, p)| p.goal_iteration).collect(),
            final_min_distance: runs
                .iter()
                .map(|(_, _, p)| {
                    p.diagnostics.last().map(|d| d.min_goal_distance).unwrap_or(f64::NAN)
                })
                .collect(),
            median_packing_at_midpoint: packs[packs.len() / 2],
        });
        let s = summaries.last().expect("just pushed");
        println!(
            "{arm:>20}: {}/{} successes, median packing@{midpoint} = {:.3}",
            s.successes,
            runs.len(),
            s.median_packing_at_midpoint
        );
    }
    dir.write_json("summary.json", &summaries).map_err(run_err)?;
    dir.finish("ablate", common.scenario.to_str(), resolved_json(&base), base.seed)
        .map_err(run_err)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Step { common, u, mode, kappa } => cmd_step(common, u.clone(), mode, *kappa),
        Cmd::Linearize { common, scheme } => cmd_linearize(common, scheme.clone()),
        Cmd::SmoothBench { out, seed, samples } => cmd_smooth_bench(out, *seed, *samples),
        Cmd::Impc { common, scheme } => cmd_impc(common, scheme.clone()),
        Cmd::Rrt { common, exact_gradients, no_contact_sampling, global_metric, run_to_cap } => {
            cmd_rrt(common, *exact_gradients, *no_contact_sampling, *global_metric, *run_to_cap)
        }
        Cmd::Refine { common, plan } => cmd_refine(common, plan),
        Cmd::Ablate { common, seeds } => cmd_ablate(common, *seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
