//! Planner-level invariants on real runs: exploration monotonicity, metric
//! geometry, and refinement consistency.

use nalgebra::DVector;
use quasidyn::dynamics::step_exact;
use quasidyn::impc::rollout;
use quasidyn::rrt::{refine_path, rrt_plan, NodeModel, RefineConfig};
use quasidyn::smoothing::smoothed_linear_model;
use quasidyn::systems::bundled_scenario;

#[test]
fn packing_snapshots_are_nondecreasing() {
    let mut scn = bundled_scenario("planar_hand_fixed_y").unwrap();
    scn.rrt.max_iters = 300;
    scn.rrt.stop_at_goal = false;
    scn.rrt.packing_interval = 25;
    let out = rrt_plan(&scn);
    let packs: Vec<f64> = out.diagnostics.iter().filter_map(|d| d.packing_ratio).collect();
    assert!(packs.len() >= 10);
    for w in packs.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "packing decreased: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn reachable_volume_shrinks_away_from_contact() {
    // Both fingertips on the puck vs retracted by 0.2 m: the reachability
    // ellipsoid of the touching grasp has a strictly larger volume.
    use quasidyn::geometry::Pose2;
    use quasidyn::systems::{ik_2link, ElbowBranch};
    let scn = bundled_scenario("planar_hand_fixed_y").unwrap();
    let model = &scn.model;
    let puck_center = model.bodies[0].kinematics.pose(&scn.q_init).position;
    // Fingertip targets toward the lower puck surface stay inside both
    // fingers' reachable annuli at the touching and the retracted radius.
    let fingers = [
        (nalgebra::Vector2::new(-0.25, 0.0), -1.6, 0usize),
        (nalgebra::Vector2::new(0.25, 0.0), -1.54, 2usize),
    ];
    // Pick, per finger, an elbow branch that keeps the whole link chain
    // clear of the puck at both radii.
    let pose_at = |extra: f64, branches: [ElbowBranch; 2]| -> DVector<f64> {
        let mut q = scn.q_init.clone();
        let reach = 0.25 + 0.04 + 0.001 + extra;
        for ((base, angle, joint), branch) in fingers.iter().zip(branches) {
            let dir = nalgebra::Vector2::new(f64::cos(*angle), f64::sin(*angle));
            let target = puck_center + reach * dir;
            let base_pose = Pose2::new(base.x, base.y, 0.0);
            let (t1, t2) = ik_2link(&target, [0.35, 0.25], &base_pose, branch).unwrap();
            q[model.n_u + joint] = t1;
            q[model.n_u + joint + 1] = t2;
        }
        q
    };
    let all = [ElbowBranch::Up, ElbowBranch::Down];
    let branches = all
        .iter()
        .flat_map(|&l| all.iter().map(move |&r| [l, r]))
        .find(|&b| {
            model.min_phi(&pose_at(0.0, b)).unwrap() >= 0.0
                && model.min_phi(&pose_at(0.2, b)).unwrap() > 0.15
        })
        .expect("some branch pair is collision free");
    let touching = pose_at(0.0, branches);
    let retracted = pose_at(0.2, branches);
    assert!(model.min_phi(&touching).unwrap() >= 0.0, "touching pose penetrates");
    assert!(model.min_phi(&retracted).unwrap() > 0.15, "retraction did not open a gap");
    let node_model = |q: &DVector<f64>| {
        let u = q.rows(model.n_u, model.n_a).into_owned();
        let lm = smoothed_linear_model(model, q, &u, scn.h, &scn.smoothing).unwrap();
        NodeModel::from_local_model(&lm, model.n_u, scn.rrt.gamma)
    };
    let near = node_model(&touching);
    let far = node_model(&retracted);
    assert!(
        near.det_sigma > far.det_sigma,
        "reachable volume did not shrink: near {:.3e} vs far {:.3e}",
        near.det_sigma,
        far.det_sigma
    );
}

#[test]
fn refinement_of_a_real_plan_is_dynamically_consistent() {
    let mut scn = bundled_scenario("planar_hand_fixed_y").unwrap();
    scn.seed = 0;
    let plan = rrt_plan(&scn);
    assert!(plan.success, "planner failed; cannot exercise refinement");
    let cfg = RefineConfig::default();
    let refined = refine_path(&scn, &plan, &cfg).unwrap();
    assert!(!refined.segments.is_empty());
    for seg in &refined.segments {
        // Stored states re-roll exactly under the segment's step size.
        let re = rollout(&scn.model, &seg.states[0], &seg.inputs, seg.h).unwrap();
        for (a, b) in re.iter().zip(&seg.states) {
            assert!((a - b).amax() <= 1e-8, "refined segment does not re-roll");
        }
        if seg.refined {
            assert!((seg.h - scn.h / cfg.substep_division as f64).abs() < 1e-15);
        }
    }
    // Bridges hold the object fixed.
    for bridge in &refined.bridges {
        let first = &bridge.waypoints[0];
        for w in &bridge.waypoints {
            assert!(
                (w.rows(0, scn.model.n_u) - first.rows(0, scn.model.n_u)).amax() <= 1e-12,
                "bridge moved the object"
            );
        }
    }
}

#[test]
fn extend_commands_are_replayable_after_serialization_precision() {
    // Inputs survive a JSON round trip bit-exactly (shortest float form),
    // so stored edges re-step exactly even through files.
    let mut scn = bundled_scenario("planar_hand_fixed_y").unwrap();
    scn.rrt.max_iters = 40;
    let out = rrt_plan(&scn);
    for node in out.tree.nodes.iter().skip(1) {
        if let (Some(parent), Some(u)) = (node.parent, node.input.as_ref()) {
            let text = serde_json::to_string(&u.iter().copied().collect::<Vec<f64>>()).unwrap();
            let back: Vec<f64> = serde_json::from_str(&text).unwrap();
            let u2 = DVector::from_vec(back);
            let re = step_exact(&scn.model, &out.tree.nodes[parent].q, &u2, scn.h).unwrap();
            for i in 0..node.q.len() {
                assert_eq!(re.q_next[i].to_bits(), node.q[i].to_bits());
            }
        }
    }
}
