//! Regenerates the bundled scenario files from the system builders so the
//! stored initial configurations (including grasp IK angles) stay in sync
//! with the models.

use nalgebra::DVector;
use quasidyn::impc::ImpcConfig;
use quasidyn::rrt::RrtConfig;
use quasidyn::smoothing::{NoiseConfig, NoiseFamily, SmoothingConfig};
use quasidyn::systems::{build_system, default_initial_configuration, Scenario};
use std::collections::BTreeMap;
use std::f64::consts::PI;

fn write(scn: &Scenario) {
    let path = format!("scenarios/{}.scenario", scn.system_name);
    std::fs::write(&path, scn.to_json() + "\n").expect("write scenario");
    println!("wrote {path}");
}

fn gaussian(scale_u: f64) -> NoiseConfig {
    NoiseConfig { family: NoiseFamily::Gaussian, scale_u, scale_q: Some(0.1 * scale_u) }
}

fn main() {
    let no_params: BTreeMap<String, f64> = BTreeMap::new();

    // cart_wall: one actuated DOF against a wall.
    {
        let model = build_system("cart_wall", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let scn = Scenario {
            system_name: "cart_wall".into(),
            params: no_params.clone(),
            q_init,
            q_goal: DVector::from_vec(vec![0.0]),
            workspace: vec![],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "analytic".into(),
                kappa: 100.0,
                noise: gaussian(0.1),
                samples: 100,
                ..Default::default()
            },
            impc: ImpcConfig { horizon: 5, ..Default::default() },
            rrt: RrtConfig::default(),
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }

    // block_wall: unactuated block projection system.
    {
        let model = build_system("block_wall", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let scn = Scenario {
            system_name: "block_wall".into(),
            params: no_params.clone(),
            q_init,
            q_goal: DVector::from_vec(vec![0.0]),
            workspace: vec![[-1.0, 1.0]],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "randomized_zeroth".into(),
                noise: gaussian(0.1),
                samples: 1000,
                ..Default::default()
            },
            impc: ImpcConfig { horizon: 5, ..Default::default() },
            rrt: RrtConfig::default(),
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }

    // cart_ball: frictional dragging of a cart by a pressed ball.
    {
        let model = build_system("cart_ball", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let scn = Scenario {
            system_name: "cart_ball".into(),
            params: no_params.clone(),
            q_init: q_init.clone(),
            q_goal: DVector::from_vec(vec![0.3, 0.3, q_init[2]]),
            workspace: vec![[-1.5, 1.5]],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "analytic".into(),
                kappa: 100.0,
                noise: gaussian(0.1),
                samples: 100,
                ..Default::default()
            },
            impc: ImpcConfig {
                horizon: 10,
                q_weights: vec![10.0, 0.0, 0.0],
                r_weights: vec![0.01, 0.01],
                terminal_weights: vec![100.0, 0.0, 0.0],
                ..Default::default()
            },
            rrt: RrtConfig::default(),
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }

    // planar_pushing: push the box 0.3 m in +x. The box cost block is
    // eps*M/h = 1e-3, so informative barrier weights start around 1e6
    // (equilibrium gap 1/sqrt(kappa * 1e-3) ~ 3 cm).
    {
        let model = build_system("planar_pushing", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let scn = Scenario {
            system_name: "planar_pushing".into(),
            params: no_params.clone(),
            q_init: q_init.clone(),
            q_goal: DVector::from_vec(vec![0.3, 0.0, 0.0, 0.0, 0.0]),
            workspace: vec![[-0.6, 0.8], [-0.5, 0.5], [-PI, PI]],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "analytic".into(),
                kappa: 1e6,
                noise: gaussian(0.1),
                samples: 100,
                ..Default::default()
            },
            impc: ImpcConfig {
                horizon: 10,
                q_weights: vec![10.0, 10.0, 1.0, 0.0, 0.0],
                r_weights: vec![0.01, 0.01],
                terminal_weights: vec![100.0, 100.0, 10.0, 0.0, 0.0],
                u_trust: 0.2,
                x_trust: 1.0,
                max_outer: 20,
                ..Default::default()
            },
            rrt: RrtConfig {
                step_size: 0.25,
                goal_tolerance: 0.1,
                global_metric_weights: vec![1.0, 1.0, 0.0725],
                ..Default::default()
            },
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }

    // planar_hand: reorient the free puck.
    {
        let model = build_system("planar_hand", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let mut q_goal = q_init.clone();
        q_goal[2] = PI / 2.0;
        let scn = Scenario {
            system_name: "planar_hand".into(),
            params: no_params.clone(),
            q_init,
            q_goal,
            workspace: vec![[-0.4, 0.4], [0.25, 0.65], [-PI, PI]],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "analytic".into(),
                kappa: 1e6,
                noise: gaussian(0.1),
                samples: 100,
                ..Default::default()
            },
            impc: ImpcConfig {
                horizon: 10,
                q_weights: vec![10.0, 10.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                r_weights: vec![0.01; 4],
                terminal_weights: vec![100.0, 100.0, 10.0, 0.0, 0.0, 0.0, 0.0],
                ..Default::default()
            },
            rrt: RrtConfig {
                step_size: 0.2,
                goal_tolerance: 0.2,
                eta: 0.01,
                global_metric_weights: vec![1.0, 1.0, 0.0625],
                ..Default::default()
            },
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }

    // planar_hand_fixed_y: slide and rotate the puck.
    {
        let model = build_system("planar_hand_fixed_y", &no_params).unwrap();
        let q_init = default_initial_configuration(&model).unwrap();
        let mut q_goal = q_init.clone();
        q_goal[0] += 0.2;
        q_goal[1] = PI / 2.0;
        let scn = Scenario {
            system_name: "planar_hand_fixed_y".into(),
            params: no_params.clone(),
            q_init,
            q_goal,
            workspace: vec![[-0.3, 0.3], [-PI, PI]],
            h: 0.1,
            smoothing: SmoothingConfig {
                scheme: "analytic".into(),
                kappa: 1e6,
                noise: gaussian(0.1),
                samples: 100,
                ..Default::default()
            },
            impc: ImpcConfig {
                horizon: 10,
                q_weights: vec![10.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                r_weights: vec![0.01; 4],
                terminal_weights: vec![100.0, 10.0, 0.0, 0.0, 0.0, 0.0],
                ..Default::default()
            },
            rrt: RrtConfig {
                max_iters: 1000,
                step_size: 0.2,
                goal_bias: 0.1,
                contact_sample_prob: 0.3,
                goal_tolerance: 0.2,
                eta: 0.01,
                packing_samples: 1000,
                packing_interval: 50,
                global_metric_weights: vec![1.0, 0.0625],
                ..Default::default()
            },
            seed: 0,
            model,
        };
        scn.validate().unwrap();
        write(&scn);
    }
}
