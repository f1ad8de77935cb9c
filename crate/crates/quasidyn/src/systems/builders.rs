//! Bundled planar systems.
//!
//! Each builder produces a validated [`SystemModel`] from a scalar parameter
//! map; unknown parameter keys are rejected. Physical defaults are chosen at
//! desk scale (meters, kilograms, N/m) so all bundled scenarios are
//! self-consistent.

use super::ik::{fk_2link, ik_2link, ElbowBranch};
use super::SystemsError;
use crate::dynamics::{ContactPairDef, SystemModel};
use crate::geometry::{Body, BodyKinematics, CollisionGeometry, Pose2};
use nalgebra::{DMatrix, DVector, Vector2};
use std::collections::BTreeMap;
use std::collections::BTreeSet;

/// Parameter map with explicit defaults and unknown-key detection.
struct Params<'a> {
    map: &'a BTreeMap<String, f64>,
    used: BTreeSet<String>,
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, f64>) -> Self {
        Params { map, used: BTreeSet::new() }
    }

    fn get(&mut self, key: &str, default: f64) -> f64 {
        self.used.insert(key.to_string());
        self.map.get(key).copied().unwrap_or(default)
    }

    fn finish(self, system: &str) -> Result<(), SystemsError> {
        for k in self.map.keys() {
            if !self.used.contains(k) {
                return Err(SystemsError::UnknownParam {
                    system: system.to_string(),
                    param: k.clone(),
                });
            }
        }
        Ok(())
    }
}

fn validated(model: SystemModel) -> Result<SystemModel, SystemsError> {
    model.validate()?;
    Ok(model)
}

/// Actuated cart pressed against a wall; the signed distance equals the
/// cart coordinate. One frictionless contact.
pub fn cart_wall(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    let mut p = Params::new(params);
    let k = p.get("k_a", 100.0);
    let margin = p.get("margin", 1e3);
    p.finish("cart_wall")?;
    let r = 0.05;
    let model = SystemModel {
        name: "cart_wall".into(),
        n_u: 0,
        n_a: 1,
        m_u: DMatrix::zeros(0, 0),
        k_a: DVector::from_element(1, k),
        tau_u: DVector::zeros(0),
        tau_a: DVector::zeros(1),
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
        margin,
        joint_limits: vec![(-10.0, 10.0)],
        angular_u: vec![],
    };
    validated(model)
}

/// Unactuated block in front of a wall: stepping acts as a projection onto
/// the feasible half-line.
pub fn block_wall(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    let mut p = Params::new(params);
    let mass = p.get("mass", 1.0);
    let eps = p.get("eps_reg", 1.0);
    let margin = p.get("margin", 1e3);
    p.finish("block_wall")?;
    let r = 0.05;
    let model = SystemModel {
        name: "block_wall".into(),
        n_u: 1,
        n_a: 0,
        m_u: DMatrix::from_element(1, 1, mass),
        k_a: DVector::zeros(0),
        tau_u: DVector::zeros(1),
        tau_a: DVector::zeros(0),
        eps_reg: eps,
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
        margin,
        joint_limits: vec![(-10.0, 10.0)],
        angular_u: vec![false],
    };
    validated(model)
}

/// Unactuated cart on a frictionless rail with an actuated ball that can
/// press on its top surface through a frictional contact. Configuration is
/// `(x_cart, x_ball, y_ball)`.
pub fn cart_ball(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    let mut p = Params::new(params);
    let mass = p.get("mass", 1.0);
    let k = p.get("k_a", 40.0);
    let mu = p.get("mu", 0.5);
    let eps = p.get("eps_reg", 1.0);
    let margin = p.get("margin", 1e3);
    let radius = p.get("ball_radius", 0.1);
    p.finish("cart_ball")?;
    let model = SystemModel {
        name: "cart_ball".into(),
        n_u: 1,
        n_a: 2,
        m_u: DMatrix::from_element(1, 1, mass),
        k_a: DVector::from_element(2, k),
        tau_u: DVector::zeros(1),
        tau_a: DVector::zeros(2),
        eps_reg: eps,
        bodies: vec![
            Body {
                name: "cart".into(),
                kinematics: BodyKinematics::PrismaticX { dof: 0, origin: Vector2::zeros() },
                geoms: vec![CollisionGeometry::HalfPlane {
                    normal: Vector2::new(0.0, 1.0),
                    offset: 0.0,
                }],
            },
            Body {
                name: "ball".into(),
                kinematics: BodyKinematics::PrismaticXY { dof: [1, 2], origin: Vector2::zeros() },
                geoms: vec![CollisionGeometry::Disc { radius, offset: Vector2::zeros() }],
            },
        ],
        pairs: vec![ContactPairDef { body_a: 1, geom_a: 0, body_b: 0, geom_b: 0, mu }],
        margin,
        joint_limits: vec![(-10.0, 10.0); 3],
        angular_u: vec![false],
    };
    validated(model)
}

/// Free planar box (as an inscribed disc array) pushed by a disc that
/// translates in the plane. Configuration is `(x, y, theta, px, py)`.
pub fn planar_pushing(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    let mut p = Params::new(params);
    let mass = p.get("mass", 1.0);
    let k = p.get("k_a", 100.0);
    let mu = p.get("mu", 0.5);
    let eps = p.get("eps_reg", 1e-4);
    let margin = p.get("margin", 0.5);
    let hx = p.get("box_half_x", 0.25);
    let hy = p.get("box_half_y", 0.15);
    let density = p.get("box_disc_density", 8.0);
    let pusher_r = p.get("pusher_radius", 0.05);
    // The pusher command is relative to its mount, placed a small gap to
    // the left of the box start: u = 0 holds the pusher at its start pose.
    let gap = p.get("pusher_gap", 0.02);
    p.finish("planar_pushing")?;
    let mount = Vector2::new(-(hx + pusher_r + gap), 0.0);
    let inertia = mass * (hx * hx + hy * hy) / 3.0;
    let model = SystemModel {
        name: "planar_pushing".into(),
        n_u: 3,
        n_a: 2,
        m_u: DMatrix::from_diagonal(&DVector::from_vec(vec![mass, mass, inertia])),
        k_a: DVector::from_element(2, k),
        tau_u: DVector::zeros(3),
        tau_a: DVector::zeros(2),
        eps_reg: eps,
        bodies: vec![
            Body {
                name: "box".into(),
                kinematics: BodyKinematics::FreePlanar { dof: [0, 1, 2] },
                geoms: vec![CollisionGeometry::box_array(Vector2::new(hx, hy), density)?],
            },
            Body {
                name: "pusher".into(),
                kinematics: BodyKinematics::PrismaticXY { dof: [3, 4], origin: mount },
                geoms: vec![CollisionGeometry::Disc { radius: pusher_r, offset: Vector2::zeros() }],
            },
        ],
        pairs: vec![ContactPairDef { body_a: 1, geom_a: 0, body_b: 0, geom_b: 0, mu }],
        margin,
        joint_limits: vec![
            (-2.0, 2.0),
            (-2.0, 2.0),
            (-10.0, 10.0),
            (-1.5, 1.5),
            (-1.5, 1.5),
        ],
        angular_u: vec![false, false, true],
    };
    validated(model)
}

struct HandLayout {
    puck_radius: f64,
    puck_y: f64,
    link1: f64,
    link2: f64,
    cap_radius: f64,
    base_x: f64,
}

fn hand_bodies(layout: &HandLayout, puck: Body, first_joint_dof: usize) -> Vec<Body> {
    let mut bodies = vec![puck];
    for (side, sign) in [("left", -1.0), ("right", 1.0)] {
        let base = Vector2::new(sign * layout.base_x, 0.0);
        let dof = [first_joint_dof + if sign < 0.0 { 0 } else { 2 }, 0];
        let dof = [dof[0], dof[0] + 1];
        let lengths = [layout.link1, layout.link2];
        for link in 0..2 {
            let len = lengths[link];
            bodies.push(Body {
                name: format!("{side}_link{}", link + 1),
                kinematics: BodyKinematics::TwoLink { base, dof, lengths, link },
                geoms: vec![CollisionGeometry::Capsule {
                    a: Vector2::zeros(),
                    b: Vector2::new(len, 0.0),
                    radius: layout.cap_radius,
                }],
            });
        }
    }
    bodies
}

fn hand_pairs(mu: f64) -> Vec<ContactPairDef> {
    (1..=4)
        .map(|b| ContactPairDef { body_a: 0, geom_a: 0, body_b: b, geom_b: 0, mu })
        .collect()
}

/// Joint angles putting both fingertips on the puck circle with the given
/// clearance; used for initial configurations.
pub fn hand_grasp_angles(
    model: &SystemModel,
    puck_center: Vector2<f64>,
    clearance: f64,
) -> Result<Vec<f64>, SystemsError> {
    let mut out = Vec::new();
    let (puck_r, cap_r) = {
        let r = match &model.bodies[0].geoms[0] {
            CollisionGeometry::Disc { radius, .. } => *radius,
            _ => unreachable!("puck is a disc"),
        };
        let c = match &model.bodies[1].geoms[0] {
            CollisionGeometry::Capsule { radius, .. } => *radius,
            _ => unreachable!("links are capsules"),
        };
        (r, c)
    };
    for (body_idx, angle) in [(1usize, -2.1), (3usize, -1.05)] {
        let BodyKinematics::TwoLink { base, lengths, .. } = model.bodies[body_idx].kinematics
        else {
            unreachable!("finger body")
        };
        let dir = Vector2::new(f64::cos(angle), f64::sin(angle));
        let target = puck_center + (puck_r + cap_r + clearance) * dir;
        let base_pose = Pose2::new(base.x, base.y, 0.0);
        let branch = if body_idx == 1 { ElbowBranch::Down } else { ElbowBranch::Up };
        let (t1, t2) = ik_2link(&target, lengths, &base_pose, branch)?;
        debug_assert!((fk_2link((t1, t2), lengths, &base_pose) - target).norm() < 1e-9);
        out.push(t1);
        out.push(t2);
    }
    Ok(out)
}

fn hand_model(
    name: &str,
    params: &BTreeMap<String, f64>,
    fixed_y: bool,
) -> Result<SystemModel, SystemsError> {
    let mut p = Params::new(params);
    let mass = p.get("mass", 1.0);
    let k = p.get("k_a", 100.0);
    let mu = p.get("mu", 0.5);
    let eps = p.get("eps_reg", 1e-4);
    let margin = p.get("margin", 0.5);
    let layout = HandLayout {
        puck_radius: p.get("puck_radius", 0.25),
        puck_y: p.get("puck_y", 0.45),
        link1: p.get("link1", 0.35),
        link2: p.get("link2", 0.25),
        cap_radius: p.get("cap_radius", 0.04),
        base_x: p.get("base_x", 0.25),
    };
    p.finish(name)?;
    let inertia = 0.5 * mass * layout.puck_radius * layout.puck_radius;
    let puck_geom =
        CollisionGeometry::Disc { radius: layout.puck_radius, offset: Vector2::zeros() };
    let (n_u, puck, m_u, angular_u, mut limits) = if fixed_y {
        (
            2,
            Body {
                name: "puck".into(),
                kinematics: BodyKinematics::PlanarFixedY { dof: [0, 1], y: layout.puck_y },
                geoms: vec![puck_geom],
            },
            DMatrix::from_diagonal(&DVector::from_vec(vec![mass, inertia])),
            vec![false, true],
            vec![(-2.0, 2.0), (-10.0, 10.0)],
        )
    } else {
        (
            3,
            Body {
                name: "puck".into(),
                kinematics: BodyKinematics::FreePlanar { dof: [0, 1, 2] },
                geoms: vec![puck_geom],
            },
            DMatrix::from_diagonal(&DVector::from_vec(vec![mass, mass, inertia])),
            vec![false, false, true],
            vec![(-2.0, 2.0), (-2.0, 2.0), (-10.0, 10.0)],
        )
    };
    limits.extend(std::iter::repeat((-2.9, 2.9)).take(4));
    let model = SystemModel {
        name: name.into(),
        n_u,
        n_a: 4,
        m_u,
        k_a: DVector::from_element(4, k),
        tau_u: DVector::zeros(n_u),
        tau_a: DVector::zeros(4),
        eps_reg: eps,
        bodies: hand_bodies(&layout, puck, n_u),
        pairs: hand_pairs(mu),
        margin,
        joint_limits: limits,
        angular_u,
    };
    validated(model)
}

/// Two 2-link fingers reorienting a free planar puck.
pub fn planar_hand(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    hand_model("planar_hand", params, false)
}

/// Planar hand with the puck height frozen: the object configuration is
/// `(x, theta)`.
pub fn planar_hand_fixed_y(params: &BTreeMap<String, f64>) -> Result<SystemModel, SystemsError> {
    hand_model("planar_hand_fixed_y", params, true)
}
