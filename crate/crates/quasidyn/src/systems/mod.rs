//! Bundled system models, scenario ingestion, inverse kinematics and
//! contact samplers. Systems are registered by name and built from scalar
//! parameter maps.

mod builders;
mod ik;
mod sampler;
mod scenario;

pub use builders::hand_grasp_angles;
pub use ik::{fk_2link, ik_2link, ElbowBranch, IkError};
pub use sampler::{contact_sample, ContactSampleResult, SampleError};
pub use scenario::{bundled_scenario, bundled_scenarios, Scenario, ScenarioError};

use crate::dynamics::{DynamicsError, SystemModel};
use nalgebra::DVector;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemsError {
    #[error("unknown system '{0}' (available: cart_wall, block_wall, cart_ball, planar_pushing, planar_hand, planar_hand_fixed_y)")]
    UnknownSystem(String),
    #[error("unknown parameter '{param}' for system '{system}'")]
    UnknownParam { system: String, param: String },
    #[error(transparent)]
    Model(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Ik(#[from] IkError),
}

type Builder = fn(&BTreeMap<String, f64>) -> Result<SystemModel, SystemsError>;

static SYSTEMS: [(&str, Builder); 6] = [
    ("cart_wall", builders::cart_wall),
    ("block_wall", builders::block_wall),
    ("cart_ball", builders::cart_ball),
    ("planar_pushing", builders::planar_pushing),
    ("planar_hand", builders::planar_hand),
    ("planar_hand_fixed_y", builders::planar_hand_fixed_y),
];

pub fn system_names() -> Vec<&'static str> {
    SYSTEMS.iter().map(|(n, _)| *n).collect()
}

/// Build a bundled system by name with parameter overrides.
pub fn build_system(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<SystemModel, SystemsError> {
    let builder = SYSTEMS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, b)| *b)
        .ok_or_else(|| SystemsError::UnknownSystem(name.to_string()))?;
    builder(params)
}

/// Canonical non-penetrating start configuration for a bundled system
/// (used to generate the bundled scenarios and by tests).
pub fn default_initial_configuration(model: &SystemModel) -> Result<DVector<f64>, SystemsError> {
    use crate::geometry::{BodyKinematics, CollisionGeometry};
    let q = match model.name.as_str() {
        "cart_wall" => DVector::from_vec(vec![0.5]),
        "block_wall" => DVector::from_vec(vec![0.3]),
        "cart_ball" => {
            let r = match model.bodies[1].geoms[0] {
                CollisionGeometry::Disc { radius, .. } => radius,
                _ => 0.1,
            };
            DVector::from_vec(vec![0.0, 0.0, r])
        }
        // The pusher mount already sits at its start pose: zero command.
        "planar_pushing" => DVector::zeros(5),
        "planar_hand" | "planar_hand_fixed_y" => {
            let puck_y = match model.bodies[0].kinematics {
                BodyKinematics::PlanarFixedY { y, .. } => y,
                _ => 0.45,
            };
            let center = nalgebra::Vector2::new(0.0, puck_y);
            let joints = hand_grasp_angles(model, center, 0.05)?;
            let mut q = DVector::zeros(model.n_q());
            if model.n_u == 3 {
                q[1] = puck_y;
            }
            for (i, v) in joints.iter().enumerate() {
                q[model.n_u + i] = *v;
            }
            q
        }
        other => return Err(SystemsError::UnknownSystem(other.to_string())),
    };
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_counts_match_the_bundled_set() {
        let expect = [
            ("cart_wall", 0, 1),
            ("block_wall", 1, 0),
            ("cart_ball", 1, 2),
            ("planar_pushing", 3, 2),
            ("planar_hand", 3, 4),
            ("planar_hand_fixed_y", 2, 4),
        ];
        for (name, n_u, n_a) in expect {
            let m = build_system(name, &BTreeMap::new()).unwrap();
            assert_eq!((m.n_u, m.n_a), (n_u, n_a), "{name}");
            m.validate().unwrap();
        }
    }

    #[test]
    fn unknown_system_and_param_are_rejected() {
        assert!(matches!(
            build_system("allegro_hand", &BTreeMap::new()),
            Err(SystemsError::UnknownSystem(_))
        ));
        let mut params = BTreeMap::new();
        params.insert("k_b".to_string(), 1.0);
        assert!(matches!(
            build_system("cart_wall", &params),
            Err(SystemsError::UnknownParam { .. })
        ));
    }

    #[test]
    fn parameter_overrides_apply() {
        let mut params = BTreeMap::new();
        params.insert("k_a".to_string(), 1.0);
        let m = build_system("cart_wall", &params).unwrap();
        assert_eq!(m.k_a[0], 1.0);
        assert_eq!(m.n_a, 1);
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn default_configurations_do_not_penetrate() {
        for (name, _) in SYSTEMS.iter() {
            let m = build_system(name, &BTreeMap::new()).unwrap();
            let q = default_initial_configuration(&m).unwrap();
            let phi = m.min_phi(&q).unwrap();
            assert!(phi >= -1e-9, "{name}: phi = {phi}");
            assert!(m.within_limits(&q), "{name} outside limits");
        }
    }

    #[test]
    fn fixed_y_object_coordinates_are_x_and_theta() {
        let m = build_system("planar_hand_fixed_y", &BTreeMap::new()).unwrap();
        assert_eq!(m.n_u, 2);
        assert_eq!(m.angular_u, vec![false, true]);
        // Moving q[0] translates the puck, q[1] spins it in place.
        let q0 = default_initial_configuration(&m).unwrap();
        let mut q1 = q0.clone();
        q1[0] += 0.1;
        let p0 = m.bodies[0].kinematics.pose(&q0);
        let p1 = m.bodies[0].kinematics.pose(&q1);
        assert!((p1.position.x - p0.position.x - 0.1).abs() < 1e-12);
        assert_eq!(p1.position.y, p0.position.y);
    }
}
