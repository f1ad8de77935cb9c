//! Contact samplers: re-place the robot in contact with the object while
//! freezing the object configuration (a "regrasp" move for planners).

use super::ik::{ik_2link, ElbowBranch};
use crate::dynamics::{step_exact, SystemModel};
use crate::geometry::{Body, BodyKinematics, CollisionGeometry, Pose2};
use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("system '{0}' has no contact sampler")]
    Unsupported(String),
    #[error("no valid contact sample after {attempts} attempts (last: {last})")]
    Failed { attempts: usize, last: String },
}

/// Result of one contact sample: same object configuration, new robot
/// configuration touching the object.
#[derive(Debug, Clone)]
pub struct ContactSampleResult {
    pub q_new: DVector<f64>,
    /// Smallest signed distance over all pairs at the sampled configuration.
    pub min_phi: f64,
    pub attempts: usize,
}

const CLEARANCE: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 32;

struct Finger {
    base: Vector2<f64>,
    lengths: [f64; 2],
    dof: [usize; 2],
    tip_radius: f64,
}

enum SamplerKind {
    /// Two-link fingers around a disc object.
    Fingers { object: usize, fingers: Vec<Finger> },
    /// Translating disc pusher against a box boundary.
    Pusher {
        object: usize,
        pusher_dof: [usize; 2],
        pusher_origin: Vector2<f64>,
        pusher_radius: f64,
    },
}

fn classify(model: &SystemModel) -> Option<SamplerKind> {
    let mut fingers = Vec::new();
    let mut pusher = None;
    let mut object = None;
    for (i, body) in model.bodies.iter().enumerate() {
        match (&body.kinematics, body.geoms.first()) {
            (
                BodyKinematics::TwoLink { base, dof, lengths, link: 1 },
                Some(CollisionGeometry::Capsule { radius, .. }),
            ) => fingers.push(Finger {
                base: *base,
                lengths: *lengths,
                dof: *dof,
                tip_radius: *radius,
            }),
            (
                BodyKinematics::PrismaticXY { dof, origin },
                Some(CollisionGeometry::Disc { radius, .. }),
            ) => {
                pusher = Some((*dof, *origin, *radius));
            }
            (BodyKinematics::FreePlanar { .. } | BodyKinematics::PlanarFixedY { .. }, Some(_)) => {
                object = Some(i);
            }
            _ => {}
        }
    }
    let object = object?;
    if !fingers.is_empty() {
        return Some(SamplerKind::Fingers { object, fingers });
    }
    if let Some((pusher_dof, pusher_origin, pusher_radius)) = pusher {
        if matches!(model.bodies[object].geoms[0], CollisionGeometry::DiscArray { .. }) {
            return Some(SamplerKind::Pusher { object, pusher_dof, pusher_origin, pusher_radius });
        }
    }
    None
}

fn object_disc_radius(body: &Body) -> Option<f64> {
    match body.geoms.first() {
        Some(CollisionGeometry::Disc { radius, .. }) => Some(*radius),
        _ => None,
    }
}

/// Uniform point on a rectangle boundary with its outward normal (local frame).
fn sample_rect_boundary(
    hx: f64,
    hy: f64,
    rng: &mut ChaCha8Rng,
) -> (Vector2<f64>, Vector2<f64>) {
    let per = 4.0 * (hx + hy);
    let mut s = rng.random_range(0.0..per);
    if s < 2.0 * hx {
        return (Vector2::new(s - hx, hy), Vector2::new(0.0, 1.0));
    }
    s -= 2.0 * hx;
    if s < 2.0 * hx {
        return (Vector2::new(s - hx, -hy), Vector2::new(0.0, -1.0));
    }
    s -= 2.0 * hx;
    if s < 2.0 * hy {
        return (Vector2::new(-hx, s - hy), Vector2::new(-1.0, 0.0));
    }
    s -= 2.0 * hy;
    (Vector2::new(hx, s - hy), Vector2::new(1.0, 0.0))
}

/// Draw a robot configuration that touches the object at the current object
/// pose. The object coordinates are left untouched; the result is verified
/// non-penetrating and settled with one exact step at `u = q_a`.
pub fn contact_sample(
    model: &SystemModel,
    q: &DVector<f64>,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ContactSampleResult, SampleError> {
    let kind = classify(model).ok_or_else(|| SampleError::Unsupported(model.name.clone()))?;
    let mut last = String::from("no attempt made");
    for attempt in 1..=MAX_ATTEMPTS {
        let candidate = match &kind {
            SamplerKind::Fingers { object, fingers } => {
                propose_fingers(model, q, *object, fingers, rng)
            }
            SamplerKind::Pusher { object, pusher_dof, pusher_origin, pusher_radius } => {
                propose_pusher(model, q, *object, *pusher_dof, *pusher_origin, *pusher_radius, rng)
            }
        };
        let q_new = match candidate {
            Ok(qn) => qn,
            Err(reason) => {
                last = reason;
                continue;
            }
        };
        if !model.within_limits(&q_new) {
            last = "joint limits violated".into();
            continue;
        }
        let phi = match model.min_phi(&q_new) {
            Ok(p) => p,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if phi < 0.0 {
            last = format!("penetrating placement (phi = {phi:.2e})");
            continue;
        }
        if phi > 0.1 * model.margin {
            last = format!("placement too far from contact (phi = {phi:.2e})");
            continue;
        }
        // Settle: one exact step holding the robot at its own position. For
        // a non-penetrating placement this is the identity; it certifies
        // that the sample is at rest.
        let u = q_new.rows(model.n_u, model.n_a).into_owned();
        let settled = match step_exact(model, &q_new, &u, h) {
            Ok(r) => r.q_next,
            Err(e) => {
                last = format!("settle step failed: {e}");
                continue;
            }
        };
        let moved = (settled.rows(0, model.n_u) - q.rows(0, model.n_u)).amax();
        if moved > 1e-9 {
            last = format!("object moved by {moved:.2e} during settle");
            continue;
        }
        let min_phi = model.min_phi(&settled).unwrap_or(phi);
        return Ok(ContactSampleResult { q_new: settled, min_phi, attempts: attempt });
    }
    Err(SampleError::Failed { attempts: MAX_ATTEMPTS, last })
}

fn propose_fingers(
    model: &SystemModel,
    q: &DVector<f64>,
    object: usize,
    fingers: &[Finger],
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>, String> {
    let center = model.bodies[object].kinematics.pose(q).position;
    let puck_r = object_disc_radius(&model.bodies[object]).ok_or("object is not a disc")?;
    let mut q_new = q.clone();
    for f in fingers {
        let offset = puck_r + f.tip_radius + CLEARANCE;
        let (min_reach, max_reach): (f64, f64) =
            ((f.lengths[0] - f.lengths[1]).abs(), f.lengths.iter().sum());
        // Only part of the circle is reachable from this finger's base;
        // reject angles outside the annulus before running IK.
        let mut target = None;
        for _ in 0..100 {
            let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let candidate = center + offset * Vector2::new(angle.cos(), angle.sin());
            let d = (candidate - f.base).norm();
            if d > min_reach + 1e-6 && d < max_reach - 1e-6 {
                target = Some(candidate);
                break;
            }
        }
        let target = target.ok_or("no reachable point on the object circle")?;
        let branch = if rng.random::<bool>() { ElbowBranch::Up } else { ElbowBranch::Down };
        let base = Pose2::new(f.base.x, f.base.y, 0.0);
        let (t1, t2) =
            ik_2link(&target, f.lengths, &base, branch).map_err(|e| e.to_string())?;
        q_new[f.dof[0]] = t1;
        q_new[f.dof[1]] = t2;
    }
    Ok(q_new)
}

fn propose_pusher(
    model: &SystemModel,
    q: &DVector<f64>,
    object: usize,
    pusher_dof: [usize; 2],
    pusher_origin: Vector2<f64>,
    pusher_radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>, String> {
    let pose = model.bodies[object].kinematics.pose(q);
    let CollisionGeometry::DiscArray { half_extents, radius: array_r, .. } =
        &model.bodies[object].geoms[0]
    else {
        return Err("object is not a disc array".into());
    };
    let (p_local, n_local) = sample_rect_boundary(half_extents.x, half_extents.y, rng);
    let point = pose.transform(&p_local);
    let normal = pose.rotate(&n_local);
    let _ = array_r;
    let target = point + (pusher_radius + CLEARANCE) * normal;
    let mut q_new = q.clone();
    q_new[pusher_dof[0]] = target.x - pusher_origin.x;
    q_new[pusher_dof[1]] = target.y - pusher_origin.y;
    Ok(q_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::systems::build_system;
    use std::collections::BTreeMap;

    #[test]
    fn unsupported_system_is_reported() {
        let model = build_system("cart_wall", &BTreeMap::new()).unwrap();
        let mut rng = stream(1, "sample", 0);
        let err = contact_sample(&model, &nalgebra::dvector![0.5], 0.1, &mut rng);
        assert!(matches!(err, Err(SampleError::Unsupported(_))));
    }

    #[test]
    fn hand_sampler_touches_the_puck_without_moving_it() {
        let model = build_system("planar_hand_fixed_y", &BTreeMap::new()).unwrap();
        let q0 = crate::systems::default_initial_configuration(&model).unwrap();
        let puck_r = 0.25;
        for i in 0..25 {
            let mut rng = stream(7, "hand-sample", i);
            let s = contact_sample(&model, &q0, 0.1, &mut rng).unwrap();
            assert!((s.q_new.rows(0, 2) - q0.rows(0, 2)).amax() < 1e-12);
            assert!(s.min_phi >= 0.0, "penetrating: {}", s.min_phi);
            assert!(s.min_phi <= 0.05 * puck_r, "too far: {}", s.min_phi);
        }
    }

    #[test]
    fn pusher_sampler_covers_the_box_boundary() {
        let model = build_system("planar_pushing", &BTreeMap::new()).unwrap();
        let q0 = crate::systems::default_initial_configuration(&model).unwrap();
        let mut sectors = [false; 8];
        for i in 0..500 {
            let mut rng = stream(8, "push-sample", i);
            let s = contact_sample(&model, &q0, 0.1, &mut rng).unwrap();
            assert!((s.q_new.rows(0, 3) - q0.rows(0, 3)).amax() < 1e-12);
            assert!(s.min_phi >= 0.0 && s.min_phi <= 0.05);
            // Angular sector of the pusher location around the box center.
            let pusher = model.bodies[1].kinematics.pose(&s.q_new).position;
            let dx = pusher.x - q0[0];
            let dy = pusher.y - q0[1];
            let ang = dy.atan2(dx);
            let sector = ((ang + std::f64::consts::PI) / (std::f64::consts::PI / 4.0))
                .floor()
                .min(7.0) as usize;
            sectors[sector] = true;
        }
        assert!(sectors.iter().all(|&s| s), "sectors covered: {sectors:?}");
    }
}
