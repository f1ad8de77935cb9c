//! Closed-form inverse kinematics for a planar two-link arm.

use crate::geometry::Pose2;
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IkError {
    #[error("target at distance {distance:.4} outside reachable annulus [{min:.4}, {max:.4}]")]
    Unreachable { distance: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElbowBranch {
    Up,
    Down,
}

/// Joint angles (shoulder, elbow) placing the arm tip at `target`, both
/// expressed relative to the base pose.
pub fn ik_2link(
    target: &Vector2<f64>,
    lengths: [f64; 2],
    base: &Pose2,
    branch: ElbowBranch,
) -> Result<(f64, f64), IkError> {
    let [l1, l2] = lengths;
    // Target in the base frame.
    let rel = target - base.position;
    let (s, c) = (-base.angle).sin_cos();
    let p = Vector2::new(c * rel.x - s * rel.y, s * rel.x + c * rel.y);
    let d = p.norm();
    let (min, max) = ((l1 - l2).abs(), l1 + l2);
    if d < min - 1e-12 || d > max + 1e-12 {
        return Err(IkError::Unreachable { distance: d, min, max });
    }
    let cos_elbow = ((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let elbow = match branch {
        ElbowBranch::Up => cos_elbow.acos(),
        ElbowBranch::Down => -cos_elbow.acos(),
    };
    let shoulder = p.y.atan2(p.x) - (l2 * elbow.sin()).atan2(l1 + l2 * elbow.cos());
    Ok((shoulder, elbow))
}

/// Tip position of the two-link arm for given joint angles.
pub fn fk_2link(angles: (f64, f64), lengths: [f64; 2], base: &Pose2) -> Vector2<f64> {
    let a1 = base.angle + angles.0;
    let a2 = a1 + angles.1;
    base.position
        + lengths[0] * Vector2::new(a1.cos(), a1.sin())
        + lengths[1] * Vector2::new(a2.cos(), a2.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn fully_extended_reaches_with_zero_angles() {
        let (t1, t2) = ik_2link(
            &Vector2::new(0.6, 0.0),
            [0.35, 0.25],
            &Pose2::identity(),
            ElbowBranch::Up,
        )
        .unwrap();
        assert!(t1.abs() < 1e-9 && t2.abs() < 1e-9);
    }

    #[test]
    fn out_of_reach_is_reported() {
        let err = ik_2link(
            &Vector2::new(0.7, 0.0),
            [0.35, 0.25],
            &Pose2::identity(),
            ElbowBranch::Up,
        );
        assert!(matches!(err, Err(IkError::Unreachable { .. })));
        let err = ik_2link(
            &Vector2::new(0.05, 0.0),
            [0.35, 0.25],
            &Pose2::identity(),
            ElbowBranch::Down,
        );
        assert!(matches!(err, Err(IkError::Unreachable { .. })));
    }

    #[test]
    fn random_targets_round_trip_through_fk() {
        let mut rng = stream(21, "ik", 0);
        let lengths = [0.35, 0.25];
        let base = Pose2::new(0.3, -0.2, 0.7);
        let mut tested = 0;
        while tested < 200 {
            let r = rng.random_range(0.11..0.59);
            let a = rng.random_range(-3.14..3.14);
            let target =
                base.position + r * Vector2::new(f64::cos(a), f64::sin(a));
            for branch in [ElbowBranch::Up, ElbowBranch::Down] {
                let angles = ik_2link(&target, lengths, &base, branch).unwrap();
                let tip = fk_2link(angles, lengths, &base);
                assert!((tip - target).norm() < 1e-9);
            }
            tested += 1;
        }
    }
}
