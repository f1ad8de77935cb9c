//! Planar quasi-dynamic contact dynamics and smoothing-based planning.
//!
//! The crate is organized around a convex time-stepping contact model for
//! planar robot/object systems: one simulation step solves a small convex
//! program whose decision variable is the configuration displacement. On top
//! of that model it provides
//!
//! - [`geometry`]: signed distances, contact frames and contact Jacobians for
//!   the curated smooth geometry pairs (discs, half-planes, capsules, boxes
//!   as disc arrays),
//! - [`solver`]: a Newton log-barrier engine that serves both the smoothed
//!   dynamics (fixed barrier weight) and the exact dynamics (path following
//!   plus an active-set polish),
//! - [`dynamics`]: the quasi-dynamic stepper, its log-barrier smoothing, and
//!   locally affine models obtained by differentiating the optimality
//!   conditions,
//! - [`smoothing`]: generic estimators of smoothed function values and
//!   gradients, and the interchangeable linearization schemes (analytic,
//!   randomized first order, randomized zeroth order, exact) behind a common
//!   trait registry,
//! - [`systems`]: bundled example systems, scenario files, inverse
//!   kinematics and contact samplers,
//! - [`impc`]: an iterative MPC trajectory optimizer over locally affine
//!   models,
//! - [`rrt`]: a reachability-guided RRT with a local Mahalanobis metric,
//!   contact sampling and path refinement.
//!
//! All randomness flows through explicit seeds (see [`rng`]); results are
//! independent of thread count.

pub mod dynamics;
pub mod geometry;
pub mod impc;
pub mod rng;
pub mod rrt;
pub mod smoothing;
pub mod solver;
pub mod systems;

/// Wrap an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::wrap_angle;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let a = 0.3 + k as f64 * 2.0 * PI;
            assert!((wrap_angle(a) - 0.3).abs() < 1e-12);
        }
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
    }
}
