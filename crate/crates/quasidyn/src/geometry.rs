//! Planar collision queries for the curated smooth geometry pairs.
//!
//! Supported pairs are disc-disc, disc-half-plane, disc-capsule and
//! disc-disc-array (boxes are represented as arrays of inscribed discs so
//! that signed distances stay smooth in the configuration). Every query
//! returns a signed distance `phi`, a unit contact normal pointing from body
//! B into body A, and witness points on both surfaces satisfying
//! `witness_a - witness_b = phi * normal`.

use nalgebra::{DVector, Matrix2xX, RowDVector, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("unsupported geometry pair: {0} vs {1}")]
    UnsupportedPair(&'static str, &'static str),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Planar rigid pose (position and heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub position: Vector2<f64>,
    pub angle: f64,
}

impl Pose2 {
    pub fn identity() -> Self {
        Pose2 { position: Vector2::zeros(), angle: 0.0 }
    }

    pub fn new(x: f64, y: f64, angle: f64) -> Self {
        Pose2 { position: Vector2::new(x, y), angle }
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn transform(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.position + self.rotate(p)
    }
}

/// Collision shape expressed in its body frame.
#[derive(Debug, Clone)]
pub enum CollisionGeometry {
    Disc {
        radius: f64,
        offset: Vector2<f64>,
    },
    /// Half-plane of material; `normal` is the outward surface normal and
    /// the surface is `{ p : normal . p = offset }` in the body frame.
    HalfPlane {
        normal: Vector2<f64>,
        offset: f64,
    },
    /// Segment from `a` to `b` (body frame) inflated by `radius`.
    Capsule {
        a: Vector2<f64>,
        b: Vector2<f64>,
        radius: f64,
    },
    /// Box boundary covered by inscribed discs (collision proxy for boxes).
    DiscArray {
        half_extents: Vector2<f64>,
        centers: Vec<Vector2<f64>>,
        radius: f64,
    },
}

impl CollisionGeometry {
    pub fn kind(&self) -> &'static str {
        match self {
            CollisionGeometry::Disc { .. } => "disc",
            CollisionGeometry::HalfPlane { .. } => "half-plane",
            CollisionGeometry::Capsule { .. } => "capsule",
            CollisionGeometry::DiscArray { .. } => "disc-array",
        }
    }

    /// Box collision proxy: overlapping discs inscribed along each edge,
    /// tangent to the boundary from inside. `density` is the disc count per
    /// unit edge length; the radius is 1.5x the half-spacing so adjacent
    /// discs always overlap.
    pub fn box_array(half_extents: Vector2<f64>, density: f64) -> Result<Self, GeometryError> {
        if half_extents.x <= 0.0 || half_extents.y <= 0.0 || density <= 0.0 {
            return Err(GeometryError::InvalidGeometry(
                "box half-extents and disc density must be positive".into(),
            ));
        }
        let radius = 0.75 / density;
        if radius > half_extents.x.min(half_extents.y) {
            return Err(GeometryError::InvalidGeometry(
                "disc radius exceeds box half-extent; increase density".into(),
            ));
        }
        let mut centers: Vec<Vector2<f64>> = Vec::new();
        // One line of centers per edge, inset by the radius so discs stay
        // inside the box and are tangent to that edge. Spacing len/n is at
        // most 1/density = radius, so adjacent discs always overlap.
        let (hx, hy, r) = (half_extents.x, half_extents.y, radius);
        let edge = |centers: &mut Vec<Vector2<f64>>, from: Vector2<f64>, to: Vector2<f64>| {
            let len = (to - from).norm();
            let n = ((len * density).ceil() as usize).max(1);
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let c = from + (to - from) * t;
                if centers.iter().all(|p| (p - c).norm() > 1e-12) {
                    centers.push(c);
                }
            }
        };
        edge(&mut centers, Vector2::new(-hx + r, hy - r), Vector2::new(hx - r, hy - r));
        edge(&mut centers, Vector2::new(-hx + r, -hy + r), Vector2::new(hx - r, -hy + r));
        edge(&mut centers, Vector2::new(-hx + r, -hy + r), Vector2::new(-hx + r, hy - r));
        edge(&mut centers, Vector2::new(hx - r, -hy + r), Vector2::new(hx - r, hy - r));
        let geom = CollisionGeometry::DiscArray { half_extents, centers, radius };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fail = |msg: &str| Err(GeometryError::InvalidGeometry(msg.into()));
        match self {
            CollisionGeometry::Disc { radius, .. } => {
                if *radius < 0.0 {
                    return fail("disc radius must be nonnegative");
                }
            }
            CollisionGeometry::HalfPlane { normal, .. } => {
                if (normal.norm() - 1.0).abs() > 1e-9 {
                    return fail("half-plane normal must be unit length");
                }
            }
            CollisionGeometry::Capsule { a, b, radius } => {
                if *radius <= 0.0 {
                    return fail("capsule radius must be positive");
                }
                if (a - b).norm() <= 0.0 {
                    return fail("capsule endpoints must be distinct");
                }
            }
            CollisionGeometry::DiscArray { centers, radius, .. } => {
                if *radius <= 0.0 {
                    return fail("disc-array radius must be positive");
                }
                if centers.len() < 2 {
                    return fail("disc-array needs at least two discs");
                }
                // Every disc must have a neighbour close enough to overlap,
                // so the array covers the boundary without gaps.
                for (i, c) in centers.iter().enumerate() {
                    let covered = centers.iter().enumerate().any(|(j, o)| {
                        i != j && (o - c).norm() <= 2.0 * radius + 1e-9
                    });
                    if !covered {
                        return fail("disc-array spacing exceeds disc diameter");
                    }
                }
            }
        }
        Ok(())
    }
}

/// How a body's pose depends on the configuration vector.
#[derive(Debug, Clone)]
pub enum BodyKinematics {
    Fixed { pose: Pose2 },
    /// Translation along x: pose position = origin + (q[dof], 0).
    PrismaticX { dof: usize, origin: Vector2<f64> },
    /// Translation in the plane: pose position = origin + (q[dx], q[dy]).
    PrismaticXY { dof: [usize; 2], origin: Vector2<f64> },
    /// Free planar body: (x, y, theta) = (q[d0], q[d1], q[d2]).
    FreePlanar { dof: [usize; 3] },
    /// Planar body with frozen height: (x, theta) = (q[d0], q[d1]).
    PlanarFixedY { dof: [usize; 2], y: f64 },
    /// One link of a two-revolute-joint arm rooted at `base`.
    TwoLink { base: Vector2<f64>, dof: [usize; 2], lengths: [f64; 2], link: usize },
}

impl BodyKinematics {
    pub fn pose(&self, q: &DVector<f64>) -> Pose2 {
        match self {
            BodyKinematics::Fixed { pose } => *pose,
            BodyKinematics::PrismaticX { dof, origin } => {
                Pose2::new(origin.x + q[*dof], origin.y, 0.0)
            }
            BodyKinematics::PrismaticXY { dof, origin } => {
                Pose2::new(origin.x + q[dof[0]], origin.y + q[dof[1]], 0.0)
            }
            BodyKinematics::FreePlanar { dof } => Pose2::new(q[dof[0]], q[dof[1]], q[dof[2]]),
            BodyKinematics::PlanarFixedY { dof, y } => Pose2::new(q[dof[0]], *y, q[dof[1]]),
            BodyKinematics::TwoLink { base, dof, lengths, link } => {
                let t1 = q[dof[0]];
                if *link == 0 {
                    Pose2::new(base.x, base.y, t1)
                } else {
                    let joint = base + lengths[0] * Vector2::new(t1.cos(), t1.sin());
                    Pose2::new(joint.x, joint.y, t1 + q[dof[1]])
                }
            }
        }
    }

    /// Velocity of the body-fixed point currently at world position `p`, as
    /// a 2 x n_q map from generalized velocity.
    pub fn point_jacobian(&self, q: &DVector<f64>, p: &Vector2<f64>, n_q: usize) -> Matrix2xX<f64> {
        let mut jac = Matrix2xX::zeros(n_q);
        let perp = |r: Vector2<f64>| Vector2::new(-r.y, r.x);
        match self {
            BodyKinematics::Fixed { .. } => {}
            BodyKinematics::PrismaticX { dof, .. } => {
                jac[(0, *dof)] = 1.0;
            }
            BodyKinematics::PrismaticXY { dof, .. } => {
                jac[(0, dof[0])] = 1.0;
                jac[(1, dof[1])] = 1.0;
            }
            BodyKinematics::FreePlanar { dof } => {
                jac[(0, dof[0])] = 1.0;
                jac[(1, dof[1])] = 1.0;
                let r = perp(p - Vector2::new(q[dof[0]], q[dof[1]]));
                jac[(0, dof[2])] = r.x;
                jac[(1, dof[2])] = r.y;
            }
            BodyKinematics::PlanarFixedY { dof, y } => {
                jac[(0, dof[0])] = 1.0;
                let r = perp(p - Vector2::new(q[dof[0]], *y));
                jac[(0, dof[1])] = r.x;
                jac[(1, dof[1])] = r.y;
            }
            BodyKinematics::TwoLink { base, dof, lengths, link } => {
                let r1 = perp(p - base);
                jac[(0, dof[0])] = r1.x;
                jac[(1, dof[0])] = r1.y;
                if *link == 1 {
                    let t1 = q[dof[0]];
                    let joint = base + lengths[0] * Vector2::new(t1.cos(), t1.sin());
                    let r2 = perp(p - joint);
                    jac[(0, dof[1])] = r2.x;
                    jac[(1, dof[1])] = r2.y;
                }
            }
        }
        jac
    }
}

/// Rigid body: kinematics plus its collision shapes.
#[derive(Debug, Clone)]
pub struct Body {
    pub name: String,
    pub kinematics: BodyKinematics,
    pub geoms: Vec<CollisionGeometry>,
}

/// Result of a signed-distance query between two shapes.
#[derive(Debug, Clone)]
pub struct ContactCandidate {
    /// Signed gap along the normal (negative when penetrating).
    pub phi: f64,
    /// Unit normal pointing from body B into body A.
    pub normal: Vector2<f64>,
    /// Witness point on A's surface (world frame).
    pub witness_a: Vector2<f64>,
    /// Witness point on B's surface (world frame).
    pub witness_b: Vector2<f64>,
    /// Sub-shape index on A and B (disc-array element, 0 otherwise).
    pub sub: (usize, usize),
}

/// Normal/tangent velocity rows of one contact.
#[derive(Debug, Clone)]
pub struct ContactFrame {
    /// 1 x n_q map from generalized velocity to normal separation rate.
    pub jn: RowDVector<f64>,
    /// 1 x n_q map to tangential sliding rate; tangent = normal rotated +90 degrees.
    pub jt: RowDVector<f64>,
    pub candidate: ContactCandidate,
    pub mu: f64,
}

fn disc_disc(
    ca: Vector2<f64>,
    ra: f64,
    cb: Vector2<f64>,
    rb: f64,
    sub: (usize, usize),
) -> ContactCandidate {
    let d = ca - cb;
    let len = d.norm();
    // Coincident centers: fall back to a fixed axis so the result is total.
    let normal = if len > 1e-12 { d / len } else { Vector2::new(1.0, 0.0) };
    ContactCandidate {
        phi: len - ra - rb,
        normal,
        witness_a: ca - ra * normal,
        witness_b: cb + rb * normal,
        sub,
    }
}

fn disc_halfplane(
    ca: Vector2<f64>,
    ra: f64,
    pose_b: &Pose2,
    n_body: &Vector2<f64>,
    offset: f64,
) -> ContactCandidate {
    let n = pose_b.rotate(n_body);
    let off_world = offset + n.dot(&pose_b.position);
    let dist = n.dot(&ca) - off_world;
    ContactCandidate {
        phi: dist - ra,
        normal: n,
        witness_a: ca - ra * n,
        witness_b: ca - dist * n,
        sub: (0, 0),
    }
}

fn closest_on_segment(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + t * ab
}

fn swap_candidate(c: ContactCandidate) -> ContactCandidate {
    ContactCandidate {
        phi: c.phi,
        normal: -c.normal,
        witness_a: c.witness_b,
        witness_b: c.witness_a,
        sub: (c.sub.1, c.sub.0),
    }
}

/// All contact candidates of a shape pair (one per disc-array element for
/// array shapes, one otherwise) at the given poses.
pub fn pair_candidates(
    geom_a: &CollisionGeometry,
    pose_a: &Pose2,
    geom_b: &CollisionGeometry,
    pose_b: &Pose2,
) -> Result<Vec<ContactCandidate>, GeometryError> {
    use CollisionGeometry::*;
    let out = match (geom_a, geom_b) {
        (Disc { radius: ra, offset: oa }, Disc { radius: rb, offset: ob }) => {
            vec![disc_disc(pose_a.transform(oa), *ra, pose_b.transform(ob), *rb, (0, 0))]
        }
        (Disc { radius, offset }, HalfPlane { normal, offset: plane_off }) => {
            vec![disc_halfplane(pose_a.transform(offset), *radius, pose_b, normal, *plane_off)]
        }
        (Disc { radius: ra, offset: oa }, Capsule { a, b, radius: rb }) => {
            let ca = pose_a.transform(oa);
            let s = closest_on_segment(&ca, &pose_b.transform(a), &pose_b.transform(b));
            vec![disc_disc(ca, *ra, s, *rb, (0, 0))]
        }
        (Disc { radius: ra, offset: oa }, DiscArray { centers, radius: rb, .. }) => {
            let ca = pose_a.transform(oa);
            centers
                .iter()
                .enumerate()
                .map(|(i, c)| disc_disc(ca, *ra, pose_b.transform(c), *rb, (0, i)))
                .collect()
        }
        (HalfPlane { .. }, Disc { .. })
        | (Capsule { .. }, Disc { .. })
        | (DiscArray { .. }, Disc { .. }) => pair_candidates(geom_b, pose_b, geom_a, pose_a)?
            .into_iter()
            .map(swap_candidate)
            .collect(),
        (a, b) => return Err(GeometryError::UnsupportedPair(a.kind(), b.kind())),
    };
    Ok(out)
}

/// Closest contact candidate of a shape pair.
pub fn signed_distance_pair(
    geom_a: &CollisionGeometry,
    pose_a: &Pose2,
    geom_b: &CollisionGeometry,
    pose_b: &Pose2,
) -> Result<ContactCandidate, GeometryError> {
    let all = pair_candidates(geom_a, pose_a, geom_b, pose_b)?;
    Ok(all
        .into_iter()
        .min_by(|x, y| x.phi.partial_cmp(&y.phi).expect("phi is finite"))
        .expect("pair produces at least one candidate"))
}

/// Contact frame (normal and tangent rows) for a candidate between two
/// bodies. The rows map generalized velocity to the separation rate and the
/// sliding rate at the witness points.
pub fn contact_frame(
    body_a: &Body,
    body_b: &Body,
    q: &DVector<f64>,
    candidate: &ContactCandidate,
    mu: f64,
) -> ContactFrame {
    let n_q = q.len();
    let jp_a = body_a.kinematics.point_jacobian(q, &candidate.witness_a, n_q);
    let jp_b = body_b.kinematics.point_jacobian(q, &candidate.witness_b, n_q);
    let rel = jp_a - jp_b;
    let n = candidate.normal;
    let t = Vector2::new(-n.y, n.x);
    let jn = RowDVector::from_fn(n_q, |_, j| n.x * rel[(0, j)] + n.y * rel[(1, j)]);
    let jt = RowDVector::from_fn(n_q, |_, j| t.x * rel[(0, j)] + t.y * rel[(1, j)]);
    ContactFrame { jn, jt, candidate: candidate.clone(), mu }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn disc(r: f64) -> CollisionGeometry {
        CollisionGeometry::Disc { radius: r, offset: Vector2::zeros() }
    }

    #[test]
    fn disc_disc_separated() {
        let c = signed_distance_pair(
            &disc(0.5),
            &Pose2::new(2.0, 0.0, 0.0),
            &disc(0.5),
            &Pose2::identity(),
        )
        .unwrap();
        assert!((c.phi - 1.0).abs() < 1e-12);
        assert!((c.normal - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((c.witness_a - Vector2::new(1.5, 0.0)).norm() < 1e-12);
        assert!((c.witness_b - Vector2::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn disc_disc_penetrating() {
        let c = signed_distance_pair(
            &disc(0.5),
            &Pose2::new(0.8, 0.0, 0.0),
            &disc(0.5),
            &Pose2::identity(),
        )
        .unwrap();
        assert!((c.phi + 0.2).abs() < 1e-12);
    }

    #[test]
    fn point_cart_against_wall() {
        // Disc of radius r against a wall whose surface sits at -r gives
        // phi equal to the cart coordinate.
        let r = 0.05;
        let wall = CollisionGeometry::HalfPlane { normal: Vector2::new(1.0, 0.0), offset: -r };
        for qa in [-0.4, 0.0, 0.7] {
            let c = signed_distance_pair(
                &disc(r),
                &Pose2::new(qa, 0.0, 0.0),
                &wall,
                &Pose2::identity(),
            )
            .unwrap();
            assert!((c.phi - qa).abs() < 1e-12);
        }
    }

    #[test]
    fn witness_consistency() {
        // witness_a - witness_b = phi * normal for every supported pair.
        let mut rng = stream(11, "geom-witness", 0);
        let cap = CollisionGeometry::Capsule {
            a: Vector2::new(-0.3, 0.0),
            b: Vector2::new(0.3, 0.0),
            radius: 0.1,
        };
        let arr = CollisionGeometry::box_array(Vector2::new(0.25, 0.15), 8.0).unwrap();
        let wall = CollisionGeometry::HalfPlane { normal: Vector2::new(0.0, 1.0), offset: 0.0 };
        for _ in 0..200 {
            let pa = Pose2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            );
            let pb = Pose2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            );
            for other in [&cap, &arr, &wall, &disc(0.3)] {
                let c = signed_distance_pair(&disc(0.2), &pa, other, &pb).unwrap();
                let gap = c.witness_a - c.witness_b - c.phi * c.normal;
                assert!(gap.norm() < 1e-9, "witness mismatch: {}", gap.norm());
                assert!((c.normal.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unsupported_pair_is_reported() {
        let wall = CollisionGeometry::HalfPlane { normal: Vector2::new(1.0, 0.0), offset: 0.0 };
        let err = signed_distance_pair(&wall, &Pose2::identity(), &wall, &Pose2::identity());
        assert!(matches!(err, Err(GeometryError::UnsupportedPair(_, _))));
    }

    #[test]
    fn phi_is_continuous_under_small_pose_changes() {
        let mut rng = stream(12, "geom-cont", 0);
        let shapes = [
            disc(0.3),
            CollisionGeometry::Capsule {
                a: Vector2::new(-0.2, 0.0),
                b: Vector2::new(0.2, 0.0),
                radius: 0.05,
            },
            CollisionGeometry::box_array(Vector2::new(0.25, 0.15), 8.0).unwrap(),
        ];
        for i in 0..1000 {
            let shape = &shapes[i % shapes.len()];
            let pa = Pose2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            );
            let pb = Pose2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            );
            let eps = 1e-6;
            let pa2 = Pose2::new(pa.position.x + eps, pa.position.y - eps, pa.angle + eps);
            let f0 = signed_distance_pair(&disc(0.1), &pa, shape, &pb).unwrap().phi;
            let f1 = signed_distance_pair(&disc(0.1), &pa2, shape, &pb).unwrap().phi;
            let pert = (3.0f64).sqrt() * eps;
            assert!(
                (f1 - f0).abs() <= 1e-5 * (1.0 + pert),
                "phi jump {} for shape {}",
                (f1 - f0).abs(),
                shape.kind()
            );
        }
    }

    #[test]
    fn free_disc_wall_has_zero_theta_entry() {
        // Contact ray through the body origin: rotation does not change phi.
        let body_a = Body {
            name: "disc".into(),
            kinematics: BodyKinematics::FreePlanar { dof: [0, 1, 2] },
            geoms: vec![disc(0.3)],
        };
        let body_b = Body {
            name: "wall".into(),
            kinematics: BodyKinematics::Fixed { pose: Pose2::identity() },
            geoms: vec![CollisionGeometry::HalfPlane {
                normal: Vector2::new(-1.0, 0.0),
                offset: -1.0,
            }],
        };
        let q = DVector::from_vec(vec![0.7, 0.2, 0.4]);
        let cand = signed_distance_pair(
            &body_a.geoms[0],
            &body_a.kinematics.pose(&q),
            &body_b.geoms[0],
            &body_b.kinematics.pose(&q),
        )
        .unwrap();
        let frame = contact_frame(&body_a, &body_b, &q, &cand, 0.0);
        assert!(frame.jn[2].abs() < 1e-12);
        assert!((frame.jn[0] - -1.0).abs() < 1e-12);
    }
}
