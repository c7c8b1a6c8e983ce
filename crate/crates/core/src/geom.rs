//! Shared geometric primitives: 3D vectors, SE(3) poses with composition
//! operators, planes in `n·p + d = 0` form, distances, and angles.
//!
//! Conventions used across the crate:
//! * world up is `+z`; ground normals are oriented toward `+z`,
//! * wall normals point away from the free space they bound,
//! * rotations are stored as orthonormal matrices; minimal 3-parameter
//!   updates happen only inside the optimizer.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3D vector of f64 meters (or a unitless direction).
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("zero-length vector has no direction")]
    ZeroLengthVector,
    #[error("rotation matrix is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
}

/// Semantic classes of building components: low-level planar structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildingClass {
    Wall,
    Ground,
}

impl BuildingClass {
    pub const ALL: [BuildingClass; 2] = [BuildingClass::Wall, BuildingClass::Ground];

    pub fn name(&self) -> &'static str {
        match self {
            BuildingClass::Wall => "wall",
            BuildingClass::Ground => "ground",
        }
    }
}

/// Semantic classes of structural elements inferred from building components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructuralClass {
    Room,
    Floor,
}

/// Rigid transform in SE(3), mapping points from its local frame to the
/// parent (usually world) frame: `p_world = R p_local + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Rotation3<f64>,
    translation: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        PoseSE3 {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        PoseSE3::new(Rotation3::identity(), translation)
    }

    /// Pose with the given yaw (rotation about `+z`) and translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vec3) -> Self {
        PoseSE3::new(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), translation)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// `a ⊞ b`: apply `b` first, then `a` (standard transform composition).
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rot_inv = self.rotation.inverse();
        PoseSE3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// `a ⊟ b`, defined so that `(a ⊟ b) ⊞ b = a`.
    pub fn inverse_compose(&self, other: &PoseSE3) -> PoseSE3 {
        self.compose(&other.inverse())
    }

    /// Relative pose from `self` to `other`: `self⁻¹ ⊞ other`.
    pub fn between(&self, other: &PoseSE3) -> PoseSE3 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Decoupled tangent coordinates `[t, Log(R)]` of this pose.
    ///
    /// The translational block is the raw translation, not the SE(3)
    /// `V⁻¹ t` coupling; residuals built on this stay exact for pure
    /// translations and invariant under a global gauge change.
    pub fn log(&self) -> Vector6<f64> {
        let theta = self.rotation.scaled_axis();
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            theta.x,
            theta.y,
            theta.z,
        )
    }

    /// Inverse of [`PoseSE3::log`].
    pub fn exp(tangent: &Vector6<f64>) -> PoseSE3 {
        let t = Vec3::new(tangent[0], tangent[1], tangent[2]);
        let theta = Vec3::new(tangent[3], tangent[4], tangent[5]);
        PoseSE3::new(Rotation3::from_scaled_axis(theta), t)
    }

    /// Right-perturb the pose by a decoupled tangent: rotation update is
    /// multiplied on the right, translation added in the parent frame.
    pub fn boxplus(&self, delta: &Vector6<f64>) -> PoseSE3 {
        let dt = Vec3::new(delta[0], delta[1], delta[2]);
        let dtheta = Vec3::new(delta[3], delta[4], delta[5]);
        PoseSE3 {
            rotation: self.rotation * Rotation3::from_scaled_axis(dtheta),
            translation: self.translation + dt,
        }
    }

    /// Row-major homogeneous 4×4 matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.matrix();
        let t = self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Build from a row-major homogeneous 4×4 matrix, re-orthonormalizing the
    /// rotation block. Fails if the block is far from orthonormal.
    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<PoseSE3, GeomError> {
        let r = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let deviation = (r.transpose() * r - Matrix3::identity()).norm();
        if deviation > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeomError::NotOrthonormal(deviation));
        }
        let rotation = Rotation3::from_matrix(&r);
        Ok(PoseSE3::new(
            rotation,
            Vec3::new(m[0][3], m[1][3], m[2][3]),
        ))
    }

    /// Deviation of `RᵀR` from identity; valid poses keep this ≤ 1e-9.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation.matrix();
        (r.transpose() * r - Matrix3::identity()).norm()
    }

    pub fn is_approx(&self, other: &PoseSE3, tol: f64) -> bool {
        (self.translation - other.translation).norm() <= tol
            && (self.rotation.matrix() - other.rotation.matrix()).norm() <= tol
    }
}

/// Skew-symmetric matrix `[v]ₓ` such that `[v]ₓ w = v × w`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the SO(3) right Jacobian at rotation vector `theta`.
pub fn so3_right_jacobian_inv(theta: &Vec3) -> Matrix3<f64> {
    let angle = theta.norm();
    let hat = skew(theta);
    if angle < 1e-8 {
        return Matrix3::identity() + 0.5 * hat + hat * hat / 12.0;
    }
    let coeff = 1.0 / (angle * angle) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin());
    Matrix3::identity() + 0.5 * hat + coeff * (hat * hat)
}

/// Inverse of the SO(3) left Jacobian at rotation vector `theta`.
pub fn so3_left_jacobian_inv(theta: &Vec3) -> Matrix3<f64> {
    so3_right_jacobian_inv(&(-theta))
}

/// Signed distance `n·p + d`; its absolute value is the Euclidean
/// point–plane distance for a unit normal.
pub fn point_plane_distance(p: &Vec3, plane: &Plane) -> f64 {
    plane.normal.dot(p) + plane.offset
}

/// Angle between two directions in `[0, π]`, with the dot product clamped so
/// rounding can never produce a NaN.
pub fn angle_between(n1: &Vec3, n2: &Vec3) -> Result<f64, GeomError> {
    let denom = n1.norm() * n2.norm();
    if denom == 0.0 {
        return Err(GeomError::ZeroLengthVector);
    }
    Ok((n1.dot(n2) / denom).clamp(-1.0, 1.0).acos())
}

/// Angle between two directions treating `n` and `-n` as equal; in `[0, π/2]`.
pub fn angle_between_lines(n1: &Vec3, n2: &Vec3) -> Result<f64, GeomError> {
    let denom = n1.norm() * n2.norm();
    if denom == 0.0 {
        return Err(GeomError::ZeroLengthVector);
    }
    Ok((n1.dot(n2).abs() / denom).clamp(0.0, 1.0).acos())
}

/// Planar building component: unit normal `n` and offset `d` with
/// `n·p + d = 0` for on-plane points, plus semantic class, the centroid of
/// its supporting points, and the inlier count backing the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    pub class: BuildingClass,
    pub centroid: Vec3,
    pub inlier_count: usize,
}

impl Plane {
    /// Build a plane from a (not necessarily unit) normal and a point on it.
    pub fn from_point_normal(
        point: Vec3,
        normal: Vec3,
        class: BuildingClass,
        inlier_count: usize,
    ) -> Result<Plane, GeomError> {
        let norm = normal.norm();
        if norm == 0.0 {
            return Err(GeomError::ZeroLengthVector);
        }
        let n = normal / norm;
        Ok(Plane {
            normal: n,
            offset: -n.dot(&point),
            class,
            centroid: point,
            inlier_count,
        })
    }

    pub fn new(
        normal: Vec3,
        offset: f64,
        class: BuildingClass,
        centroid: Vec3,
        inlier_count: usize,
    ) -> Result<Plane, GeomError> {
        let norm = normal.norm();
        if norm == 0.0 {
            return Err(GeomError::ZeroLengthVector);
        }
        Ok(Plane {
            normal: normal / norm,
            offset: offset / norm,
            class,
            centroid,
            inlier_count,
        })
    }

    /// Flip the orientation; the plane's point set is unchanged.
    pub fn flipped(&self) -> Plane {
        Plane {
            normal: -self.normal,
            offset: -self.offset,
            ..self.clone()
        }
    }

    /// Same plane, oriented so its normal agrees in sign with `reference`.
    pub fn sign_aligned_to(&self, reference: &Vec3) -> Plane {
        if self.normal.dot(reference) < 0.0 {
            self.flipped()
        } else {
            self.clone()
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        point_plane_distance(p, self)
    }
}

/// Express a plane given in the pose's local frame in the parent frame.
///
/// The transformed plane satisfies `n_g·(pose·p) + d_g = n_l·p + d_l` for all
/// points, so inlier residuals are preserved exactly.
pub fn transform_plane(pose: &PoseSE3, local: &Plane) -> Plane {
    let normal = pose.rotation() * local.normal;
    let offset = local.offset - normal.dot(&pose.translation());
    Plane {
        normal,
        offset,
        class: local.class,
        centroid: pose.transform_point(&local.centroid),
        inlier_count: local.inlier_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        let t = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let axis = if axis.norm() < 1e-6 { Vec3::x() } else { axis };
        PoseSE3::new(Rotation3::from_scaled_axis(axis.normalize() * angle), t)
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn compose_identity_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert!(PoseSE3::identity().compose(&p).is_approx(&p, 1e-12));
        assert!(p.compose(&PoseSE3::identity()).is_approx(&p, 1e-12));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            assert!(p.compose(&p.inverse()).is_approx(&PoseSE3::identity(), 1e-9));
        }
    }

    #[test]
    fn pure_translations_add() {
        let a = PoseSE3::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = PoseSE3::from_translation(Vec3::new(0.0, 2.0, 0.0));
        let c = a.compose(&b);
        assert_abs_diff_eq!(c.translation(), Vec3::new(1.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(left.is_approx(&right, 1e-9));
        }
    }

    #[test]
    fn inverse_compose_defining_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            // (a ⊟ b) ⊞ b = a
            assert!(a.inverse_compose(&b).compose(&b).is_approx(&a, 1e-9));
            // (a ⊞ b) ⊟ b = a
            assert!(a.compose(&b).inverse_compose(&b).is_approx(&a, 1e-9));
        }
        let p = random_pose(&mut rng);
        assert!(p.inverse_compose(&p).is_approx(&PoseSE3::identity(), 1e-9));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            assert!(PoseSE3::exp(&p.log()).is_approx(&p, 1e-9));
        }
    }

    #[test]
    fn transform_plane_identity_and_translation() {
        let plane = Plane::new(
            Vec3::z(),
            0.0,
            BuildingClass::Ground,
            Vec3::zeros(),
            10,
        )
        .unwrap();
        let same = transform_plane(&PoseSE3::identity(), &plane);
        assert_eq!(same.normal, plane.normal);
        assert_eq!(same.offset, plane.offset);

        let t = Vec3::new(0.5, -0.25, 2.0);
        let moved = transform_plane(&PoseSE3::from_translation(t), &plane);
        assert_abs_diff_eq!(moved.normal, plane.normal, epsilon = 1e-15);
        assert_abs_diff_eq!(moved.offset, plane.offset - plane.normal.dot(&t), epsilon = 1e-12);
    }

    #[test]
    fn transform_plane_preserves_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let pose = random_pose(&mut rng);
            let n = random_unit(&mut rng);
            let plane = Plane::new(n, rng.random_range(-2.0..2.0), BuildingClass::Wall, Vec3::zeros(), 1)
                .unwrap();
            let global = transform_plane(&pose, &plane);
            for _ in 0..10 {
                let p = Vec3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                let local_res = point_plane_distance(&p, &plane);
                let global_res = point_plane_distance(&pose.transform_point(&p), &global);
                assert_abs_diff_eq!(local_res, global_res, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(global.normal.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn point_plane_distance_examples() {
        let z0 = Plane::new(Vec3::z(), 0.0, BuildingClass::Ground, Vec3::zeros(), 1).unwrap();
        assert_eq!(point_plane_distance(&Vec3::new(3.0, -1.0, 0.0), &z0), 0.0);
        assert_eq!(point_plane_distance(&Vec3::new(5.0, 5.0, 2.0), &z0), 2.0);
    }

    #[test]
    fn point_plane_distance_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let d = rng.random_range(-2.0..2.0);
            let plane = Plane::new(n, d, BuildingClass::Wall, Vec3::zeros(), 1).unwrap();
            let p = Vec3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
            // Project p onto the plane, then measure the displacement.
            let s = point_plane_distance(&p, &plane);
            let projected = p - s * plane.normal;
            assert!(point_plane_distance(&projected, &plane).abs() < 1e-12);
            assert_abs_diff_eq!((p - projected).norm(), s.abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn angle_between_examples() {
        let x = Vec3::x();
        assert_abs_diff_eq!(angle_between(&x, &x).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(angle_between(&x, &Vec3::y()).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(angle_between(&x, &(-x)).unwrap(), PI, epsilon = 1e-15);
        assert!(angle_between(&Vec3::zeros(), &x).is_err());
    }

    #[test]
    fn angle_between_never_nan_under_rounding() {
        // Nearly identical unit vectors can push the raw dot product past 1.
        let a = Vec3::new(1.0, 1e-9, 0.0).normalize();
        let b = Vec3::new(1.0, 1.0000001e-9, 0.0).normalize();
        let angle = angle_between(&a, &b).unwrap();
        assert!(angle.is_finite());
        let sym = angle_between(&b, &a).unwrap();
        assert_eq!(angle, sym);
    }

    #[test]
    fn so3_jacobian_inverse_consistency() {
        // Log(R Exp(δ)) ≈ Log(R) + Jr⁻¹(Log R) δ
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let theta = random_unit(&mut rng) * rng.random_range(0.1..2.0);
            let r = Rotation3::from_scaled_axis(theta);
            let delta = random_unit(&mut rng) * 1e-6;
            let perturbed = (r * Rotation3::from_scaled_axis(delta)).scaled_axis();
            let predicted = theta + so3_right_jacobian_inv(&theta) * delta;
            assert_abs_diff_eq!(perturbed, predicted, epsilon = 1e-10);
        }
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng);
        let m = p.to_matrix();
        let q = PoseSE3::from_matrix(&m).unwrap();
        assert!(p.is_approx(&q, 1e-12));
        assert!(p.orthonormality_error() <= 1e-9);
    }

    #[test]
    fn building_and_structural_classes_disjoint() {
        for b in BuildingClass::ALL {
            assert!(matches!(b, BuildingClass::Wall | BuildingClass::Ground));
        }
        assert_ne!(BuildingClass::Wall, BuildingClass::Ground);
        assert_ne!(StructuralClass::Room, StructuralClass::Floor);
    }
}
