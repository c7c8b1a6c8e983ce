//! Nonlinear least-squares refinement of keyframe poses, plane components,
//! room centroids, and the floor centroid.
//!
//! A [`Problem`] holds variables (poses, planes, 3D points) and factors
//! (odometry, plane observations, room parallel/perpendicular/centroid
//! terms, the floor term, marker constraints). Factors provide analytic
//! Jacobians on the same local parameterizations the solver steps in;
//! [`numeric_jacobian`] provides the central-difference reference used to
//! validate them.
//!
//! Local parameterizations: poses take a 6-dof decoupled tangent
//! (translation added in the parent frame, rotation multiplied on the
//! right); planes take 2 tangent coordinates on the unit normal plus an
//! offset shift, with the normal re-normalized — so plane normals stay unit
//! after every step by construction; points are additive.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector6};
use thiserror::Error;

use crate::atlas::{ComponentId, KeyFrameId, MarkerId, RoomId, SceneGraph};
use crate::geom::{
    skew, so3_left_jacobian_inv, so3_right_jacobian_inv, transform_plane, BuildingClass, Plane,
    PoseSE3, Vec3,
};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("problem has no factors")]
    NoFactors,
    #[error("variable {0} is not referenced by any factor")]
    OrphanVariable(String),
    #[error("room centroid cost needs at least one wall centroid")]
    EmptyWallSet,
    #[error("floor cost needs at least one room centroid")]
    EmptyRoomSet,
    #[error("factor graph parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Orthonormal basis of the tangent plane at unit vector `n`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let b1 = n.cross(&axis).normalize();
    let b2 = n.cross(&b1);
    (b1, b2)
}

/// Value of an optimization variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Pose(PoseSE3),
    Plane(Plane),
    Point(Vec3),
}

impl Value {
    pub fn local_dim(&self) -> usize {
        match self {
            Value::Pose(_) => 6,
            Value::Plane(_) => 3,
            Value::Point(_) => 3,
        }
    }

    /// Apply a local-parameterization increment.
    pub fn plus(&self, delta: &[f64]) -> Value {
        match self {
            Value::Pose(p) => {
                let d = Vector6::from_row_slice(delta);
                Value::Pose(p.boxplus(&d))
            }
            Value::Plane(plane) => {
                let (b1, b2) = tangent_basis(&plane.normal);
                let normal = (plane.normal + b1 * delta[0] + b2 * delta[1]).normalize();
                let offset = plane.offset + delta[2];
                // keep the stored centroid on the updated plane
                let residual = normal.dot(&plane.centroid) + offset;
                let centroid = plane.centroid - residual * normal;
                Value::Plane(Plane {
                    normal,
                    offset,
                    centroid,
                    ..plane.clone()
                })
            }
            Value::Point(p) => Value::Point(p + Vec3::new(delta[0], delta[1], delta[2])),
        }
    }

    pub fn as_pose(&self) -> &PoseSE3 {
        match self {
            Value::Pose(p) => p,
            _ => panic!("variable is not a pose"),
        }
    }

    pub fn as_plane(&self) -> &Plane {
        match self {
            Value::Plane(p) => p,
            _ => panic!("variable is not a plane"),
        }
    }

    pub fn as_point(&self) -> &Vec3 {
        match self {
            Value::Point(p) => p,
            _ => panic!("variable is not a point"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub label: String,
    pub value: Value,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    None,
    Huber(f64),
}

impl RobustLoss {
    /// ρ(s) for squared whitened norm `s`.
    fn cost(&self, s: f64) -> f64 {
        match self {
            RobustLoss::None => s,
            RobustLoss::Huber(delta) => {
                let r = s.sqrt();
                if r <= *delta {
                    s
                } else {
                    2.0 * delta * r - delta * delta
                }
            }
        }
    }

    /// Linearization weight ρ'(s), clamped to [0, 1].
    fn weight(&self, s: f64) -> f64 {
        match self {
            RobustLoss::None => 1.0,
            RobustLoss::Huber(delta) => {
                let r = s.sqrt();
                if r <= *delta {
                    1.0
                } else {
                    delta / r
                }
            }
        }
    }
}

/// The measurement part of a factor.
#[derive(Debug, Clone)]
pub enum FactorKind {
    /// Relative pose `measurement ≈ a⁻¹ ⊞ b` between two pose variables.
    Odometry {
        a: usize,
        b: usize,
        measurement: PoseSE3,
    },
    /// A map plane re-observed from a keyframe as `local` in its frame.
    /// The residual compares the measurement against the map plane expressed
    /// in the keyframe frame, which keeps it invariant under a global gauge
    /// change. `basis` spans the tangent plane of the measured local normal
    /// and fixes the 2-dof normal-deviation coordinates of the residual.
    PlaneObservation {
        pose: usize,
        plane: usize,
        local: Plane,
        basis: (Vec3, Vec3),
    },
    /// Walls of one room expected parallel (normals aligned up to sign).
    /// The residual is the normal cross product: smooth, zero exactly at
    /// parallelism, and sign-flip invariant in cost.
    RoomParallel { plane_i: usize, plane_j: usize },
    /// Walls of one room expected perpendicular. The residual is the raw
    /// normal dot product: smooth and zero exactly at orthogonality.
    RoomPerpendicular { plane_i: usize, plane_j: usize },
    /// Room centroid tied to the mean of its wall centroids; the stored
    /// centroids are projected onto the current wall planes.
    RoomCentroid {
        room: usize,
        walls: Vec<usize>,
        wall_centroids: Vec<Vec3>,
    },
    /// Floor centroid tied to the mean of the room centroid variables.
    FloorCentroid { floor: usize, rooms: Vec<usize> },
    /// Marker pose constrained by a keyframe observation, with the residual
    /// expressed in the observation frame.
    MarkerPose {
        pose: usize,
        marker: usize,
        local: PoseSE3,
    },
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub kind: FactorKind,
    /// Symmetric PSD information matrix; dimension matches the residual.
    pub information: DMatrix<f64>,
    pub robust: RobustLoss,
}

impl Factor {
    pub fn residual_dim(&self) -> usize {
        match self.kind {
            FactorKind::Odometry { .. } | FactorKind::MarkerPose { .. } => 6,
            FactorKind::PlaneObservation { .. } => 3,
            FactorKind::RoomParallel { .. } => 3,
            FactorKind::RoomPerpendicular { .. } => 1,
            FactorKind::RoomCentroid { .. } | FactorKind::FloorCentroid { .. } => 3,
        }
    }

    pub fn variables(&self) -> Vec<usize> {
        match &self.kind {
            FactorKind::Odometry { a, b, .. } => vec![*a, *b],
            FactorKind::PlaneObservation { pose, plane, .. } => vec![*pose, *plane],
            FactorKind::RoomParallel { plane_i, plane_j }
            | FactorKind::RoomPerpendicular { plane_i, plane_j } => vec![*plane_i, *plane_j],
            FactorKind::RoomCentroid { room, walls, .. } => {
                let mut v = vec![*room];
                v.extend_from_slice(walls);
                v
            }
            FactorKind::FloorCentroid { floor, rooms } => {
                let mut v = vec![*floor];
                v.extend_from_slice(rooms);
                v
            }
            FactorKind::MarkerPose { pose, marker, .. } => vec![*pose, *marker],
        }
    }

    /// Raw (unwhitened) residual at the given variable values.
    pub fn residual(&self, values: &[Value]) -> DVector<f64> {
        match &self.kind {
            FactorKind::Odometry { a, b, measurement } => {
                let pa = values[*a].as_pose();
                let pb = values[*b].as_pose();
                let err = measurement.inverse().compose(&pa.between(pb));
                DVector::from_column_slice(err.log().as_slice())
            }
            FactorKind::PlaneObservation {
                pose,
                plane,
                local,
                basis,
            } => {
                let kf = values[*pose].as_pose();
                let map = values[*plane].as_plane();
                let predicted = transform_plane(&kf.inverse(), map);
                let sign = if predicted.normal.dot(&local.normal) < 0.0 {
                    -1.0
                } else {
                    1.0
                };
                let dn = local.normal - predicted.normal * sign;
                DVector::from_column_slice(&[
                    basis.0.dot(&dn),
                    basis.1.dot(&dn),
                    local.offset - sign * predicted.offset,
                ])
            }
            FactorKind::RoomParallel { plane_i, plane_j } => {
                let cross = values[*plane_i]
                    .as_plane()
                    .normal
                    .cross(&values[*plane_j].as_plane().normal);
                DVector::from_column_slice(&[cross.x, cross.y, cross.z])
            }
            FactorKind::RoomPerpendicular { plane_i, plane_j } => {
                let dot = values[*plane_i]
                    .as_plane()
                    .normal
                    .dot(&values[*plane_j].as_plane().normal);
                DVector::from_column_slice(&[dot])
            }
            FactorKind::RoomCentroid {
                room,
                walls,
                wall_centroids,
            } => {
                let x = values[*room].as_point();
                let mut mean = Vec3::zeros();
                for (wall, c) in walls.iter().zip(wall_centroids) {
                    let plane = values[*wall].as_plane();
                    let u = plane.normal.dot(c) + plane.offset;
                    mean += c - u * plane.normal;
                }
                mean /= walls.len() as f64;
                let r = x - mean;
                DVector::from_column_slice(&[r.x, r.y, r.z])
            }
            FactorKind::FloorCentroid { floor, rooms } => {
                let f = values[*floor].as_point();
                let mut mean = Vec3::zeros();
                for room in rooms {
                    mean += values[*room].as_point();
                }
                mean /= rooms.len() as f64;
                let r = f - mean;
                DVector::from_column_slice(&[r.x, r.y, r.z])
            }
            FactorKind::MarkerPose {
                pose,
                marker,
                local,
            } => {
                let kf = values[*pose].as_pose();
                let global = values[*marker].as_pose();
                let predicted = kf.compose(local);
                let err = predicted.inverse().compose(global);
                DVector::from_column_slice(err.log().as_slice())
            }
        }
    }

    /// Analytic Jacobians of the raw residual w.r.t. each involved
    /// variable's local parameterization, in [`Factor::variables`] order.
    pub fn jacobians(&self, values: &[Value]) -> Vec<DMatrix<f64>> {
        match &self.kind {
            FactorKind::Odometry { a, b, measurement } => {
                let pa = values[*a].as_pose();
                let pb = values[*b].as_pose();
                let err = measurement.inverse().compose(&pa.between(pb));
                let theta = err.rotation().scaled_axis();
                let ra_t = pa.rotation().inverse();
                let rz_t = measurement.rotation().inverse().matrix().into_owned();
                let u = ra_t * (pb.translation() - pa.translation());
                let jl_inv = so3_left_jacobian_inv(&theta);
                let jr_inv = so3_right_jacobian_inv(&theta);

                let mut ja = DMatrix::zeros(6, 6);
                ja.view_mut((0, 0), (3, 3))
                    .copy_from(&(-(rz_t * ra_t.matrix())));
                ja.view_mut((0, 3), (3, 3)).copy_from(&(rz_t * skew(&u)));
                ja.view_mut((3, 3), (3, 3)).copy_from(&(-jl_inv * rz_t));

                let mut jb = DMatrix::zeros(6, 6);
                jb.view_mut((0, 0), (3, 3))
                    .copy_from(&(rz_t * ra_t.matrix()));
                jb.view_mut((3, 3), (3, 3)).copy_from(&jr_inv);
                vec![ja, jb]
            }
            FactorKind::PlaneObservation {
                pose,
                plane,
                local,
                basis,
            } => {
                let kf = values[*pose].as_pose();
                let map = values[*plane].as_plane();
                let r_t = kf.rotation().inverse().matrix().into_owned();
                let n_hat = kf.rotation().inverse() * map.normal;
                let sign = if n_hat.dot(&local.normal) < 0.0 { -1.0 } else { 1.0 };
                // n̂(δθ) = Exp(-δθ) Rᵀ n_m → ∂n̂/∂δθ = [n̂]ₓ;
                // d̂ = d_m + n_mᵀ (t + δt) → ∂d̂/∂δt = n_mᵀ
                let dn_dtheta = skew(&n_hat);
                let mut j_pose = DMatrix::zeros(3, 6);
                for (row, b) in [basis.0, basis.1].iter().enumerate() {
                    let block = -sign * (b.transpose() * dn_dtheta);
                    j_pose.view_mut((row, 3), (1, 3)).copy_from(&block);
                }
                j_pose
                    .view_mut((2, 0), (1, 3))
                    .copy_from(&(-sign * map.normal.transpose()));

                let (b1m, b2m) = tangent_basis(&map.normal);
                let t = kf.translation();
                let mut j_plane = DMatrix::zeros(3, 3);
                for (row, b) in [basis.0, basis.1].iter().enumerate() {
                    j_plane[(row, 0)] = -sign * b.dot(&(r_t * b1m));
                    j_plane[(row, 1)] = -sign * b.dot(&(r_t * b2m));
                }
                j_plane[(2, 0)] = -sign * t.dot(&b1m);
                j_plane[(2, 1)] = -sign * t.dot(&b2m);
                j_plane[(2, 2)] = -sign;
                vec![j_pose, j_plane]
            }
            FactorKind::RoomParallel { plane_i, plane_j } => {
                let ni = values[*plane_i].as_plane().normal;
                let nj = values[*plane_j].as_plane().normal;
                let (b1i, b2i) = tangent_basis(&ni);
                let (b1j, b2j) = tangent_basis(&nj);
                // ∂(n_i × n_j)/∂n_i = -[n_j]ₓ, and symmetrically for n_j
                let mut ji = DMatrix::zeros(3, 3);
                ji.view_mut((0, 0), (3, 1)).copy_from(&(-skew(&nj) * b1i));
                ji.view_mut((0, 1), (3, 1)).copy_from(&(-skew(&nj) * b2i));
                let mut jj = DMatrix::zeros(3, 3);
                jj.view_mut((0, 0), (3, 1)).copy_from(&(skew(&ni) * b1j));
                jj.view_mut((0, 1), (3, 1)).copy_from(&(skew(&ni) * b2j));
                vec![ji, jj]
            }
            FactorKind::RoomPerpendicular { plane_i, plane_j } => {
                let ni = values[*plane_i].as_plane().normal;
                let nj = values[*plane_j].as_plane().normal;
                let (b1i, b2i) = tangent_basis(&ni);
                let (b1j, b2j) = tangent_basis(&nj);
                let mut ji = DMatrix::zeros(1, 3);
                ji[(0, 0)] = nj.dot(&b1i);
                ji[(0, 1)] = nj.dot(&b2i);
                let mut jj = DMatrix::zeros(1, 3);
                jj[(0, 0)] = ni.dot(&b1j);
                jj[(0, 1)] = ni.dot(&b2j);
                vec![ji, jj]
            }
            FactorKind::RoomCentroid {
                room: _,
                walls,
                wall_centroids,
            } => {
                let n_walls = walls.len() as f64;
                let mut out = vec![DMatrix::identity(3, 3)];
                for (wall, c) in walls.iter().zip(wall_centroids) {
                    let plane = values[*wall].as_plane();
                    let (b1, b2) = tangent_basis(&plane.normal);
                    let u = plane.normal.dot(c) + plane.offset;
                    // ∂proj/∂ε = -(n (Bᵀc)ᵀ + u B | n); residual subtracts the
                    // mean, so the factor contributes +1/n of that.
                    let mut j = DMatrix::zeros(3, 3);
                    let col1 = (plane.normal * b1.dot(c) + u * b1) / n_walls;
                    let col2 = (plane.normal * b2.dot(c) + u * b2) / n_walls;
                    let col3 = plane.normal / n_walls;
                    j.view_mut((0, 0), (3, 1)).copy_from(&col1);
                    j.view_mut((0, 1), (3, 1)).copy_from(&col2);
                    j.view_mut((0, 2), (3, 1)).copy_from(&col3);
                    out.push(j);
                }
                out
            }
            FactorKind::FloorCentroid { floor: _, rooms } => {
                let mut out = vec![DMatrix::identity(3, 3)];
                let w = -1.0 / rooms.len() as f64;
                for _ in rooms {
                    out.push(DMatrix::identity(3, 3) * w);
                }
                out
            }
            FactorKind::MarkerPose {
                pose,
                marker,
                local,
            } => {
                let kf = values[*pose].as_pose();
                let global = values[*marker].as_pose();
                let predicted = kf.compose(local);
                let err = predicted.inverse().compose(global);
                let theta = err.rotation().scaled_axis();
                let rm_t = local.rotation().inverse().matrix().into_owned();
                let p_rt = predicted.rotation().inverse().matrix().into_owned();
                let w = kf.rotation().inverse() * (global.translation() - kf.translation());
                let jl_inv = so3_left_jacobian_inv(&theta);
                let jr_inv = so3_right_jacobian_inv(&theta);

                let mut j_pose = DMatrix::zeros(6, 6);
                j_pose.view_mut((0, 0), (3, 3)).copy_from(&(-(p_rt.clone())));
                j_pose
                    .view_mut((0, 3), (3, 3))
                    .copy_from(&(rm_t * skew(&w)));
                j_pose
                    .view_mut((3, 3), (3, 3))
                    .copy_from(&(-jl_inv * rm_t));

                let mut j_marker = DMatrix::zeros(6, 6);
                j_marker.view_mut((0, 0), (3, 3)).copy_from(&p_rt);
                j_marker.view_mut((3, 3), (3, 3)).copy_from(&jr_inv);
                vec![j_pose, j_marker]
            }
        }
    }
}

// --- scalar cost terms ------------------------------------------------------

/// `1 − |n_iᵀ n_j|`: zero for parallel unit normals, one for orthogonal.
pub fn parallel_cost(n_i: &Vec3, n_j: &Vec3) -> f64 {
    1.0 - n_i.dot(n_j).abs()
}

/// `|n_iᵀ n_j|`: zero for orthogonal unit normals, one for parallel.
pub fn perpendicular_cost(n_i: &Vec3, n_j: &Vec3) -> f64 {
    n_i.dot(n_j).abs()
}

/// Squared distance between a room centroid estimate and the mean of its
/// wall centroids.
pub fn room_centroid_cost(room_centroid: &Vec3, wall_centroids: &[Vec3]) -> Result<f64, OptimizeError> {
    if wall_centroids.is_empty() {
        return Err(OptimizeError::EmptyWallSet);
    }
    let mean = wall_centroids.iter().sum::<Vec3>() / wall_centroids.len() as f64;
    Ok((room_centroid - mean).norm_squared())
}

/// Squared Mahalanobis distance between a floor centroid estimate and the
/// mean of the room centroids, weighted by `information`.
pub fn floor_cost(
    floor_centroid: &Vec3,
    room_centroids: &[Vec3],
    information: &Matrix3<f64>,
) -> Result<f64, OptimizeError> {
    if room_centroids.is_empty() {
        return Err(OptimizeError::EmptyRoomSet);
    }
    let mean = room_centroids.iter().sum::<Vec3>() / room_centroids.len() as f64;
    let d = floor_centroid - mean;
    Ok((d.transpose() * information * d)[(0, 0)])
}

/// 6-dof marker residual in the observation frame: the pose difference
/// between the predicted marker (keyframe ⊞ local observation) and the
/// global marker estimate. Zero iff the prediction matches.
pub fn marker_residual(
    kf_pose: &PoseSE3,
    marker_global: &PoseSE3,
    local_obs: &PoseSE3,
) -> Vector6<f64> {
    kf_pose
        .compose(local_obs)
        .inverse()
        .compose(marker_global)
        .log()
}

/// Wall pairs of a room classified as parallel (normals aligned up to sign
/// and facing each other) or perpendicular, by id order.
pub fn classify_wall_pairs(
    room: &crate::atlas::Room,
    g: &SceneGraph,
    angle_tol: f64,
) -> (Vec<(ComponentId, ComponentId)>, Vec<(ComponentId, ComponentId)>) {
    let mut parallel = Vec::new();
    let mut perpendicular = Vec::new();
    for (i, &wi) in room.walls.iter().enumerate() {
        for &wj in room.walls.iter().skip(i + 1) {
            let (Some(a), Some(b)) = (g.components.get(&wi), g.components.get(&wj)) else {
                continue;
            };
            let angle = crate::geom::angle_between_lines(&a.plane.normal, &b.plane.normal)
                .expect("unit normals");
            if angle <= angle_tol {
                // parallel candidates must face each other across the room
                if a.plane.normal.dot(&b.plane.normal) < 0.0 {
                    parallel.push((wi, wj));
                }
            } else if (angle - std::f64::consts::FRAC_PI_2).abs() <= angle_tol {
                perpendicular.push((wi, wj));
            }
        }
    }
    (parallel, perpendicular)
}

/// Sum of the room's normalized pair costs plus its centroid term:
/// `(1/N∥)·Σ parallel + (1/N⊥)·Σ perpendicular + ‖ν̂ − mean(walls)‖²`,
/// with empty pair sets contributing zero.
pub fn room_total_cost(
    room: &crate::atlas::Room,
    g: &SceneGraph,
    angle_tol: f64,
) -> Result<f64, OptimizeError> {
    let (parallel, perpendicular) = classify_wall_pairs(room, g, angle_tol);
    let mut cost = 0.0;
    if !parallel.is_empty() {
        let sum: f64 = parallel
            .iter()
            .map(|(i, j)| {
                parallel_cost(&g.components[i].plane.normal, &g.components[j].plane.normal)
            })
            .sum();
        cost += sum / parallel.len() as f64;
    }
    if !perpendicular.is_empty() {
        let sum: f64 = perpendicular
            .iter()
            .map(|(i, j)| {
                perpendicular_cost(&g.components[i].plane.normal, &g.components[j].plane.normal)
            })
            .sum();
        cost += sum / perpendicular.len() as f64;
    }
    let wall_centroids: Vec<Vec3> = room
        .walls
        .iter()
        .filter_map(|w| g.components.get(w).map(|c| c.plane.centroid))
        .collect();
    cost += room_centroid_cost(&room.centroid, &wall_centroids)?;
    Ok(cost)
}

// --- numeric differentiation ------------------------------------------------

/// Central-difference Jacobian of `f` w.r.t. one variable's local
/// parameterization, at step `h`.
pub fn numeric_jacobian<F>(f: F, value: &Value, h: f64) -> DMatrix<f64>
where
    F: Fn(&Value) -> DVector<f64>,
{
    assert!(h > 0.0);
    let dim = value.local_dim();
    let probe = f(value);
    let mut jac = DMatrix::zeros(probe.len(), dim);
    for k in 0..dim {
        let mut delta = vec![0.0; dim];
        delta[k] = h;
        let plus = f(&value.plus(&delta));
        delta[k] = -h;
        let minus = f(&value.plus(&delta));
        let col = (plus - minus) / (2.0 * h);
        jac.view_mut((0, k), (col.len(), 1)).copy_from(&col);
    }
    jac
}

/// Central-difference Jacobians of a factor w.r.t. every variable it
/// touches, in [`Factor::variables`] order.
pub fn numeric_factor_jacobians(factor: &Factor, values: &[Value], h: f64) -> Vec<DMatrix<f64>> {
    factor
        .variables()
        .into_iter()
        .map(|idx| {
            numeric_jacobian(
                |v| {
                    let mut patched = values.to_vec();
                    patched[idx] = v.clone();
                    factor.residual(&patched)
                },
                &values[idx],
                h,
            )
        })
        .collect()
}

// --- problem & solver ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Terminate when an accepted step decreases the cost by less than this.
    pub cost_tolerance: f64,
    /// Terminate when the update norm falls below this.
    pub update_tolerance: f64,
    /// Pair-classification tolerance for room wall pairs, radians.
    pub wall_pair_angle_tol: f64,
    /// Huber scale applied to plane observations.
    pub huber_delta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50,
            initial_damping: 1e-4,
            cost_tolerance: 1e-9,
            update_tolerance: 1e-8,
            wall_pair_angle_tol: 10f64.to_radians(),
            huber_delta: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub converged: bool,
    /// Total robust cost per accepted iterate, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Problem {
    pub variables: Vec<Variable>,
    pub factors: Vec<Factor>,
    pub config: SolverConfig,
}

impl Problem {
    pub fn new(config: SolverConfig) -> Self {
        Problem {
            variables: Vec::new(),
            factors: Vec::new(),
            config,
        }
    }

    pub fn add_pose(&mut self, label: impl Into<String>, pose: PoseSE3, fixed: bool) -> usize {
        self.variables.push(Variable {
            label: label.into(),
            value: Value::Pose(pose),
            fixed,
        });
        self.variables.len() - 1
    }

    pub fn add_plane(&mut self, label: impl Into<String>, plane: Plane, fixed: bool) -> usize {
        self.variables.push(Variable {
            label: label.into(),
            value: Value::Plane(plane),
            fixed,
        });
        self.variables.len() - 1
    }

    pub fn add_point(&mut self, label: impl Into<String>, point: Vec3, fixed: bool) -> usize {
        self.variables.push(Variable {
            label: label.into(),
            value: Value::Point(point),
            fixed,
        });
        self.variables.len() - 1
    }

    pub fn add_factor(&mut self, kind: FactorKind, information: DMatrix<f64>, robust: RobustLoss) {
        let factor = Factor {
            kind,
            information,
            robust,
        };
        debug_assert_eq!(factor.information.nrows(), factor.residual_dim());
        self.factors.push(factor);
    }

    pub fn values(&self) -> Vec<Value> {
        self.variables.iter().map(|v| v.value.clone()).collect()
    }

    /// Total robust cost at the given values.
    pub fn cost_at(&self, values: &[Value]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let r = f.residual(values);
                let s = (r.transpose() * &f.information * &r)[(0, 0)];
                f.robust.cost(s.max(0.0))
            })
            .sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.cost_at(&self.values())
    }

    fn check_structure(&self) -> Result<(), OptimizeError> {
        if self.factors.is_empty() {
            return Err(OptimizeError::NoFactors);
        }
        let mut referenced = vec![false; self.variables.len()];
        for f in &self.factors {
            for v in f.variables() {
                referenced[v] = true;
            }
        }
        for (idx, var) in self.variables.iter().enumerate() {
            if !referenced[idx] && !var.fixed {
                return Err(OptimizeError::OrphanVariable(var.label.clone()));
            }
        }
        Ok(())
    }

    /// Levenberg–Marquardt. Accepted steps strictly decrease the total
    /// robust cost; terminates on small cost decrease, small update norm,
    /// or the iteration cap, whichever comes first.
    pub fn solve(&mut self) -> Result<SolveResult, OptimizeError> {
        self.check_structure()?;
        let offsets: Vec<Option<usize>> = {
            let mut offsets = Vec::with_capacity(self.variables.len());
            let mut next = 0;
            for v in &self.variables {
                if v.fixed {
                    offsets.push(None);
                } else {
                    offsets.push(Some(next));
                    next += v.value.local_dim();
                }
            }
            offsets
        };
        let dim: usize = self
            .variables
            .iter()
            .filter(|v| !v.fixed)
            .map(|v| v.value.local_dim())
            .sum();

        let mut values = self.values();
        let mut cost = self.cost_at(&values);
        let mut trace = vec![cost];
        let mut lambda = self.config.initial_damping;
        let mut converged = cost <= self.config.cost_tolerance || dim == 0;
        let mut iterations = 0;

        'outer: while !converged && iterations < self.config.max_iterations {
            iterations += 1;
            let (h, g) = self.linearize(&values, &offsets, dim);

            let mut attempts = 0;
            loop {
                attempts += 1;
                let mut damped = h.clone();
                for i in 0..dim {
                    damped[(i, i)] += lambda * h[(i, i)] + 1e-10;
                }
                let Some(chol) = damped.cholesky() else {
                    // indefinite or singular normal equations: raise damping
                    lambda *= 10.0;
                    if attempts > 20 {
                        break 'outer;
                    }
                    continue;
                };
                let step = chol.solve(&(-&g));
                let candidate = apply_step(&self.variables, &values, &offsets, &step);
                let new_cost = self.cost_at(&candidate);
                if new_cost < cost {
                    let decrease = cost - new_cost;
                    values = candidate;
                    cost = new_cost;
                    trace.push(cost);
                    lambda = (lambda / 3.0).max(1e-12);
                    if decrease < self.config.cost_tolerance
                        || step.norm() < self.config.update_tolerance
                    {
                        converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e14 || attempts > 20 {
                    // no downhill step found: report best-so-far
                    break 'outer;
                }
            }
        }

        for (var, value) in self.variables.iter_mut().zip(values) {
            var.value = value;
        }
        Ok(SolveResult {
            converged,
            cost_trace: trace,
            iterations,
        })
    }

    fn linearize(
        &self,
        values: &[Value],
        offsets: &[Option<usize>],
        dim: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for factor in &self.factors {
            let vars = factor.variables();
            let r = factor.residual(values);
            let jacs = factor.jacobians(values);
            let sqrt_info = factor
                .information
                .clone()
                .cholesky()
                .map(|c| c.l().transpose())
                .unwrap_or_else(|| DMatrix::identity(r.len(), r.len()));
            let mut rw = &sqrt_info * &r;
            let mut jw: Vec<DMatrix<f64>> = jacs.iter().map(|j| &sqrt_info * j).collect();
            let s = rw.norm_squared();
            let w = factor.robust.weight(s).sqrt();
            if w != 1.0 {
                rw *= w;
                for j in jw.iter_mut() {
                    *j *= w;
                }
            }
            for (i, &vi) in vars.iter().enumerate() {
                let Some(oi) = offsets[vi] else { continue };
                let di = values[vi].local_dim();
                let jit = jw[i].transpose();
                g.view_mut((oi, 0), (di, 1)).add_assign(&jit * &rw);
                for (j, &vj) in vars.iter().enumerate() {
                    let Some(oj) = offsets[vj] else { continue };
                    let dj = values[vj].local_dim();
                    h.view_mut((oi, oj), (di, dj)).add_assign(&jit * &jw[j]);
                }
            }
        }
        (h, g)
    }
}

fn apply_step(
    variables: &[Variable],
    values: &[Value],
    offsets: &[Option<usize>],
    step: &DVector<f64>,
) -> Vec<Value> {
    variables
        .iter()
        .zip(values)
        .zip(offsets)
        .map(|((var, value), offset)| match offset {
            Some(o) if !var.fixed => {
                let dim = value.local_dim();
                value.plus(step.as_slice()[*o..*o + dim].as_ref())
            }
            _ => value.clone(),
        })
        .collect()
}

// --- building a problem from a scene graph -----------------------------------

/// A relative pose measurement between consecutive keyframes.
#[derive(Debug, Clone)]
pub struct OdometryMeasurement {
    pub from: KeyFrameId,
    pub to: KeyFrameId,
    pub relative: PoseSE3,
    pub information: nalgebra::Matrix6<f64>,
}

/// Maps scene-graph entities to problem variable indices.
#[derive(Debug, Clone, Default)]
pub struct ProblemBinding {
    pub keyframes: BTreeMap<KeyFrameId, usize>,
    pub components: BTreeMap<ComponentId, usize>,
    pub rooms: BTreeMap<RoomId, usize>,
    pub floor: Option<usize>,
    pub markers: BTreeMap<MarkerId, usize>,
}

/// Build the joint refinement problem over a scene graph: odometry factors,
/// plane observation factors (Huber-robust), room parallel/perpendicular and
/// centroid factors, the floor factor, and marker factors. The lowest-id
/// keyframe pose is fixed as the gauge.
pub fn build_problem(
    graph: &SceneGraph,
    odometry: &[OdometryMeasurement],
    config: SolverConfig,
) -> (Problem, ProblemBinding) {
    let mut problem = Problem::new(config.clone());
    let mut binding = ProblemBinding::default();

    let first = graph.keyframes.keys().next().copied();
    for (id, kf) in &graph.keyframes {
        let fixed = Some(*id) == first;
        let idx = problem.add_pose(format!("keyframe_{id}"), kf.pose, fixed);
        binding.keyframes.insert(*id, idx);
    }
    for (id, component) in &graph.components {
        let idx = problem.add_plane(format!("component_{id}"), component.plane.clone(), false);
        binding.components.insert(*id, idx);
    }
    for (id, room) in &graph.rooms {
        let idx = problem.add_point(format!("room_{id}"), room.centroid, false);
        binding.rooms.insert(*id, idx);
    }
    if let Some(floor) = &graph.floor {
        binding.floor = Some(problem.add_point(
            format!("floor_{}", floor.id.0),
            floor.centroid,
            false,
        ));
    }
    for (id, marker) in &graph.markers {
        let idx = problem.add_pose(format!("marker_{id}"), marker.pose, false);
        binding.markers.insert(*id, idx);
    }

    for odo in odometry {
        let (Some(&a), Some(&b)) = (
            binding.keyframes.get(&odo.from),
            binding.keyframes.get(&odo.to),
        ) else {
            continue;
        };
        let mut info = DMatrix::zeros(6, 6);
        info.copy_from(&odo.information);
        problem.add_factor(
            FactorKind::Odometry {
                a,
                b,
                measurement: odo.relative,
            },
            info,
            RobustLoss::None,
        );
    }

    for (id, component) in &graph.components {
        let plane_idx = binding.components[id];
        for obs in &component.observations {
            let Some(&pose_idx) = binding.keyframes.get(&obs.keyframe) else {
                continue;
            };
            problem.add_factor(
                FactorKind::PlaneObservation {
                    pose: pose_idx,
                    plane: plane_idx,
                    basis: tangent_basis(&obs.plane.normal),
                    local: obs.plane.clone(),
                },
                DMatrix::identity(3, 3),
                RobustLoss::Huber(config.huber_delta),
            );
        }
    }

    for (room_id, room) in &graph.rooms {
        let (parallel, perpendicular) = classify_wall_pairs(room, graph, config.wall_pair_angle_tol);
        if !parallel.is_empty() {
            let info = DMatrix::identity(3, 3) * (1.0 / parallel.len() as f64);
            for (i, j) in parallel {
                problem.add_factor(
                    FactorKind::RoomParallel {
                        plane_i: binding.components[&i],
                        plane_j: binding.components[&j],
                    },
                    info.clone(),
                    RobustLoss::None,
                );
            }
        }
        if !perpendicular.is_empty() {
            let info = DMatrix::from_element(1, 1, 1.0 / perpendicular.len() as f64);
            for (i, j) in perpendicular {
                problem.add_factor(
                    FactorKind::RoomPerpendicular {
                        plane_i: binding.components[&i],
                        plane_j: binding.components[&j],
                    },
                    info.clone(),
                    RobustLoss::None,
                );
            }
        }
        let walls: Vec<usize> = room
            .walls
            .iter()
            .filter_map(|w| binding.components.get(w).copied())
            .collect();
        let wall_centroids: Vec<Vec3> = room
            .walls
            .iter()
            .filter_map(|w| graph.components.get(w).map(|c| c.plane.centroid))
            .collect();
        if !walls.is_empty() {
            problem.add_factor(
                FactorKind::RoomCentroid {
                    room: binding.rooms[room_id],
                    walls,
                    wall_centroids,
                },
                DMatrix::identity(3, 3),
                RobustLoss::None,
            );
        }
    }

    if let (Some(floor_idx), Some(floor)) = (binding.floor, &graph.floor) {
        let rooms: Vec<usize> = floor
            .rooms
            .iter()
            .filter_map(|r| binding.rooms.get(r).copied())
            .collect();
        if !rooms.is_empty() {
            problem.add_factor(
                FactorKind::FloorCentroid {
                    floor: floor_idx,
                    rooms,
                },
                DMatrix::identity(3, 3),
                RobustLoss::None,
            );
        }
    }

    for (kf_id, kf) in &graph.keyframes {
        for obs in &kf.markers {
            let Some(&marker_idx) = binding.markers.get(&MarkerId(obs.marker_id)) else {
                continue;
            };
            let mut info = DMatrix::zeros(6, 6);
            info.copy_from(&obs.information);
            problem.add_factor(
                FactorKind::MarkerPose {
                    pose: binding.keyframes[kf_id],
                    marker: marker_idx,
                    local: obs.local_pose,
                },
                info,
                RobustLoss::None,
            );
        }
    }

    (problem, binding)
}

/// Write optimized variable values back into the scene graph.
pub fn apply_solution(graph: &mut SceneGraph, problem: &Problem, binding: &ProblemBinding) {
    for (id, &idx) in &binding.keyframes {
        if let Some(kf) = graph.keyframes.get_mut(id) {
            kf.pose = *problem.variables[idx].value.as_pose();
        }
    }
    for (id, &idx) in &binding.components {
        if let Some(component) = graph.components.get_mut(id) {
            component.plane = problem.variables[idx].value.as_plane().clone();
        }
    }
    for (id, &idx) in &binding.rooms {
        if let Some(room) = graph.rooms.get_mut(id) {
            room.centroid = *problem.variables[idx].value.as_point();
        }
    }
    if let (Some(idx), Some(floor)) = (binding.floor, graph.floor.as_mut()) {
        floor.centroid = *problem.variables[idx].value.as_point();
    }
    for (id, &idx) in &binding.markers {
        if let Some(marker) = graph.markers.get_mut(id) {
            marker.pose = *problem.variables[idx].value.as_pose();
            marker.center = marker.pose.translation();
        }
    }
}

// --- plain-text dump/load -----------------------------------------------------

fn write_floats(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.push(' ');
        out.push_str(&format!("{v:?}"));
    }
}

fn pose_fields(p: &PoseSE3) -> Vec<f64> {
    let m = p.rotation().matrix();
    let t = p.translation();
    vec![
        t.x,
        t.y,
        t.z,
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

fn plane_fields(p: &Plane) -> Vec<f64> {
    vec![
        p.normal.x,
        p.normal.y,
        p.normal.z,
        p.offset,
        p.centroid.x,
        p.centroid.y,
        p.centroid.z,
        p.inlier_count as f64,
    ]
}

/// Dump the problem as a plain-text factor-graph file, one variable or
/// factor per line.
pub fn dump_problem(problem: &Problem) -> String {
    let mut out = String::new();
    for (idx, var) in problem.variables.iter().enumerate() {
        let fixed = if var.fixed { 1 } else { 0 };
        match &var.value {
            Value::Pose(p) => {
                out.push_str(&format!("pose {idx} {} {}", var.label, fixed));
                write_floats(&mut out, pose_fields(p));
            }
            Value::Plane(p) => {
                out.push_str(&format!(
                    "plane {idx} {} {} {}",
                    var.label,
                    fixed,
                    p.class.name()
                ));
                write_floats(&mut out, plane_fields(p));
            }
            Value::Point(p) => {
                out.push_str(&format!("point {idx} {} {}", var.label, fixed));
                write_floats(&mut out, [p.x, p.y, p.z]);
            }
        }
        out.push('\n');
    }
    for factor in &problem.factors {
        let robust = match factor.robust {
            RobustLoss::None => "none".to_string(),
            RobustLoss::Huber(d) => format!("huber:{d:?}"),
        };
        match &factor.kind {
            FactorKind::Odometry { a, b, measurement } => {
                out.push_str(&format!("factor odometry {a} {b} {robust}"));
                write_floats(&mut out, pose_fields(measurement));
            }
            FactorKind::PlaneObservation {
                pose,
                plane,
                local,
                basis,
            } => {
                out.push_str(&format!(
                    "factor plane_obs {pose} {plane} {robust} {}",
                    local.class.name()
                ));
                write_floats(&mut out, plane_fields(local));
                write_floats(
                    &mut out,
                    [basis.0.x, basis.0.y, basis.0.z, basis.1.x, basis.1.y, basis.1.z],
                );
            }
            FactorKind::RoomParallel { plane_i, plane_j } => {
                out.push_str(&format!("factor parallel {plane_i} {plane_j} {robust}"));
            }
            FactorKind::RoomPerpendicular { plane_i, plane_j } => {
                out.push_str(&format!(
                    "factor perpendicular {plane_i} {plane_j} {robust}"
                ));
            }
            FactorKind::RoomCentroid {
                room,
                walls,
                wall_centroids,
            } => {
                out.push_str(&format!("factor room_centroid {room} {robust} {}", walls.len()));
                for w in walls {
                    out.push_str(&format!(" {w}"));
                }
                write_floats(
                    &mut out,
                    wall_centroids.iter().flat_map(|c| [c.x, c.y, c.z]),
                );
            }
            FactorKind::FloorCentroid { floor, rooms } => {
                out.push_str(&format!("factor floor_centroid {floor} {robust} {}", rooms.len()));
                for r in rooms {
                    out.push_str(&format!(" {r}"));
                }
            }
            FactorKind::MarkerPose {
                pose,
                marker,
                local,
            } => {
                out.push_str(&format!("factor marker {pose} {marker} {robust}"));
                write_floats(&mut out, pose_fields(local));
            }
        }
        out.push_str(" info");
        write_floats(&mut out, factor.information.iter().copied());
        out.push('\n');
    }
    out
}

struct LineParser<'a> {
    tokens: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> LineParser<'a> {
    fn next(&mut self) -> Result<&'a str, OptimizeError> {
        self.tokens.next().ok_or(OptimizeError::Parse {
            line: self.line,
            message: "unexpected end of line".into(),
        })
    }

    fn next_f64(&mut self) -> Result<f64, OptimizeError> {
        let tok = self.next()?;
        tok.parse().map_err(|_| OptimizeError::Parse {
            line: self.line,
            message: format!("expected number, got {tok:?}"),
        })
    }

    fn next_usize(&mut self) -> Result<usize, OptimizeError> {
        let tok = self.next()?;
        tok.parse().map_err(|_| OptimizeError::Parse {
            line: self.line,
            message: format!("expected index, got {tok:?}"),
        })
    }

    fn pose(&mut self) -> Result<PoseSE3, OptimizeError> {
        let t = Vec3::new(self.next_f64()?, self.next_f64()?, self.next_f64()?);
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = self.next_f64()?;
            }
        }
        Ok(PoseSE3::new(Rotation3::from_matrix_unchecked(m), t))
    }

    fn class(&mut self) -> Result<BuildingClass, OptimizeError> {
        match self.next()? {
            "wall" => Ok(BuildingClass::Wall),
            "ground" => Ok(BuildingClass::Ground),
            other => Err(OptimizeError::Parse {
                line: self.line,
                message: format!("unknown class {other:?}"),
            }),
        }
    }

    fn plane(&mut self, class: BuildingClass) -> Result<Plane, OptimizeError> {
        let normal = Vec3::new(self.next_f64()?, self.next_f64()?, self.next_f64()?);
        let offset = self.next_f64()?;
        let centroid = Vec3::new(self.next_f64()?, self.next_f64()?, self.next_f64()?);
        let inliers = self.next_f64()? as usize;
        Ok(Plane {
            normal,
            offset,
            class,
            centroid,
            inlier_count: inliers,
        })
    }

    fn robust(&mut self) -> Result<RobustLoss, OptimizeError> {
        let tok = self.next()?;
        if tok == "none" {
            Ok(RobustLoss::None)
        } else if let Some(d) = tok.strip_prefix("huber:") {
            d.parse()
                .map(RobustLoss::Huber)
                .map_err(|_| OptimizeError::Parse {
                    line: self.line,
                    message: format!("bad huber scale {d:?}"),
                })
        } else {
            Err(OptimizeError::Parse {
                line: self.line,
                message: format!("unknown robust loss {tok:?}"),
            })
        }
    }

    fn information(&mut self, dim: usize) -> Result<DMatrix<f64>, OptimizeError> {
        let tag = self.next()?;
        if tag != "info" {
            return Err(OptimizeError::Parse {
                line: self.line,
                message: format!("expected info block, got {tag:?}"),
            });
        }
        let mut m = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..dim {
                // nalgebra iter() is column-major
                m[(r, c)] = self.next_f64()?;
            }
        }
        Ok(m)
    }
}

/// Parse a factor-graph dump produced by [`dump_problem`].
pub fn load_problem(text: &str, config: SolverConfig) -> Result<Problem, OptimizeError> {
    let mut problem = Problem::new(config);
    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut p = LineParser {
            tokens: raw.split_whitespace(),
            line,
        };
        match p.next()? {
            "pose" => {
                let _idx = p.next_usize()?;
                let label = p.next()?.to_string();
                let fixed = p.next_usize()? == 1;
                let pose = p.pose()?;
                problem.variables.push(Variable {
                    label,
                    value: Value::Pose(pose),
                    fixed,
                });
            }
            "plane" => {
                let _idx = p.next_usize()?;
                let label = p.next()?.to_string();
                let fixed = p.next_usize()? == 1;
                let class = p.class()?;
                let plane = p.plane(class)?;
                problem.variables.push(Variable {
                    label,
                    value: Value::Plane(plane),
                    fixed,
                });
            }
            "point" => {
                let _idx = p.next_usize()?;
                let label = p.next()?.to_string();
                let fixed = p.next_usize()? == 1;
                let point = Vec3::new(p.next_f64()?, p.next_f64()?, p.next_f64()?);
                problem.variables.push(Variable {
                    label,
                    value: Value::Point(point),
                    fixed,
                });
            }
            "factor" => {
                let kind_tok = p.next()?;
                match kind_tok {
                    "odometry" => {
                        let a = p.next_usize()?;
                        let b = p.next_usize()?;
                        let robust = p.robust()?;
                        let measurement = p.pose()?;
                        let info = p.information(6)?;
                        problem.add_factor(
                            FactorKind::Odometry { a, b, measurement },
                            info,
                            robust,
                        );
                    }
                    "plane_obs" => {
                        let pose = p.next_usize()?;
                        let plane = p.next_usize()?;
                        let robust = p.robust()?;
                        let class = p.class()?;
                        let local = p.plane(class)?;
                        let basis = (
                            Vec3::new(p.next_f64()?, p.next_f64()?, p.next_f64()?),
                            Vec3::new(p.next_f64()?, p.next_f64()?, p.next_f64()?),
                        );
                        let info = p.information(3)?;
                        problem.add_factor(
                            FactorKind::PlaneObservation {
                                pose,
                                plane,
                                local,
                                basis,
                            },
                            info,
                            robust,
                        );
                    }
                    "parallel" | "perpendicular" => {
                        let plane_i = p.next_usize()?;
                        let plane_j = p.next_usize()?;
                        let robust = p.robust()?;
                        let (kind, dim) = if kind_tok == "parallel" {
                            (FactorKind::RoomParallel { plane_i, plane_j }, 3)
                        } else {
                            (FactorKind::RoomPerpendicular { plane_i, plane_j }, 1)
                        };
                        let info = p.information(dim)?;
                        problem.add_factor(kind, info, robust);
                    }
                    "room_centroid" => {
                        let room = p.next_usize()?;
                        let robust = p.robust()?;
                        let count = p.next_usize()?;
                        let mut walls = Vec::with_capacity(count);
                        for _ in 0..count {
                            walls.push(p.next_usize()?);
                        }
                        let mut wall_centroids = Vec::with_capacity(count);
                        for _ in 0..count {
                            wall_centroids.push(Vec3::new(
                                p.next_f64()?,
                                p.next_f64()?,
                                p.next_f64()?,
                            ));
                        }
                        let info = p.information(3)?;
                        problem.add_factor(
                            FactorKind::RoomCentroid {
                                room,
                                walls,
                                wall_centroids,
                            },
                            info,
                            robust,
                        );
                    }
                    "floor_centroid" => {
                        let floor = p.next_usize()?;
                        let robust = p.robust()?;
                        let count = p.next_usize()?;
                        let mut rooms = Vec::with_capacity(count);
                        for _ in 0..count {
                            rooms.push(p.next_usize()?);
                        }
                        let info = p.information(3)?;
                        problem.add_factor(
                            FactorKind::FloorCentroid { floor, rooms },
                            info,
                            robust,
                        );
                    }
                    "marker" => {
                        let pose = p.next_usize()?;
                        let marker = p.next_usize()?;
                        let robust = p.robust()?;
                        let local = p.pose()?;
                        let info = p.information(6)?;
                        problem.add_factor(
                            FactorKind::MarkerPose {
                                pose,
                                marker,
                                local,
                            },
                            info,
                            robust,
                        );
                    }
                    other => {
                        return Err(OptimizeError::Parse {
                            line,
                            message: format!("unknown factor kind {other:?}"),
                        })
                    }
                }
            }
            other => {
                return Err(OptimizeError::Parse {
                    line,
                    message: format!("unknown record {other:?}"),
                })
            }
        }
    }
    Ok(problem)
}
