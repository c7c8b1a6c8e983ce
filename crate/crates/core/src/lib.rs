//! Reconstruction of optimizable hierarchical 3D scene graphs from streams of
//! semantically labeled point-cloud keyframes.
//!
//! The pipeline turns labeled clouds into validated wall/ground planes
//! ([`recognition`]), merges them into an active map ([`atlas`]), infers rooms
//! and a floor from the merged components ([`structural`]), and jointly refines
//! keyframe poses and scene entities by nonlinear least squares ([`optimize`]).
//! [`synthetic`] generates ground-truth indoor worlds and noisy sensor data,
//! and [`eval`] scores detected graphs and trajectories against that truth.

pub mod atlas;
pub mod config;
pub mod eval;
pub mod geom;
pub mod optimize;
pub mod ply;
pub mod recognition;
pub mod sequence;
pub mod structural;
pub mod synthetic;

pub use geom::{BuildingClass, Plane, PoseSE3, StructuralClass, Vec3};
