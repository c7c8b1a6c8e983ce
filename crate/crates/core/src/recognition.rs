//! Per-keyframe recognition of wall/ground plane components from a labeled
//! point cloud: semantic filtering, voxel downsampling, range filtering,
//! sequential multi-plane RANSAC with least-squares refinement, and
//! class-specific geometric validation.

use std::collections::BTreeMap;

use nalgebra::Matrix6;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{angle_between_lines, transform_plane, BuildingClass, Plane, PoseSE3, Vec3};

/// A 3D point with a semantic class id and classification confidence,
/// expressed in the camera/local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vec3,
    pub label: u8,
    pub confidence: f32,
}

/// Ordered labeled points sharing one local frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub frame_id: u64,
    pub points: Vec<LabeledPoint>,
}

/// Maps raw label ids to building-component classes. Ids absent from the
/// table (furniture, clutter, ...) are ignored by recognition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    entries: BTreeMap<u8, BuildingClass>,
}

impl Default for ClassTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(1, BuildingClass::Wall);
        entries.insert(2, BuildingClass::Ground);
        ClassTable { entries }
    }
}

impl ClassTable {
    pub fn new(entries: BTreeMap<u8, BuildingClass>) -> Self {
        ClassTable { entries }
    }

    pub fn building_class(&self, label: u8) -> Option<BuildingClass> {
        self.entries.get(&label).copied()
    }

    pub fn label_of(&self, class: BuildingClass) -> Option<u8> {
        self.entries
            .iter()
            .find(|(_, c)| **c == class)
            .map(|(id, _)| *id)
    }

    pub fn entries(&self) -> &BTreeMap<u8, BuildingClass> {
        &self.entries
    }
}

/// A validated plane detection together with the (downsampled) points that
/// support it, both in the keyframe's parent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub plane: Plane,
    pub points: Vec<Vec3>,
}

/// One observation of a fiducial marker from a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: u32,
    /// Marker pose in the observing keyframe's local frame.
    pub local_pose: PoseSE3,
    /// Symmetric PSD weight on the 6-dof pose residual.
    pub information: Matrix6<f64>,
}

/// A selected frame: pose estimate (world ← local), its labeled cloud, the
/// plane components detected in it, and any marker observations.
#[derive(Debug, Clone)]
pub struct KeyFrame {
    pub id: u64,
    pub pose: PoseSE3,
    pub cloud: LabeledCloud,
    pub detections: Vec<Detection>,
    pub markers: Vec<MarkerObservation>,
}

impl KeyFrame {
    pub fn new(id: u64, pose: PoseSE3, cloud: LabeledCloud) -> Self {
        KeyFrame {
            id,
            pose,
            cloud,
            detections: Vec::new(),
            markers: Vec::new(),
        }
    }

    /// Detected component planes in the parent frame.
    pub fn components(&self) -> impl Iterator<Item = &Plane> {
        self.detections.iter().map(|d| &d.plane)
    }
}

/// Thresholds for the recognition pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionConfig {
    /// Minimum classification confidence kept by the semantic filter.
    pub min_confidence: f64,
    /// Voxel edge length for downsampling, meters.
    pub voxel_leaf: f64,
    /// Closed depth band kept by the range filter, meters from the sensor.
    pub depth_min: f64,
    pub depth_max: f64,
    /// RANSAC inlier threshold, meters.
    pub ransac_inlier_tol: f64,
    pub ransac_iterations: usize,
    /// Minimum inlier support for an emitted plane.
    pub min_inliers: usize,
    /// Cap on sequential extraction per class.
    pub max_planes_per_class: usize,
    /// Wall normals must be within this angle of horizontal, radians.
    pub verticality_tol: f64,
    /// Ground normals must be within this angle of vertical, radians.
    pub horizontality_tol: f64,
    pub class_table: ClassTable,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        RecognitionConfig {
            min_confidence: 0.5,
            voxel_leaf: 0.05,
            depth_min: 0.3,
            depth_max: 5.0,
            ransac_inlier_tol: 0.02,
            ransac_iterations: 400,
            min_inliers: 100,
            max_planes_per_class: 16,
            verticality_tol: 10f64.to_radians(),
            horizontality_tol: 10f64.to_radians(),
            class_table: ClassTable::default(),
        }
    }
}

/// Partition a cloud into per-class point lists, keeping only points whose
/// label maps to a building class and whose confidence reaches the
/// threshold. Classes with no surviving points are absent from the result.
pub fn semantic_filter(
    cloud: &LabeledCloud,
    classes: &ClassTable,
    min_confidence: f64,
) -> BTreeMap<BuildingClass, Vec<Vec3>> {
    let mut out: BTreeMap<BuildingClass, Vec<Vec3>> = BTreeMap::new();
    for p in &cloud.points {
        if (p.confidence as f64) < min_confidence {
            continue;
        }
        if let Some(class) = classes.building_class(p.label) {
            out.entry(class).or_default().push(p.position);
        }
    }
    out
}

/// Downsample to at most one representative (the centroid of the voxel's
/// points) per occupied voxel of side `leaf`.
pub fn voxel_downsample(points: &[Vec3], leaf: f64) -> Vec<Vec3> {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vec3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    cells
        .into_values()
        .map(|(sum, count)| sum / count as f64)
        .collect()
}

/// Keep exactly the points whose range from the local origin lies in the
/// closed band `[depth_min, depth_max]`.
pub fn range_filter(points: &[Vec3], depth_min: f64, depth_max: f64) -> Vec<Vec3> {
    assert!(
        (0.0..depth_max).contains(&depth_min),
        "need 0 <= depth_min < depth_max"
    );
    points
        .iter()
        .filter(|p| {
            let r = p.norm();
            r >= depth_min && r <= depth_max
        })
        .copied()
        .collect()
}

/// Least-squares plane through `points`: centroid plus the smallest
/// covariance eigenvector as normal.
fn fit_plane_least_squares(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for i in 1..3 {
        if eigen.eigenvalues[i] < eigen.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eigen.eigenvectors.column(min_idx).into_owned();
    if normal.norm() == 0.0 {
        return None;
    }
    Some((normal.normalize(), centroid))
}

fn inlier_indices(
    points: &[Vec3],
    active: &[usize],
    normal: &Vec3,
    offset: f64,
    tol: f64,
) -> Vec<usize> {
    active
        .iter()
        .copied()
        .filter(|&i| (normal.dot(&points[i]) + offset).abs() <= tol)
        .collect()
}

/// Sequential multi-plane RANSAC over one class's points.
///
/// Repeats: sample 3 non-collinear points, hypothesize a plane, count
/// inliers within `ransac_inlier_tol`, keep the best after
/// `ransac_iterations`; if the best support reaches `min_inliers`, refine by
/// least squares over the inliers, emit the plane, remove its inliers, and
/// continue until no plane qualifies or `max_planes_per_class` is reached.
/// Deterministic given `rng_seed`. Returns each plane with the indices of
/// its inliers in the input slice.
pub fn fit_planes_ransac(
    points: &[Vec3],
    class: BuildingClass,
    cfg: &RecognitionConfig,
    rng_seed: u64,
) -> Vec<(Plane, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut active: Vec<usize> = (0..points.len()).collect();
    let mut planes = Vec::new();

    while planes.len() < cfg.max_planes_per_class && active.len() >= 3 {
        let mut best: Option<(Vec3, f64, usize)> = None;
        for _ in 0..cfg.ransac_iterations {
            let a = active[rng.random_range(0..active.len())];
            let b = active[rng.random_range(0..active.len())];
            let c = active[rng.random_range(0..active.len())];
            if a == b || b == c || a == c {
                continue;
            }
            let (pa, pb, pc) = (points[a], points[b], points[c]);
            let normal = (pb - pa).cross(&(pc - pa));
            if normal.norm() < 1e-12 {
                continue; // collinear sample
            }
            let normal = normal.normalize();
            let offset = -normal.dot(&pa);
            let count = active
                .iter()
                .filter(|&&i| (normal.dot(&points[i]) + offset).abs() <= cfg.ransac_inlier_tol)
                .count();
            if best.as_ref().map_or(true, |(_, _, n)| count > *n) {
                best = Some((normal, offset, count));
            }
        }

        let Some((normal, offset, count)) = best else {
            break; // every sample was degenerate
        };
        if count < cfg.min_inliers {
            break;
        }

        let rough = inlier_indices(points, &active, &normal, offset, cfg.ransac_inlier_tol);
        let rough_points: Vec<Vec3> = rough.iter().map(|&i| points[i]).collect();
        let (refined_normal, refined_centroid) = match fit_plane_least_squares(&rough_points) {
            Some(fit) => fit,
            None => (
                normal,
                rough_points.iter().sum::<Vec3>() / rough_points.len() as f64,
            ),
        };
        let refined_offset = -refined_normal.dot(&refined_centroid);
        let inliers = inlier_indices(
            points,
            &active,
            &refined_normal,
            refined_offset,
            cfg.ransac_inlier_tol,
        );
        if inliers.len() < cfg.min_inliers {
            break;
        }
        let inlier_points: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
        let centroid = inlier_points.iter().sum::<Vec3>() / inlier_points.len() as f64;
        let plane = Plane {
            normal: refined_normal,
            offset: -refined_normal.dot(&centroid),
            class,
            centroid,
            inlier_count: inliers.len(),
        };
        let taken: std::collections::BTreeSet<usize> = inliers.iter().copied().collect();
        active.retain(|i| !taken.contains(i));
        planes.push((plane, inliers));
    }

    planes
}

/// Keep wall planes within `verticality_tol` of vertical and ground planes
/// within `horizontality_tol` of horizontal; ground normals are oriented
/// toward `+z`. Rejected planes are dropped. Idempotent.
pub fn validate_components(planes: Vec<Plane>, cfg: &RecognitionConfig) -> Vec<Plane> {
    planes
        .into_iter()
        .filter_map(|plane| {
            let up = Vec3::z();
            let tilt = angle_between_lines(&plane.normal, &up).expect("unit normal");
            match plane.class {
                BuildingClass::Wall => {
                    if (tilt - std::f64::consts::FRAC_PI_2).abs() <= cfg.verticality_tol {
                        Some(plane)
                    } else {
                        None
                    }
                }
                BuildingClass::Ground => {
                    if tilt <= cfg.horizontality_tol {
                        Some(plane.sign_aligned_to(&up))
                    } else {
                        None
                    }
                }
            }
        })
        .collect()
}

/// Run the full per-keyframe pipeline and store the validated components
/// (expressed in the keyframe's parent frame) on the keyframe.
///
/// Wall planes are oriented so the sensor origin — which sits in the free
/// space the wall bounds — lies on their negative side.
pub fn recognize(kf: &mut KeyFrame, cfg: &RecognitionConfig, rng_seed: u64) -> Vec<Plane> {
    let mut detections = Vec::new();
    let partition = semantic_filter(&kf.cloud, &cfg.class_table, cfg.min_confidence);
    for (class, class_points) in partition {
        let sampled = voxel_downsample(&class_points, cfg.voxel_leaf);
        let ranged = range_filter(&sampled, cfg.depth_min, cfg.depth_max);
        let class_seed = rng_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(class as u64 + 1);
        for (plane, inliers) in fit_planes_ransac(&ranged, class, cfg, class_seed) {
            let oriented = if class == BuildingClass::Wall && plane.offset > 0.0 {
                plane.flipped()
            } else {
                plane
            };
            let global = transform_plane(&kf.pose, &oriented);
            let points: Vec<Vec3> = inliers
                .iter()
                .map(|&i| kf.pose.transform_point(&ranged[i]))
                .collect();
            detections.push(Detection {
                plane: global,
                points,
            });
        }
    }
    detections = detections
        .into_iter()
        .filter_map(|d| {
            validate_components(vec![d.plane.clone()], cfg)
                .pop()
                .map(|plane| Detection {
                    plane,
                    points: d.points,
                })
        })
        .collect();
    kf.detections = detections;
    kf.components().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn cloud_from(points: Vec<(Vec3, u8, f32)>) -> LabeledCloud {
        LabeledCloud {
            frame_id: 0,
            points: points
                .into_iter()
                .map(|(position, label, confidence)| LabeledPoint {
                    position,
                    label,
                    confidence,
                })
                .collect(),
        }
    }

    /// Test-side least-squares oracle, independent of the pipeline's
    /// refinement: SVD of the centered point matrix.
    fn svd_plane_oracle(points: &[Vec3]) -> (Vec3, f64) {
        let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
        let mut m = nalgebra::DMatrix::<f64>::zeros(points.len(), 3);
        for (i, p) in points.iter().enumerate() {
            let d = p - centroid;
            m[(i, 0)] = d.x;
            m[(i, 1)] = d.y;
            m[(i, 2)] = d.z;
        }
        let svd = m.svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut min_idx = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[min_idx] {
                min_idx = i;
            }
        }
        let n = Vec3::new(vt[(min_idx, 0)], vt[(min_idx, 1)], vt[(min_idx, 2)]).normalize();
        (n, -n.dot(&centroid))
    }

    #[test]
    fn semantic_filter_empty_class() {
        let cloud = cloud_from(vec![(Vec3::new(1.0, 0.0, 0.0), 3, 0.9)]);
        let out = semantic_filter(&cloud, &ClassTable::default(), 0.5);
        assert!(out.is_empty());
    }

    #[test]
    fn semantic_filter_partitions_by_class() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push((Vec3::new(i as f64, 0.0, 0.0), 1, 0.9));
        }
        for i in 0..5 {
            pts.push((Vec3::new(0.0, i as f64, 0.0), 7, 0.9)); // chair-ish label
        }
        let out = semantic_filter(&cloud_from(pts), &ClassTable::default(), 0.5);
        assert_eq!(out[&BuildingClass::Wall].len(), 10);
        assert!(!out.contains_key(&BuildingClass::Ground));
    }

    #[test]
    fn semantic_filter_confidence_threshold_matches_scan_oracle() {
        let mut pts = Vec::new();
        for i in 0..100 {
            let conf = i as f32 / 100.0;
            pts.push((Vec3::new(i as f64, 0.0, 0.0), 1, conf));
        }
        let cloud = cloud_from(pts);
        let out = semantic_filter(&cloud, &ClassTable::default(), 0.5);
        let expected: Vec<Vec3> = cloud
            .points
            .iter()
            .filter(|p| p.confidence >= 0.5 && p.label == 1)
            .map(|p| p.position)
            .collect();
        assert_eq!(out[&BuildingClass::Wall], expected);
    }

    #[test]
    fn voxel_single_point_is_identity() {
        let p = vec![Vec3::new(0.3, 0.4, 0.5)];
        assert_eq!(voxel_downsample(&p, 0.05), p);
    }

    #[test]
    fn voxel_merges_close_points_at_centroid() {
        let a = Vec3::new(0.0101, 0.01, 0.01);
        let b = Vec3::new(0.0111, 0.01, 0.01);
        let out = voxel_downsample(&[a, b], 0.05);
        assert_eq!(out.len(), 1);
        assert_abs_diff_eq!(out[0], (a + b) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn voxel_count_matches_hash_oracle() {
        let spacing = 0.05;
        let leaf = 2.0 * spacing;
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    pts.push(Vec3::new(
                        i as f64 * spacing + 0.001,
                        j as f64 * spacing + 0.001,
                        k as f64 * spacing + 0.001,
                    ));
                }
            }
        }
        let out = voxel_downsample(&pts, leaf);
        let oracle: BTreeSet<(i64, i64, i64)> = pts
            .iter()
            .map(|p| {
                (
                    (p.x / leaf).floor() as i64,
                    (p.y / leaf).floor() as i64,
                    (p.z / leaf).floor() as i64,
                )
            })
            .collect();
        assert_eq!(out.len(), oracle.len());

        // Aggregates stay inside the input bounding box.
        for p in &out {
            assert!(p.x >= 0.0 && p.x <= 0.5);
            assert!(p.y >= 0.0 && p.y <= 0.5);
            assert!(p.z >= 0.0 && p.z <= 0.5);
        }
    }

    #[test]
    fn range_filter_band_rules() {
        let inside = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        assert_eq!(range_filter(&inside, 0.3, 5.0), inside);

        let boundary = vec![Vec3::new(5.0, 0.0, 0.0)];
        assert_eq!(range_filter(&boundary, 0.3, 5.0), boundary);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                )
            })
            .collect();
        let out = range_filter(&pts, 0.3, 5.0);
        let oracle: Vec<Vec3> = pts
            .iter()
            .filter(|p| p.norm() >= 0.3 && p.norm() <= 5.0)
            .copied()
            .collect();
        assert_eq!(out, oracle);
    }

    #[test]
    fn ransac_exact_plane() {
        let mut pts = Vec::new();
        for i in 0..25 {
            for j in 0..20 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        assert_eq!(pts.len(), 500);
        let cfg = RecognitionConfig::default();
        let out = fit_planes_ransac(&pts, BuildingClass::Ground, &cfg, 42);
        assert_eq!(out.len(), 1);
        let (plane, inliers) = &out[0];
        assert_eq!(inliers.len(), 500);
        assert_abs_diff_eq!(plane.normal.z.abs(), 1.0, epsilon = 1e-9);
        assert!(plane.offset.abs() <= 1e-9);
    }

    #[test]
    fn ransac_two_orthogonal_noisy_walls() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut gauss = move || {
            // Box-Muller
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let sigma = 0.005;
        let mut pts = Vec::new();
        let mut wall_a = Vec::new(); // x = 1
        let mut wall_b = Vec::new(); // y = 2
        for i in 0..300 {
            let u = (i % 20) as f64 * 0.1;
            let v = (i / 20) as f64 * 0.12;
            let p = Vec3::new(1.0 + gauss() * sigma, u, v);
            wall_a.push(p);
            pts.push(p);
        }
        for i in 0..300 {
            let u = (i % 20) as f64 * 0.1;
            let v = (i / 20) as f64 * 0.12;
            let p = Vec3::new(u, 2.0 + gauss() * sigma, v);
            wall_b.push(p);
            pts.push(p);
        }
        let cfg = RecognitionConfig {
            min_inliers: 100,
            ..Default::default()
        };
        let out = fit_planes_ransac(&pts, BuildingClass::Wall, &cfg, 7);
        assert_eq!(out.len(), 2);
        for (plane, inliers) in &out {
            assert!(inliers.len() >= 270, "support {}", inliers.len());
            let truth_x = plane.normal.x.abs() > 0.9;
            let (oracle_n, oracle_d) = if truth_x {
                svd_plane_oracle(&wall_a)
            } else {
                svd_plane_oracle(&wall_b)
            };
            let angle = angle_between_lines(&plane.normal, &oracle_n).unwrap();
            assert!(
                angle.to_degrees() <= 1.0,
                "normal error {}°",
                angle.to_degrees()
            );
            let aligned = plane.sign_aligned_to(&oracle_n);
            assert!((aligned.offset - oracle_d).abs() <= 2.0 * sigma);
        }
    }

    #[test]
    fn ransac_rejects_unstructured_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| {
                Vec3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let cfg = RecognitionConfig {
            min_inliers: 100,
            ..Default::default()
        };
        assert!(fit_planes_ransac(&pts, BuildingClass::Wall, &cfg, 1).is_empty());

        // Exhaustive check: no 3-point plane hypothesis reaches 100 inliers.
        let tol = cfg.ransac_inlier_tol;
        let mut best = 0usize;
        for a in 0..pts.len() {
            for b in (a + 1)..pts.len() {
                for c in (b + 1)..pts.len() {
                    let n = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
                    if n.norm() < 1e-12 {
                        continue;
                    }
                    let n = n.normalize();
                    let d = -n.dot(&pts[a]);
                    let count = pts.iter().filter(|p| (n.dot(p) + d).abs() <= tol).count();
                    best = best.max(count);
                }
            }
        }
        assert!(best < 100);
    }

    #[test]
    fn ransac_too_few_points() {
        let cfg = RecognitionConfig::default();
        let pts = [Vec3::zeros(), Vec3::x()];
        assert!(fit_planes_ransac(&pts, BuildingClass::Wall, &cfg, 1).is_empty());
    }

    #[test]
    fn ransac_collinear_points_yield_nothing() {
        let cfg = RecognitionConfig {
            min_inliers: 3,
            ..Default::default()
        };
        let pts: Vec<Vec3> = (0..200)
            .map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0))
            .collect();
        assert!(fit_planes_ransac(&pts, BuildingClass::Wall, &cfg, 3).is_empty());
    }

    #[test]
    fn ransac_is_seed_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pts = Vec::new();
        for _ in 0..400 {
            pts.push(Vec3::new(
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(-0.01..0.01),
            ));
        }
        let cfg = RecognitionConfig {
            min_inliers: 50,
            ..Default::default()
        };
        let a = fit_planes_ransac(&pts, BuildingClass::Ground, &cfg, 77);
        let b = fit_planes_ransac(&pts, BuildingClass::Ground, &cfg, 77);
        assert_eq!(a.len(), b.len());
        for ((pa, ia), (pb, ib)) in a.iter().zip(b.iter()) {
            assert_eq!(pa.normal, pb.normal);
            assert_eq!(pa.offset, pb.offset);
            assert_eq!(ia, ib);
        }
    }

    fn wall_plane(normal: Vec3) -> Plane {
        Plane::new(normal, -1.0, BuildingClass::Wall, Vec3::zeros(), 200).unwrap()
    }

    #[test]
    fn validate_keeps_vertical_walls() {
        let cfg = RecognitionConfig {
            verticality_tol: 5f64.to_radians(),
            ..Default::default()
        };
        let kept = validate_components(vec![wall_plane(Vec3::x())], &cfg);
        assert_eq!(kept.len(), 1);
        let rejected = validate_components(vec![wall_plane(Vec3::z())], &cfg);
        assert!(rejected.is_empty());
    }

    #[test]
    fn validate_tilt_threshold_both_sides() {
        let cfg = RecognitionConfig {
            verticality_tol: 5f64.to_radians(),
            ..Default::default()
        };
        for (tilt_deg, expect_kept) in [(4.0, true), (6.0, false)] {
            let rot = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Vector3::y_axis(),
                (tilt_deg as f64).to_radians(),
            );
            let tilted = wall_plane(rot * Vec3::x());
            let kept = validate_components(vec![tilted], &cfg);
            assert_eq!(!kept.is_empty(), expect_kept, "tilt {tilt_deg}°");
        }
    }

    #[test]
    fn validate_orients_ground_up_and_is_idempotent() {
        let cfg = RecognitionConfig::default();
        let down = Plane::new(-Vec3::z(), 1.5, BuildingClass::Ground, Vec3::zeros(), 300).unwrap();
        let once = validate_components(vec![down], &cfg);
        assert_eq!(once.len(), 1);
        assert!(once[0].normal.z > 0.0);
        let twice = validate_components(once.clone(), &cfg);
        assert_eq!(once, twice);
    }

    fn synthetic_room_cloud() -> LabeledCloud {
        let mut pts = Vec::new();
        // wall at x = 2, spanning y in [-1.5, 1.5], z in [0, 2]
        for j in 0..40 {
            for k in 0..30 {
                pts.push((
                    Vec3::new(2.0, -1.5 + j as f64 * 0.077, k as f64 * 0.069),
                    1,
                    0.95,
                ));
            }
        }
        // ground at z = -1, x in [0.5, 2], y in [-1.5, 1.5]
        for i in 0..30 {
            for j in 0..40 {
                pts.push((
                    Vec3::new(0.5 + i as f64 * 0.05, -1.5 + j as f64 * 0.077, -1.0),
                    2,
                    0.95,
                ));
            }
        }
        cloud_from(pts)
    }

    #[test]
    fn recognize_wall_and_ground() {
        let mut kf = KeyFrame::new(0, PoseSE3::identity(), synthetic_room_cloud());
        let cfg = RecognitionConfig::default();
        let components = recognize(&mut kf, &cfg, 13);
        assert_eq!(components.len(), 2);
        let wall = components
            .iter()
            .find(|p| p.class == BuildingClass::Wall)
            .unwrap();
        let ground = components
            .iter()
            .find(|p| p.class == BuildingClass::Ground)
            .unwrap();
        assert!(wall.normal.x.abs() > 0.999);
        // sensor at the origin must be on the wall's negative side
        assert!(wall.signed_distance(&Vec3::zeros()) < 0.0);
        assert!(ground.normal.z > 0.999);
        assert_eq!(kf.detections.len(), 2);
    }

    #[test]
    fn recognize_respects_pose() {
        let cloud = synthetic_room_cloud();
        let mut local = KeyFrame::new(0, PoseSE3::identity(), cloud.clone());
        let cfg = RecognitionConfig::default();
        let base = recognize(&mut local, &cfg, 13);

        let yaw = PoseSE3::from_yaw_translation(std::f64::consts::FRAC_PI_2, Vec3::zeros());
        let mut rotated = KeyFrame::new(1, yaw, cloud);
        let turned = recognize(&mut rotated, &cfg, 13);

        assert_eq!(base.len(), turned.len());
        for b in &base {
            let expected = transform_plane(&yaw, b);
            let found = turned.iter().any(|t| {
                t.class == b.class
                    && angle_between_lines(&t.normal, &expected.normal).unwrap() < 1e-6
                    && (t.sign_aligned_to(&expected.normal).offset - expected.offset).abs() < 1e-6
            });
            assert!(found, "missing rotated counterpart for {:?}", b.class);
        }
    }

    #[test]
    fn recognize_furniture_only_is_empty() {
        let pts = (0..500)
            .map(|i| (Vec3::new(i as f64 * 0.01, 0.0, 0.0), 9, 0.99))
            .collect();
        let mut kf = KeyFrame::new(0, PoseSE3::identity(), cloud_from(pts));
        assert!(recognize(&mut kf, &RecognitionConfig::default(), 1).is_empty());
    }

    #[test]
    fn pipeline_stages_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                )
            })
            .collect();
        let sampled = voxel_downsample(&pts, 0.1);
        assert!(sampled.len() <= pts.len());
        let ranged = range_filter(&sampled, 0.3, 5.0);
        assert!(ranged.len() <= sampled.len());
        for p in &ranged {
            assert!(sampled.contains(p));
        }
    }
}
