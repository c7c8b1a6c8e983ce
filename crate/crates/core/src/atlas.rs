//! The active-map store: keyframes, merged building components, rooms, the
//! floor, and markers, with cross-keyframe association and merging.
//!
//! Mutating operations require exclusive access (`&mut SceneGraph`); shared
//! references give consistent read snapshots. That is the whole
//! single-writer / multi-reader contract — no interior locking.

use std::collections::BTreeMap;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between_lines, transform_plane, BuildingClass, Plane, PoseSE3, Vec3};
use crate::recognition::{voxel_downsample, KeyFrame, MarkerObservation};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(ComponentId(u64));
id_type!(RoomId(u64));
id_type!(FloorId(u64));
id_type!(KeyFrameId(u64));
id_type!(
    /// Fiducial tag id; comes from the marker itself, not from the map.
    MarkerId(u32)
);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("keyframe id {0} already present")]
    DuplicateKeyFrame(KeyFrameId),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl GraphError {
    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        GraphError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// One keyframe's contribution to a map component.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub keyframe: KeyFrameId,
    /// The detected plane in the observing keyframe's local frame.
    pub plane: Plane,
}

/// A building component in the map: the fused plane estimate, the supporting
/// (downsampled) inlier points, and the per-keyframe observations behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct MapComponent {
    pub id: ComponentId,
    pub plane: Plane,
    pub points: Vec<Vec3>,
    pub observations: Vec<Observation>,
    pub merged_from: Vec<ComponentId>,
}

/// Connected region of traversable ground cells; the seed a room forms around.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FreeSpaceCluster {
    /// Cell centers on the ground plane.
    pub cells: Vec<Vec3>,
    /// Arithmetic mean of `cells`.
    pub centroid: Vec3,
}

/// A room: at least two bounding walls, an associated ground, a centroid,
/// and the free-space cluster it was detected around.
#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub id: RoomId,
    pub walls: Vec<ComponentId>,
    pub ground: ComponentId,
    pub centroid: Vec3,
    pub cluster: FreeSpaceCluster,
    pub label: Option<String>,
    pub marker: Option<MarkerId>,
}

/// The single floor: all rooms plus the mean of their centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Floor {
    pub id: FloorId,
    pub rooms: Vec<RoomId>,
    pub centroid: Vec3,
    pub plane: Option<ComponentId>,
}

/// A mapped fiducial marker with its global pose estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub id: MarkerId,
    pub pose: PoseSE3,
    /// Translation of `pose`, kept explicit for association tests.
    pub center: Vec3,
}

/// Association and fusion thresholds for the map store.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasConfig {
    /// Spatial proximity threshold between component centroids, meters.
    pub rho: f64,
    /// Angular alignment threshold between normals, radians.
    pub eta: f64,
    /// Voxel leaf used to re-thin component point sets after merging.
    pub point_leaf: f64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig {
            rho: 0.5,
            eta: 10f64.to_radians(),
            point_leaf: 0.05,
        }
    }
}

/// Typed parent/child link of the scene-graph hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: u64,
    pub to: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    FloorRoom,
    RoomWall,
    RoomGround,
    RoomMarker,
    ComponentKeyframe,
}

/// The layered map: keyframes → components → rooms → floor, plus markers.
#[derive(Debug, Clone, Default)]
pub struct SceneGraph {
    pub keyframes: BTreeMap<KeyFrameId, KeyFrame>,
    pub components: BTreeMap<ComponentId, MapComponent>,
    pub rooms: BTreeMap<RoomId, Room>,
    pub floor: Option<Floor>,
    pub markers: BTreeMap<MarkerId, Marker>,
    /// Ids merged away, mapped to their surviving component.
    pub tombstones: BTreeMap<ComponentId, ComponentId>,
    next_component: u64,
    next_room: u64,
}

/// Building-component association test: same class, centroid distance within
/// `rho`, and normals within `eta` compared up to sign (opposite faces of one
/// physical wall flip the normal).
pub fn associate(a: &Plane, b: &Plane, rho: f64, eta: f64) -> bool {
    if a.class != b.class {
        return false;
    }
    if (a.centroid - b.centroid).norm() > rho {
        return false;
    }
    angle_between_lines(&a.normal, &b.normal).map_or(false, |angle| angle <= eta)
}

/// Inlier-count-weighted fusion of a component plane with a new observation
/// of it: normals averaged after sign alignment and re-normalized, offsets
/// and centroids averaged, inlier counts summed.
pub fn fuse_planes(target: &Plane, obs: &Plane) -> Plane {
    let aligned = obs.sign_aligned_to(&target.normal);
    let wt = target.inlier_count.max(1) as f64;
    let wo = aligned.inlier_count.max(1) as f64;
    let w = wt + wo;
    let normal = (target.normal * wt + aligned.normal * wo).normalize();
    Plane {
        normal,
        offset: (target.offset * wt + aligned.offset * wo) / w,
        class: target.class,
        centroid: (target.centroid * wt + aligned.centroid * wo) / w,
        inlier_count: target.inlier_count + aligned.inlier_count,
    }
}

impl SceneGraph {
    pub fn new() -> Self {
        SceneGraph::default()
    }

    /// Resolve a component id through the tombstone table to its survivor.
    pub fn resolve(&self, mut id: ComponentId) -> ComponentId {
        while let Some(&next) = self.tombstones.get(&id) {
            id = next;
        }
        id
    }

    pub fn next_room_id(&mut self) -> RoomId {
        let id = RoomId(self.next_room);
        self.next_room += 1;
        id
    }

    /// Insert a component directly, bypassing association. Used when a map
    /// is built from known geometry rather than keyframe detections.
    pub fn add_component(&mut self, plane: Plane, points: Vec<Vec3>) -> ComponentId {
        let id = ComponentId(self.next_component);
        self.next_component += 1;
        self.components.insert(
            id,
            MapComponent {
                id,
                plane,
                points,
                observations: Vec::new(),
                merged_from: Vec::new(),
            },
        );
        id
    }

    /// Store a keyframe, submit its detections for association, and register
    /// any marker observations. Rejects duplicate keyframe ids.
    pub fn insert_keyframe(
        &mut self,
        kf: KeyFrame,
        cfg: &AtlasConfig,
    ) -> Result<KeyFrameId, GraphError> {
        let id = KeyFrameId(kf.id);
        if self.keyframes.contains_key(&id) {
            return Err(GraphError::DuplicateKeyFrame(id));
        }
        let pose_inv = kf.pose.inverse();
        let detected: Vec<(Plane, Vec<Vec3>)> = kf
            .detections
            .iter()
            .map(|d| (d.plane.clone(), d.points.clone()))
            .collect();
        for obs in &kf.markers {
            self.register_marker(&kf.pose, obs);
        }
        self.keyframes.insert(id, kf);
        let locals: Vec<(Plane, Plane, Vec<Vec3>)> = detected
            .into_iter()
            .map(|(global, points)| {
                let local = transform_plane(&pose_inv, &global);
                (global, local, points)
            })
            .collect();
        self.associate_or_insert(id, locals, cfg);
        Ok(id)
    }

    fn register_marker(&mut self, kf_pose: &PoseSE3, obs: &MarkerObservation) {
        let id = MarkerId(obs.marker_id);
        // First estimate wins; the optimizer refines it later.
        self.markers.entry(id).or_insert_with(|| {
            let pose = kf_pose.compose(&obs.local_pose);
            Marker {
                id,
                pose,
                center: pose.translation(),
            }
        });
    }

    /// Merge each detection into the best-associating existing component
    /// (nearest centroid among associates) or insert it as a new component.
    /// Returns the touched component ids. Afterwards the store is
    /// association-saturated: no two stored components of one class
    /// associate under `(rho, eta)`.
    pub fn associate_or_insert(
        &mut self,
        kf_id: KeyFrameId,
        detected: Vec<(Plane, Plane, Vec<Vec3>)>,
        cfg: &AtlasConfig,
    ) -> Vec<ComponentId> {
        let mut touched = Vec::new();
        for (global, local, points) in detected {
            let best = self
                .components
                .values()
                .filter(|c| associate(&c.plane, &global, cfg.rho, cfg.eta))
                .map(|c| {
                    let dist = (c.plane.centroid - global.centroid).norm();
                    (c.id, dist)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let id = match best {
                Some((id, _)) => {
                    let component = self.components.get_mut(&id).expect("associate target");
                    component.plane = fuse_planes(&component.plane, &global);
                    component.points.extend_from_slice(&points);
                    component.points = voxel_downsample(&component.points, cfg.point_leaf);
                    component.observations.push(Observation {
                        keyframe: kf_id,
                        plane: local,
                    });
                    id
                }
                None => {
                    let id = ComponentId(self.next_component);
                    self.next_component += 1;
                    self.components.insert(
                        id,
                        MapComponent {
                            id,
                            plane: global,
                            points,
                            observations: vec![Observation {
                                keyframe: kf_id,
                                plane: local,
                            }],
                            merged_from: Vec::new(),
                        },
                    );
                    id
                }
            };
            touched.push(id);
        }
        self.saturate(cfg);
        touched.iter().map(|&id| self.resolve(id)).collect()
    }

    /// Merge stored components pairwise until no same-class pair associates.
    fn saturate(&mut self, cfg: &AtlasConfig) {
        loop {
            let mut best: Option<(ComponentId, ComponentId, f64)> = None;
            let ids: Vec<ComponentId> = self.components.keys().copied().collect();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    let (ca, cb) = (&self.components[&a], &self.components[&b]);
                    if associate(&ca.plane, &cb.plane, cfg.rho, cfg.eta) {
                        let dist = (ca.plane.centroid - cb.plane.centroid).norm();
                        if best.as_ref().map_or(true, |(_, _, d)| dist < *d) {
                            best = Some((a, b, dist));
                        }
                    }
                }
            }
            let Some((keep, drop, _)) = best else {
                return;
            };
            let dropped = self.components.remove(&drop).expect("merge source");
            let survivor = self.components.get_mut(&keep).expect("merge target");
            survivor.plane = fuse_planes(&survivor.plane, &dropped.plane);
            survivor.points.extend_from_slice(&dropped.points);
            survivor.points = voxel_downsample(&survivor.points, cfg.point_leaf);
            survivor.observations.extend(dropped.observations);
            survivor.merged_from.push(drop);
            survivor.merged_from.extend(dropped.merged_from);
            self.tombstones.insert(drop, keep);
            self.rebind_component(drop, keep);
        }
    }

    /// Replace references to a merged-away component in rooms and the floor.
    fn rebind_component(&mut self, old: ComponentId, new: ComponentId) {
        for room in self.rooms.values_mut() {
            for wall in room.walls.iter_mut() {
                if *wall == old {
                    *wall = new;
                }
            }
            room.walls.dedup();
            if room.ground == old {
                room.ground = new;
            }
        }
        if let Some(floor) = self.floor.as_mut() {
            if floor.plane == Some(old) {
                floor.plane = Some(new);
            }
        }
    }

    pub fn components_of_class(&self, class: BuildingClass) -> impl Iterator<Item = &MapComponent> {
        self.components.values().filter(move |c| c.plane.class == class)
    }

    /// All typed hierarchy edges, in deterministic order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        if let Some(floor) = &self.floor {
            for r in &floor.rooms {
                edges.push(Edge {
                    kind: EdgeKind::FloorRoom,
                    from: floor.id.0,
                    to: r.0,
                });
            }
        }
        for room in self.rooms.values() {
            for w in &room.walls {
                edges.push(Edge {
                    kind: EdgeKind::RoomWall,
                    from: room.id.0,
                    to: w.0,
                });
            }
            edges.push(Edge {
                kind: EdgeKind::RoomGround,
                from: room.id.0,
                to: room.ground.0,
            });
            if let Some(m) = room.marker {
                edges.push(Edge {
                    kind: EdgeKind::RoomMarker,
                    from: room.id.0,
                    to: m.0 as u64,
                });
            }
        }
        for component in self.components.values() {
            for obs in &component.observations {
                edges.push(Edge {
                    kind: EdgeKind::ComponentKeyframe,
                    from: component.id.0,
                    to: obs.keyframe.0,
                });
            }
        }
        edges
    }

    /// Graphviz DOT rendering of the floor → room → component → keyframe
    /// hierarchy.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph scene_graph {\n  rankdir=TB;\n");
        if let Some(floor) = &self.floor {
            out.push_str(&format!(
                "  floor_{} [shape=house,label=\"floor {}\"];\n",
                floor.id, floor.id
            ));
        }
        for room in self.rooms.values() {
            let label = match &room.label {
                Some(name) => format!("room {} ({name})", room.id),
                None => format!("room {}", room.id),
            };
            out.push_str(&format!(
                "  room_{} [shape=box,label=\"{label}\"];\n",
                room.id
            ));
        }
        for component in self.components.values() {
            out.push_str(&format!(
                "  component_{} [shape=ellipse,label=\"{} {}\"];\n",
                component.id,
                component.plane.class.name(),
                component.id
            ));
        }
        for kf in self.keyframes.keys() {
            out.push_str(&format!(
                "  keyframe_{kf} [shape=point,label=\"kf {kf}\"];\n"
            ));
        }
        for marker in self.markers.keys() {
            out.push_str(&format!(
                "  marker_{marker} [shape=diamond,label=\"marker {marker}\"];\n"
            ));
        }
        for edge in self.edges() {
            let (from, to, attr) = match edge.kind {
                EdgeKind::FloorRoom => (
                    format!("floor_{}", edge.from),
                    format!("room_{}", edge.to),
                    "",
                ),
                EdgeKind::RoomWall | EdgeKind::RoomGround => (
                    format!("room_{}", edge.from),
                    format!("component_{}", edge.to),
                    "",
                ),
                EdgeKind::RoomMarker => (
                    format!("room_{}", edge.from),
                    format!("marker_{}", edge.to),
                    " [style=dashed]",
                ),
                EdgeKind::ComponentKeyframe => (
                    format!("component_{}", edge.from),
                    format!("keyframe_{}", edge.to),
                    " [style=dotted]",
                ),
            };
            out.push_str(&format!("  {from} -> {to}{attr};\n"));
        }
        out.push_str("}\n");
        out
    }

    /// Structural equality up to `tol` on all numeric fields; ids and edges
    /// must match exactly. Returns the first difference found.
    pub fn approx_eq(&self, other: &SceneGraph, tol: f64) -> Result<(), String> {
        fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
        fn vec_close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
            (a - b).norm() <= tol
        }
        fn plane_close(a: &Plane, b: &Plane, tol: f64) -> Result<(), String> {
            if a.class != b.class {
                return Err("plane class".into());
            }
            if !vec_close(&a.normal, &b.normal, tol) || !close(a.offset, b.offset, tol) {
                return Err("plane parameters".into());
            }
            if !vec_close(&a.centroid, &b.centroid, tol) || a.inlier_count != b.inlier_count {
                return Err("plane support".into());
            }
            Ok(())
        }

        let my_kf: Vec<_> = self.keyframes.keys().collect();
        let other_kf: Vec<_> = other.keyframes.keys().collect();
        if my_kf != other_kf {
            return Err("keyframe id sets differ".into());
        }
        for (id, kf) in &self.keyframes {
            let o = &other.keyframes[id];
            if !kf.pose.is_approx(&o.pose, tol) {
                return Err(format!("keyframe {id} pose"));
            }
            if kf.markers.len() != o.markers.len() {
                return Err(format!("keyframe {id} marker observations"));
            }
        }
        if self.components.len() != other.components.len() {
            return Err("component counts differ".into());
        }
        for (id, c) in &self.components {
            let o = other
                .components
                .get(id)
                .ok_or_else(|| format!("component {id} missing"))?;
            plane_close(&c.plane, &o.plane, tol).map_err(|e| format!("component {id}: {e}"))?;
            if c.observations.len() != o.observations.len() {
                return Err(format!("component {id} observations"));
            }
            if c.points.len() != o.points.len() {
                return Err(format!("component {id} points"));
            }
        }
        if self.rooms.len() != other.rooms.len() {
            return Err("room counts differ".into());
        }
        for (id, r) in &self.rooms {
            let o = other.rooms.get(id).ok_or_else(|| format!("room {id} missing"))?;
            if r.walls != o.walls || r.ground != o.ground || r.label != o.label {
                return Err(format!("room {id} structure"));
            }
            if !vec_close(&r.centroid, &o.centroid, tol) {
                return Err(format!("room {id} centroid"));
            }
        }
        match (&self.floor, &other.floor) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                if a.rooms != b.rooms || a.plane != b.plane || !vec_close(&a.centroid, &b.centroid, tol)
                {
                    return Err("floor differs".into());
                }
            }
            _ => return Err("floor presence differs".into()),
        }
        if self.markers.len() != other.markers.len() {
            return Err("marker counts differ".into());
        }
        for (id, m) in &self.markers {
            let o = other.markers.get(id).ok_or_else(|| format!("marker {id} missing"))?;
            if !m.pose.is_approx(&o.pose, tol) {
                return Err(format!("marker {id} pose"));
            }
        }
        if self.edges() != other.edges() {
            return Err("edge sets differ".into());
        }
        Ok(())
    }
}

// --- JSON document schema -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PlaneDoc {
    n: [f64; 3],
    d: f64,
    class: BuildingClass,
    centroid: [f64; 3],
    inliers: usize,
}

impl From<&Plane> for PlaneDoc {
    fn from(p: &Plane) -> Self {
        PlaneDoc {
            n: [p.normal.x, p.normal.y, p.normal.z],
            d: p.offset,
            class: p.class,
            centroid: [p.centroid.x, p.centroid.y, p.centroid.z],
            inliers: p.inlier_count,
        }
    }
}

impl PlaneDoc {
    fn to_plane(&self, path: &str) -> Result<Plane, GraphError> {
        let normal = Vec3::new(self.n[0], self.n[1], self.n[2]);
        if (normal.norm() - 1.0).abs() > 1e-6 {
            return Err(GraphError::parse(
                format!("{path}.n"),
                format!("normal must be unit length, got {}", normal.norm()),
            ));
        }
        Ok(Plane {
            normal,
            offset: self.d,
            class: self.class,
            centroid: Vec3::new(self.centroid[0], self.centroid[1], self.centroid[2]),
            inlier_count: self.inliers,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MarkerObservationDoc {
    id: u32,
    pose: [[f64; 4]; 4],
    information: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KeyFrameDoc {
    id: u64,
    pose: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    markers: Vec<MarkerObservationDoc>,
}

#[derive(Serialize, Deserialize)]
struct ObservationDoc {
    keyframe: u64,
    plane: PlaneDoc,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    id: u64,
    plane: PlaneDoc,
    #[serde(default)]
    points: Vec<[f64; 3]>,
    #[serde(default)]
    observations: Vec<ObservationDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    merged_from: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    cells: Vec<[f64; 3]>,
    centroid: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct RoomDoc {
    id: u64,
    walls: Vec<u64>,
    ground: u64,
    centroid: [f64; 3],
    cluster: ClusterDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marker: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct FloorDoc {
    id: u64,
    rooms: Vec<u64>,
    centroid: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plane: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct MarkerDoc {
    id: u32,
    pose: [[f64; 4]; 4],
    center: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    keyframes: Vec<KeyFrameDoc>,
    components: Vec<ComponentDoc>,
    rooms: Vec<RoomDoc>,
    floor: Option<FloorDoc>,
    markers: Vec<MarkerDoc>,
    edges: Vec<Edge>,
}

fn vec3_doc(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn doc_vec3(v: &[f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn pose_from_doc(m: &[[f64; 4]; 4], path: &str) -> Result<PoseSE3, GraphError> {
    PoseSE3::from_matrix(m).map_err(|e| GraphError::parse(path, e.to_string()))
}

/// Serialize a scene graph to its JSON document form.
pub fn serialize(graph: &SceneGraph) -> serde_json::Value {
    let doc = GraphDoc {
        keyframes: graph
            .keyframes
            .values()
            .map(|kf| KeyFrameDoc {
                id: kf.id,
                pose: kf.pose.to_matrix(),
                markers: kf
                    .markers
                    .iter()
                    .map(|m| MarkerObservationDoc {
                        id: m.marker_id,
                        pose: m.local_pose.to_matrix(),
                        information: m.information.iter().copied().collect(),
                    })
                    .collect(),
            })
            .collect(),
        components: graph
            .components
            .values()
            .map(|c| ComponentDoc {
                id: c.id.0,
                plane: PlaneDoc::from(&c.plane),
                points: c.points.iter().map(vec3_doc).collect(),
                observations: c
                    .observations
                    .iter()
                    .map(|o| ObservationDoc {
                        keyframe: o.keyframe.0,
                        plane: PlaneDoc::from(&o.plane),
                    })
                    .collect(),
                merged_from: c.merged_from.iter().map(|id| id.0).collect(),
            })
            .collect(),
        rooms: graph
            .rooms
            .values()
            .map(|r| RoomDoc {
                id: r.id.0,
                walls: r.walls.iter().map(|w| w.0).collect(),
                ground: r.ground.0,
                centroid: vec3_doc(&r.centroid),
                cluster: ClusterDoc {
                    cells: r.cluster.cells.iter().map(vec3_doc).collect(),
                    centroid: vec3_doc(&r.cluster.centroid),
                },
                label: r.label.clone(),
                marker: r.marker.map(|m| m.0),
            })
            .collect(),
        floor: graph.floor.as_ref().map(|f| FloorDoc {
            id: f.id.0,
            rooms: f.rooms.iter().map(|r| r.0).collect(),
            centroid: vec3_doc(&f.centroid),
            plane: f.plane.map(|p| p.0),
        }),
        markers: graph
            .markers
            .values()
            .map(|m| MarkerDoc {
                id: m.id.0,
                pose: m.pose.to_matrix(),
                center: vec3_doc(&m.center),
            })
            .collect(),
        edges: graph.edges(),
    };
    serde_json::to_value(&doc).expect("graph document serializes")
}

pub fn to_json_string(graph: &SceneGraph) -> String {
    serde_json::to_string_pretty(&serialize(graph)).expect("graph document serializes")
}

/// Rebuild a scene graph from its JSON document, validating referential
/// integrity. Errors name the offending document path.
pub fn deserialize(value: &serde_json::Value) -> Result<SceneGraph, GraphError> {
    let doc: GraphDoc = serde_json::from_value(value.clone())
        .map_err(|e| GraphError::parse("$", e.to_string()))?;
    let mut graph = SceneGraph::new();

    for (i, kfd) in doc.keyframes.iter().enumerate() {
        let path = format!("keyframes[{i}]");
        let pose = pose_from_doc(&kfd.pose, &format!("{path}.pose"))?;
        let mut kf = KeyFrame::new(kfd.id, pose, Default::default());
        for (j, m) in kfd.markers.iter().enumerate() {
            let mpath = format!("{path}.markers[{j}]");
            if m.information.len() != 36 {
                return Err(GraphError::parse(
                    format!("{mpath}.information"),
                    format!("expected 36 entries, got {}", m.information.len()),
                ));
            }
            kf.markers.push(MarkerObservation {
                marker_id: m.id,
                local_pose: pose_from_doc(&m.pose, &format!("{mpath}.pose"))?,
                information: Matrix6::from_row_slice(&m.information),
            });
        }
        if graph.keyframes.insert(KeyFrameId(kfd.id), kf).is_some() {
            return Err(GraphError::parse(path, format!("duplicate keyframe id {}", kfd.id)));
        }
    }

    for (i, cd) in doc.components.iter().enumerate() {
        let path = format!("components[{i}]");
        let plane = cd.plane.to_plane(&format!("{path}.plane"))?;
        let mut observations = Vec::new();
        for (j, od) in cd.observations.iter().enumerate() {
            let opath = format!("{path}.observations[{j}]");
            let kf_id = KeyFrameId(od.keyframe);
            if !graph.keyframes.contains_key(&kf_id) {
                return Err(GraphError::parse(
                    format!("{opath}.keyframe"),
                    format!("unknown keyframe id {}", od.keyframe),
                ));
            }
            observations.push(Observation {
                keyframe: kf_id,
                plane: od.plane.to_plane(&format!("{opath}.plane"))?,
            });
        }
        let id = ComponentId(cd.id);
        if graph
            .components
            .insert(
                id,
                MapComponent {
                    id,
                    plane,
                    points: cd.points.iter().map(doc_vec3).collect(),
                    observations,
                    merged_from: cd.merged_from.iter().map(|&m| ComponentId(m)).collect(),
                },
            )
            .is_some()
        {
            return Err(GraphError::parse(path, format!("duplicate component id {}", cd.id)));
        }
        graph.next_component = graph.next_component.max(cd.id + 1);
    }

    for (i, rd) in doc.rooms.iter().enumerate() {
        let path = format!("rooms[{i}]");
        let mut walls = Vec::new();
        for (j, w) in rd.walls.iter().enumerate() {
            let id = ComponentId(*w);
            match graph.components.get(&id) {
                Some(c) if c.plane.class == BuildingClass::Wall => walls.push(id),
                Some(_) => {
                    return Err(GraphError::parse(
                        format!("{path}.walls[{j}]"),
                        format!("component {w} is not a wall"),
                    ))
                }
                None => {
                    return Err(GraphError::parse(
                        format!("{path}.walls[{j}]"),
                        format!("unknown component id {w}"),
                    ))
                }
            }
        }
        let ground = ComponentId(rd.ground);
        match graph.components.get(&ground) {
            Some(c) if c.plane.class == BuildingClass::Ground => {}
            Some(_) => {
                return Err(GraphError::parse(
                    format!("{path}.ground"),
                    format!("component {} is not a ground", rd.ground),
                ))
            }
            None => {
                return Err(GraphError::parse(
                    format!("{path}.ground"),
                    format!("unknown component id {}", rd.ground),
                ))
            }
        }
        let id = RoomId(rd.id);
        if graph
            .rooms
            .insert(
                id,
                Room {
                    id,
                    walls,
                    ground,
                    centroid: doc_vec3(&rd.centroid),
                    cluster: FreeSpaceCluster {
                        cells: rd.cluster.cells.iter().map(doc_vec3).collect(),
                        centroid: doc_vec3(&rd.cluster.centroid),
                    },
                    label: rd.label.clone(),
                    marker: rd.marker.map(MarkerId),
                },
            )
            .is_some()
        {
            return Err(GraphError::parse(path, format!("duplicate room id {}", rd.id)));
        }
        graph.next_room = graph.next_room.max(rd.id + 1);
    }

    for (i, md) in doc.markers.iter().enumerate() {
        let path = format!("markers[{i}]");
        let pose = pose_from_doc(&md.pose, &format!("{path}.pose"))?;
        graph.markers.insert(
            MarkerId(md.id),
            Marker {
                id: MarkerId(md.id),
                pose,
                center: doc_vec3(&md.center),
            },
        );
    }

    if let Some(fd) = &doc.floor {
        let mut rooms = Vec::new();
        for (j, r) in fd.rooms.iter().enumerate() {
            let id = RoomId(*r);
            if !graph.rooms.contains_key(&id) {
                return Err(GraphError::parse(
                    format!("floor.rooms[{j}]"),
                    format!("unknown room id {r}"),
                ));
            }
            rooms.push(id);
        }
        let plane = match fd.plane {
            Some(p) => {
                let id = ComponentId(p);
                if !graph.components.contains_key(&id) {
                    return Err(GraphError::parse(
                        "floor.plane",
                        format!("unknown component id {p}"),
                    ));
                }
                Some(id)
            }
            None => None,
        };
        graph.floor = Some(Floor {
            id: FloorId(fd.id),
            rooms,
            centroid: doc_vec3(&fd.centroid),
            plane,
        });
    }

    for (i, edge) in doc.edges.iter().enumerate() {
        let path = format!("edges[{i}]");
        let known = match edge.kind {
            EdgeKind::FloorRoom => {
                graph.floor.as_ref().map_or(false, |f| f.id.0 == edge.from)
                    && graph.rooms.contains_key(&RoomId(edge.to))
            }
            EdgeKind::RoomWall | EdgeKind::RoomGround => {
                graph.rooms.contains_key(&RoomId(edge.from))
                    && graph.components.contains_key(&ComponentId(edge.to))
            }
            EdgeKind::RoomMarker => {
                graph.rooms.contains_key(&RoomId(edge.from))
                    && graph.markers.contains_key(&MarkerId(edge.to as u32))
            }
            EdgeKind::ComponentKeyframe => {
                graph.components.contains_key(&ComponentId(edge.from))
                    && graph.keyframes.contains_key(&KeyFrameId(edge.to))
            }
        };
        if !known {
            return Err(GraphError::parse(
                path,
                format!("edge endpoint missing: {:?} {} -> {}", edge.kind, edge.from, edge.to),
            ));
        }
    }

    Ok(graph)
}

pub fn from_json_str(text: &str) -> Result<SceneGraph, GraphError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GraphError::parse("$", e.to_string()))?;
    deserialize(&value)
}
