//! Periodic detection of rooms and the floor from the map's associated
//! components, plus optional marker-to-room semantic labeling.
//!
//! Free space is computed by an in-repo 2D occupancy-grid clusterer over the
//! ground footprint: ground cells are free when farther than half the wall
//! clearance from every wall's vertical extrusion, and 4-connected free
//! regions large enough become clusters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atlas::{
    Floor, FloorId, FreeSpaceCluster, MapComponent, Room, RoomId, SceneGraph,
};
use crate::geom::{BuildingClass, Vec3};

/// Thresholds for structural-element recognition.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralConfig {
    /// Occupancy-grid resolution, meters per cell.
    pub grid_resolution: f64,
    /// Wall clearance ω: max wall-to-cluster distance in the proximity test;
    /// cells closer than ω/2 to a wall are not free.
    pub wall_clearance: f64,
    /// Angular tolerance ϑ of the ground-orthogonality test, radians.
    pub ground_angle_tol: f64,
    /// Minimum cells for a free-space cluster.
    pub min_cluster_cells: usize,
    /// Marker-to-room centroid proximity ε_s, meters.
    pub marker_proximity: f64,
    /// Period of the structural pass, seconds of sequence time.
    pub run_period: f64,
}

impl Default for StructuralConfig {
    fn default() -> Self {
        StructuralConfig {
            grid_resolution: 0.1,
            wall_clearance: 0.5,
            ground_angle_tol: 10f64.to_radians(),
            min_cluster_cells: 40,
            marker_proximity: 3.0,
            run_period: 2.0,
        }
    }
}

/// Environment-driven marker database: tag id → semantic label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkerDatabase {
    labels: BTreeMap<u32, String>,
}

impl MarkerDatabase {
    pub fn new(labels: BTreeMap<u32, String>) -> Self {
        MarkerDatabase { labels }
    }

    /// Parse the JSON form: an object mapping integer tag ids (as JSON
    /// object keys) to label strings, e.g. `{"5": "corridor-A"}`.
    pub fn from_json_str(text: &str) -> Result<Self, String> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut labels = BTreeMap::new();
        for (key, label) in raw {
            let id: u32 = key
                .parse()
                .map_err(|_| format!("marker id {key:?} is not an integer"))?;
            labels.insert(id, label);
        }
        Ok(MarkerDatabase { labels })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.labels
                .iter()
                .map(|(id, label)| (id.to_string(), serde_json::Value::String(label.clone())))
                .collect(),
        )
    }

    pub fn get(&self, id: u32) -> Option<&str> {
        self.labels.get(&id).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Outcome summary of a structural pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub clusters: usize,
    pub rooms: usize,
    pub floor_detected: bool,
    pub markers_bound: usize,
    pub warnings: Vec<String>,
}

struct Grid {
    min_x: f64,
    min_y: f64,
    nx: usize,
    res: f64,
    /// Per cell: ground-point count and z sum (0 count = no ground).
    ground: Vec<(usize, f64)>,
    blocked: Vec<bool>,
}

impl Grid {
    fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.min_x + (ix as f64 + 0.5) * self.res,
            self.min_y + (iy as f64 + 0.5) * self.res,
        )
    }
}

/// Rasterize ground-component inlier extents onto a 2D grid, mark cells free
/// when farther than `wall_clearance / 2` from every wall point's vertical
/// extrusion, and return 4-connected free regions with at least
/// `min_cluster_cells` cells, in deterministic scan order.
pub fn cluster_free_space(g: &SceneGraph, cfg: &StructuralConfig) -> Vec<FreeSpaceCluster> {
    let ground_points: Vec<Vec3> = g
        .components_of_class(BuildingClass::Ground)
        .flat_map(|c| c.points.iter().copied())
        .collect();
    if ground_points.is_empty() {
        return Vec::new();
    }
    let res = cfg.grid_resolution;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &ground_points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let nx = (((max_x - min_x) / res).ceil() as usize + 1).max(1);
    let ny = (((max_y - min_y) / res).ceil() as usize + 1).max(1);
    let mut grid = Grid {
        min_x,
        min_y,
        nx,
        res,
        ground: vec![(0, 0.0); nx * ny],
        blocked: vec![false; nx * ny],
    };

    for p in &ground_points {
        let ix = (((p.x - min_x) / res).floor() as usize).min(nx - 1);
        let iy = (((p.y - min_y) / res).floor() as usize).min(ny - 1);
        let cell = grid.index(ix, iy);
        grid.ground[cell].0 += 1;
        grid.ground[cell].1 += p.z;
    }

    let clearance = cfg.wall_clearance / 2.0;
    let reach = (clearance / res).ceil() as isize + 1;
    for wall in g.components_of_class(BuildingClass::Wall) {
        for p in &wall.points {
            let ix = ((p.x - min_x) / res).floor() as isize;
            let iy = ((p.y - min_y) / res).floor() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (cx, cy) = (ix + dx, iy + dy);
                    if cx < 0 || cy < 0 || cx >= nx as isize || cy >= ny as isize {
                        continue;
                    }
                    let (wx, wy) = grid.cell_center(cx as usize, cy as usize);
                    let dist = ((wx - p.x).powi(2) + (wy - p.y).powi(2)).sqrt();
                    if dist <= clearance {
                        let cell = grid.index(cx as usize, cy as usize);
                        grid.blocked[cell] = true;
                    }
                }
            }
        }
    }

    // 4-connected flood fill over free ground cells, in scan order.
    let mut visited = vec![false; nx * ny];
    let mut clusters = Vec::new();
    for start in 0..nx * ny {
        if visited[start] || grid.ground[start].0 == 0 || grid.blocked[start] {
            continue;
        }
        let mut queue = vec![start];
        visited[start] = true;
        let mut cells = Vec::new();
        while let Some(cell) = queue.pop() {
            let (ix, iy) = (cell % nx, cell / nx);
            let (x, y) = grid.cell_center(ix, iy);
            let (count, z_sum) = grid.ground[cell];
            cells.push(Vec3::new(x, y, z_sum / count as f64));
            let mut push = |jx: isize, jy: isize| {
                if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                    return;
                }
                let j = jy as usize * nx + jx as usize;
                if !visited[j] && grid.ground[j].0 > 0 && !grid.blocked[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            };
            push(ix as isize - 1, iy as isize);
            push(ix as isize + 1, iy as isize);
            push(ix as isize, iy as isize - 1);
            push(ix as isize, iy as isize + 1);
        }
        if cells.len() >= cfg.min_cluster_cells {
            cells.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
            let centroid = cells.iter().sum::<Vec3>() / cells.len() as f64;
            clusters.push(FreeSpaceCluster { cells, centroid });
        }
    }
    clusters.sort_by(|a, b| {
        a.centroid
            .y
            .total_cmp(&b.centroid.y)
            .then(a.centroid.x.total_cmp(&b.centroid.x))
    });
    clusters
}

/// Proximity test: some cell of the cluster lies within `omega` of the
/// wall plane (closed bound).
pub fn wall_proximity_ok(wall: &MapComponent, cluster: &FreeSpaceCluster, omega: f64) -> bool {
    cluster
        .cells
        .iter()
        .any(|cell| wall.plane.signed_distance(cell).abs() <= omega)
}

/// Directionality test: the wall normal points away from the cluster
/// centroid, strictly.
pub fn wall_directionality_ok(wall: &MapComponent, cluster: &FreeSpaceCluster) -> bool {
    wall.plane
        .normal
        .dot(&(cluster.centroid - wall.plane.centroid))
        < 0.0
}

/// Ground association test: the ground normal is within `sin(theta)` of
/// orthogonal to every wall normal, and the ground centroid lies inside the
/// extent interval spanned by the walls along each wall normal.
pub fn ground_association_ok(
    ground: &MapComponent,
    walls: &[&MapComponent],
    theta: f64,
) -> bool {
    if walls.is_empty() {
        return false;
    }
    let sin_tol = theta.sin();
    for wall in walls {
        if ground.plane.normal.dot(&wall.plane.normal).abs() > sin_tol {
            return false;
        }
    }
    let centroid = ground.plane.centroid;
    for wall in walls {
        let axis = wall.plane.normal;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for other in walls {
            if other.points.is_empty() {
                let s = axis.dot(&other.plane.centroid);
                lo = lo.min(s);
                hi = hi.max(s);
            } else {
                for p in &other.points {
                    let s = axis.dot(p);
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
            }
        }
        let s = axis.dot(&centroid);
        if s < lo || s > hi {
            return false;
        }
    }
    true
}

/// Detect rooms around free-space clusters: walls passing both the proximity
/// and directionality tests, plus a ground passing the association test.
/// Rooms are keyed by cluster centroid; re-running updates membership
/// in place instead of duplicating.
pub fn detect_rooms(g: &mut SceneGraph, cfg: &StructuralConfig) -> Vec<Room> {
    let clusters = cluster_free_space(g, cfg);
    let mut emitted = Vec::new();
    for cluster in clusters {
        let walls: Vec<&MapComponent> = g
            .components_of_class(BuildingClass::Wall)
            .filter(|w| {
                wall_proximity_ok(w, &cluster, cfg.wall_clearance)
                    && wall_directionality_ok(w, &cluster)
            })
            .collect();
        if walls.len() < 2 {
            continue;
        }
        let ground = g
            .components_of_class(BuildingClass::Ground)
            .find(|gr| ground_association_ok(gr, &walls, cfg.ground_angle_tol));
        let Some(ground) = ground else {
            continue;
        };
        let centroid =
            walls.iter().map(|w| w.plane.centroid).sum::<Vec3>() / walls.len() as f64;
        let wall_ids: Vec<_> = walls.iter().map(|w| w.id).collect();
        let ground_id = ground.id;

        let existing = g
            .rooms
            .values()
            .map(|room| {
                (
                    room.id,
                    (room.cluster.centroid - cluster.centroid).norm(),
                )
            })
            .filter(|(_, dist)| *dist < 2.0 * cfg.grid_resolution)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id);

        let room = match existing {
            Some(id) => {
                let room = g.rooms.get_mut(&id).expect("matched room");
                room.walls = wall_ids;
                room.ground = ground_id;
                room.centroid = centroid;
                room.cluster = cluster;
                room.clone()
            }
            None => {
                let id = g.next_room_id();
                let room = Room {
                    id,
                    walls: wall_ids,
                    ground: ground_id,
                    centroid,
                    cluster,
                    label: None,
                    marker: None,
                };
                g.rooms.insert(id, room.clone());
                room
            }
        };
        emitted.push(room);
    }
    emitted
}

/// Detect the single floor over all rooms: centroid is the arithmetic mean
/// of the room centroids, and the reference plane is the lowest-id ground.
/// With zero rooms no floor is emitted.
pub fn detect_floor(g: &mut SceneGraph) -> Option<Floor> {
    if g.rooms.is_empty() {
        return None;
    }
    let rooms: Vec<RoomId> = g.rooms.keys().copied().collect();
    let centroid =
        g.rooms.values().map(|r| r.centroid).sum::<Vec3>() / g.rooms.len() as f64;
    let plane = g
        .components_of_class(BuildingClass::Ground)
        .map(|c| c.id)
        .next();
    let floor = Floor {
        id: g.floor.as_ref().map_or(FloorId(0), |f| f.id),
        rooms,
        centroid,
        plane,
    };
    g.floor = Some(floor.clone());
    Some(floor)
}

/// Check that a marker center is enclosed by all of the room's walls:
/// on the non-positive side of every wall plane.
pub fn marker_enclosed(g: &SceneGraph, room: &Room, center: &Vec3) -> bool {
    room.walls.iter().all(|wall_id| {
        g.components
            .get(wall_id)
            .map_or(false, |wall| wall.plane.signed_distance(center) <= 0.0)
    })
}

/// Bind markers to rooms: a marker binds to the nearest room whose centroid
/// is within `eps` and whose walls all enclose the marker center. Binding
/// applies the database label to the room. Markers with ids missing from
/// the database stay unbound and produce a warning.
pub fn associate_markers(
    g: &mut SceneGraph,
    db: &MarkerDatabase,
    eps: f64,
) -> (usize, Vec<String>) {
    let mut warnings = Vec::new();
    let mut bound = 0;
    let marker_ids: Vec<_> = g.markers.keys().copied().collect();
    for marker_id in marker_ids {
        let center = g.markers[&marker_id].center;
        let candidate = g
            .rooms
            .values()
            .filter(|room| (center - room.centroid).norm() <= eps)
            .filter(|room| marker_enclosed(g, room, &center))
            .map(|room| (room.id, (center - room.centroid).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(id, _)| id);
        let Some(room_id) = candidate else {
            continue;
        };
        let Some(label) = db.get(marker_id.0) else {
            warnings.push(format!(
                "marker {marker_id} bound geometrically to room {room_id} but absent from the database"
            ));
            continue;
        };
        let room = g.rooms.get_mut(&room_id).expect("candidate room");
        if room.marker.is_none() || room.marker == Some(marker_id) {
            room.marker = Some(marker_id);
            room.label = Some(label.to_string());
            bound += 1;
        }
    }
    (bound, warnings)
}

/// One structural pass: free-space clustering, room detection, floor
/// detection, and marker association. Idempotent on an unchanged map.
pub fn run_structural_pass(
    g: &mut SceneGraph,
    cfg: &StructuralConfig,
    db: Option<&MarkerDatabase>,
) -> StructuralReport {
    let clusters = cluster_free_space(g, cfg).len();
    let rooms = detect_rooms(g, cfg);
    let floor = detect_floor(g);
    let (markers_bound, warnings) = match db {
        Some(db) => associate_markers(g, db, cfg.marker_proximity),
        None => (0, Vec::new()),
    };
    StructuralReport {
        clusters,
        rooms: rooms.len(),
        floor_detected: floor.is_some(),
        markers_bound,
        warnings,
    }
}
