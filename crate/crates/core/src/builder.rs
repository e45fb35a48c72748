//! Scene-graph construction from a floor/room/object layout and posed views.
//!
//! Population order is floors, rooms, views, objects, visibility links, then
//! best-view assignment. Views and objects are homed to rooms geometrically;
//! see [`assign_to_room`] for the rule chain.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::geometry::{area, boundary_distance, distance3, intersection_area, locate_point, Containment, Point2, Point3};
use crate::ids::{FloorId, ObjectId, RoomId, ViewId};
use crate::model::{
    select_best_view, validate, Aabb, Embedding, EmbeddingDims, FloorNode, ObjectNode, Pose, RoomNode, SceneGraph,
    ValidationReport, ViewEdge, ViewNode,
};
use crate::prompts;
use crate::providers::{ProviderError, ProviderSuite};

pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 2.0;

/// Overlap areas closer than this are ties.
const AREA_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFloor {
    pub id: FloorId,
    pub name: String,
    pub z_min: f64,
    pub z_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRoom {
    pub id: RoomId,
    pub floor_id: FloorId,
    pub polygon: Vec<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Overrides the text embedding of the room name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutObject {
    pub id: ObjectId,
    pub label: String,
    pub aabb: Aabb,
    pub centroid: Point3,
    pub embedding: Embedding,
    /// Top-down footprint; the box footprint is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<Vec<Point2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutView {
    pub id: ViewId,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Computed by the image embedder when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

/// `[view_id, object_id, mean_depth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub ViewId, pub ObjectId, pub f64);

/// Builder input. Views are listed in trajectory order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutInput {
    pub floors: Vec<LayoutFloor>,
    pub rooms: Vec<LayoutRoom>,
    pub objects: Vec<LayoutObject>,
    pub views: Vec<LayoutView>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub neighbor_radius: f64,
    pub sequence_linking: bool,
    /// Forbid provider calls for naming and captioning.
    pub offline: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { neighbor_radius: DEFAULT_NEIGHBOR_RADIUS, sequence_linking: true, offline: false }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("duplicate {layer} id `{id}`")]
    DuplicateId { layer: &'static str, id: String },
    #[error("room `{room}` references unknown floor `{floor}`")]
    UnknownFloor { room: RoomId, floor: FloorId },
    #[error("observation references unknown {layer} `{id}`")]
    UnknownReference { layer: &'static str, id: String },
    #[error("observation of `{object}` from `{view}` has invalid depth {depth}")]
    BadDepth { view: ViewId, object: ObjectId, depth: f64 },
    #[error("object `{0}` has no usable observation")]
    Unobserved(ObjectId),
    #[error("{layer} `{id}` cannot be assigned to a room: the layout has no rooms")]
    Unassignable { layer: &'static str, id: String },
    #[error("room `{0}` has no name and offline builds cannot infer one")]
    MissingRoomName(RoomId),
    #[error("view `{0}` has no caption and offline builds cannot generate one")]
    MissingCaption(ViewId),
    #[error("view `{0}` has no embedding and offline builds cannot compute one")]
    MissingViewEmbedding(ViewId),
    #[error("provider failure while building: {0}")]
    Provider(#[from] ProviderError),
    #[error("built graph is invalid: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignMethod {
    Containment,
    Overlap,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomAssignment {
    pub room_id: RoomId,
    pub method: AssignMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum BuildEvent {
    ViewAssigned { view: ViewId, room: RoomId, method: AssignMethod },
    ObjectAssigned { object: ObjectId, room: RoomId, method: AssignMethod },
    ObservationDiscarded { view: ViewId, object: ObjectId, view_room: RoomId, object_room: RoomId },
    ObservationsMerged { view: ViewId, object: ObjectId, count: usize },
    RoomNamed { room: RoomId, name: String },
    ViewCaptioned { view: ViewId },
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub graph: SceneGraph,
    pub log: Vec<BuildEvent>,
}

/// Rooms eligible for a point at height `z`: those on floors whose height
/// range contains `z`, or all rooms when no floor does.
fn rooms_at_height(layout: &LayoutInput, z: f64) -> Vec<&LayoutRoom> {
    let floors: BTreeSet<&FloorId> =
        layout.floors.iter().filter(|f| f.z_min <= z && z <= f.z_max).map(|f| &f.id).collect();
    let on_floor: Vec<&LayoutRoom> = layout.rooms.iter().filter(|r| floors.contains(&r.floor_id)).collect();
    if on_floor.is_empty() {
        layout.rooms.iter().collect()
    } else {
        on_floor
    }
}

/// Homes a point (with an optional footprint) to a room.
///
/// 1. the unique room whose polygon contains the point (interior or boundary);
/// 2. otherwise, among the containing rooms (or all rooms when none contains
///    it), the one with the largest footprint overlap;
/// 3. when overlap is zero or tied, the nearest polygon boundary, then the
///    smallest id.
///
/// Returns `None` only for an empty room list.
pub fn assign_to_room(point: &Point2, footprint: Option<&[Point2]>, rooms: &[&LayoutRoom]) -> Option<RoomAssignment> {
    if rooms.is_empty() {
        return None;
    }
    let containing: Vec<&LayoutRoom> =
        rooms.iter().copied().filter(|r| locate_point(point, &r.polygon) != Containment::Outside).collect();
    if let [only] = containing.as_slice() {
        return Some(RoomAssignment { room_id: only.id.clone(), method: AssignMethod::Containment });
    }
    let mut candidates = if containing.is_empty() { rooms.to_vec() } else { containing };

    if let Some(fp) = footprint.filter(|fp| fp.len() >= 3 && area(fp) > 0.0) {
        let overlaps: Vec<f64> = candidates.iter().map(|r| intersection_area(&r.polygon, fp)).collect();
        let best = overlaps.iter().copied().fold(0.0, f64::max);
        if best > AREA_TIE_EPS {
            let tied: Vec<&LayoutRoom> = candidates
                .iter()
                .zip(&overlaps)
                .filter(|(_, a)| **a >= best - AREA_TIE_EPS)
                .map(|(r, _)| *r)
                .collect();
            if let [only] = tied.as_slice() {
                return Some(RoomAssignment { room_id: only.id.clone(), method: AssignMethod::Overlap });
            }
            candidates = tied;
        }
    }

    candidates
        .iter()
        .map(|r| (boundary_distance(point, &r.polygon), &r.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| RoomAssignment { room_id: id.clone(), method: AssignMethod::Distance })
}

pub fn assign_object_to_room(object: &LayoutObject, layout: &LayoutInput) -> Option<RoomAssignment> {
    let rooms = rooms_at_height(layout, object.centroid[2]);
    let box_fp = object.aabb.footprint();
    let fp = object.footprint.as_deref().unwrap_or(&box_fp);
    assign_to_room(&[object.centroid[0], object.centroid[1]], Some(fp), &rooms)
}

pub fn assign_view_to_room(view: &LayoutView, layout: &LayoutInput) -> Option<RoomAssignment> {
    let p = view.pose.position;
    let rooms = rooms_at_height(layout, p[2]);
    assign_to_room(&[p[0], p[1]], None, &rooms)
}

fn edge_key(a: &ViewId, b: &ViewId) -> (ViewId, ViewId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Traversal edges: consecutive views (when `sequence_linking`) plus every
/// pair within `neighbor_radius` (inclusive). Coincident views get no edge.
/// The result is sorted by endpoint ids with duplicates merged.
pub fn build_view_edges(views: &[&ViewNode], neighbor_radius: f64, sequence_linking: bool) -> Vec<ViewEdge> {
    let mut edges: BTreeMap<(ViewId, ViewId), ViewEdge> = BTreeMap::new();
    let mut add = |a: &ViewNode, b: &ViewNode| {
        if a.id == b.id {
            return;
        }
        let edge = ViewEdge::between(a, b);
        if edge.length > 0.0 {
            edges.entry(edge_key(&a.id, &b.id)).or_insert(edge);
        }
    };
    if sequence_linking {
        for pair in views.windows(2) {
            add(pair[0], pair[1]);
        }
    }
    if neighbor_radius > 0.0 && neighbor_radius.is_finite() {
        // uniform grid with cell edge = radius; neighbors lie in adjacent cells
        let cell_of = |p: &Point3| p.map(|c| (c / neighbor_radius).floor() as i64);
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, v) in views.iter().enumerate() {
            grid.entry(cell_of(v.position())).or_default().push(i);
        }
        for (i, v) in views.iter().enumerate() {
            let c = cell_of(v.position());
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                        for &j in bucket {
                            if j > i && distance3(v.position(), views[j].position()) <= neighbor_radius {
                                add(v, views[j]);
                            }
                        }
                    }
                }
            }
        }
    }
    edges.into_values().collect()
}

fn check_unique<'a, K: Ord + std::fmt::Display + 'a>(
    layer: &'static str,
    ids: impl Iterator<Item = &'a K>,
) -> Result<(), BuildError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(BuildError::DuplicateId { layer, id: id.to_string() });
        }
    }
    Ok(())
}

fn check_layout(layout: &LayoutInput) -> Result<(), BuildError> {
    check_unique("floor", layout.floors.iter().map(|f| &f.id))?;
    check_unique("room", layout.rooms.iter().map(|r| &r.id))?;
    check_unique("view", layout.views.iter().map(|v| &v.id))?;
    check_unique("object", layout.objects.iter().map(|o| &o.id))?;
    let floors: BTreeSet<&FloorId> = layout.floors.iter().map(|f| &f.id).collect();
    for r in &layout.rooms {
        if !floors.contains(&r.floor_id) {
            return Err(BuildError::UnknownFloor { room: r.id.clone(), floor: r.floor_id.clone() });
        }
    }
    let views: BTreeSet<&ViewId> = layout.views.iter().map(|v| &v.id).collect();
    let objects: BTreeSet<&ObjectId> = layout.objects.iter().map(|o| &o.id).collect();
    for Observation(v, o, d) in &layout.observations {
        if !views.contains(v) {
            return Err(BuildError::UnknownReference { layer: "view", id: v.to_string() });
        }
        if !objects.contains(o) {
            return Err(BuildError::UnknownReference { layer: "object", id: o.to_string() });
        }
        if !(d.is_finite() && *d > 0.0) {
            return Err(BuildError::BadDepth { view: v.clone(), object: o.clone(), depth: *d });
        }
    }
    Ok(())
}

/// Builds and validates a scene graph.
pub fn build_graph(
    layout: &LayoutInput,
    providers: &ProviderSuite,
    options: &BuildOptions,
) -> Result<BuildOutput, BuildError> {
    check_layout(layout)?;
    let mut log = Vec::new();
    let mut graph = SceneGraph::new();

    // floors
    for f in &layout.floors {
        graph.floors.insert(
            f.id.clone(),
            FloorNode {
                id: f.id.clone(),
                name: f.name.clone(),
                z_min: f.z_min,
                z_max: f.z_max,
                room_ids: BTreeSet::new(),
                cloud_ref: f.cloud_ref.clone(),
            },
        );
    }

    // rooms; unnamed rooms are named once their views are known
    for r in &layout.rooms {
        if r.name.is_none() && options.offline {
            return Err(BuildError::MissingRoomName(r.id.clone()));
        }
        if let Some(f) = graph.floors.get_mut(&r.floor_id) {
            f.room_ids.insert(r.id.clone());
        }
        graph.rooms.insert(
            r.id.clone(),
            RoomNode {
                id: r.id.clone(),
                floor_id: r.floor_id.clone(),
                polygon: r.polygon.clone(),
                name: r.name.clone().unwrap_or_default(),
                embedding: Embedding::new(Vec::new()),
                view_ids: BTreeSet::new(),
                object_ids: BTreeSet::new(),
                cloud_ref: r.cloud_ref.clone(),
            },
        );
    }

    // views
    let view_rooms = layout
        .views
        .iter()
        .map(|v| {
            assign_view_to_room(v, layout).ok_or_else(|| BuildError::Unassignable { layer: "view", id: v.id.to_string() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let view_media = layout
        .views
        .par_iter()
        .map(|v| -> Result<(String, Embedding, bool), BuildError> {
            let handle = v.image_ref.as_deref().unwrap_or(v.id.as_str());
            let (caption, generated) = match &v.caption {
                Some(c) => (c.clone(), false),
                None if options.offline => return Err(BuildError::MissingCaption(v.id.clone())),
                None => {
                    let reply = providers.image_reasoner.ask_image(&prompts::caption_prompt(), &[handle])?;
                    (reply.trim().to_owned(), true)
                }
            };
            let embedding = match &v.embedding {
                Some(e) => e.clone(),
                None if options.offline => return Err(BuildError::MissingViewEmbedding(v.id.clone())),
                None => providers.image_embedder.embed_image(handle)?,
            };
            Ok((caption, embedding, generated))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for ((v, assignment), (caption, embedding, generated)) in layout.views.iter().zip(view_rooms).zip(view_media) {
        log.push(BuildEvent::ViewAssigned { view: v.id.clone(), room: assignment.room_id.clone(), method: assignment.method });
        if generated {
            log.push(BuildEvent::ViewCaptioned { view: v.id.clone() });
        }
        if let Some(room) = graph.rooms.get_mut(&assignment.room_id) {
            room.view_ids.insert(v.id.clone());
        }
        graph.views.insert(
            v.id.clone(),
            ViewNode {
                id: v.id.clone(),
                room_id: assignment.room_id,
                pose: v.pose,
                embedding,
                caption,
                image_ref: v.image_ref.clone(),
                visible_object_ids: BTreeSet::new(),
            },
        );
    }

    // objects
    for o in &layout.objects {
        let assignment = assign_object_to_room(o, layout)
            .ok_or_else(|| BuildError::Unassignable { layer: "object", id: o.id.to_string() })?;
        log.push(BuildEvent::ObjectAssigned { object: o.id.clone(), room: assignment.room_id.clone(), method: assignment.method });
        if let Some(room) = graph.rooms.get_mut(&assignment.room_id) {
            room.object_ids.insert(o.id.clone());
        }
        graph.objects.insert(
            o.id.clone(),
            ObjectNode {
                id: o.id.clone(),
                room_id: assignment.room_id,
                label: o.label.clone(),
                aabb: o.aabb,
                centroid: o.centroid,
                embedding: o.embedding.clone(),
                visibility: BTreeMap::new(),
                best_view_id: ViewId::new(""),
                cloud_ref: o.cloud_ref.clone(),
            },
        );
    }

    // visibility, restricted to same-room pairs
    let mut depths: BTreeMap<(ObjectId, ViewId), Vec<f64>> = BTreeMap::new();
    for Observation(v, o, d) in &layout.observations {
        let view_room = &graph.views[v].room_id;
        let object_room = &graph.objects[o].room_id;
        if view_room != object_room {
            debug!(view = %v, object = %o, "discarding cross-room observation");
            log.push(BuildEvent::ObservationDiscarded {
                view: v.clone(),
                object: o.clone(),
                view_room: view_room.clone(),
                object_room: object_room.clone(),
            });
            continue;
        }
        depths.entry((o.clone(), v.clone())).or_default().push(*d);
    }
    for ((o, v), ds) in depths {
        if ds.len() > 1 {
            log.push(BuildEvent::ObservationsMerged { view: v.clone(), object: o.clone(), count: ds.len() });
        }
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        graph.objects.get_mut(&o).expect("checked").visibility.insert(v.clone(), mean);
        graph.views.get_mut(&v).expect("checked").visible_object_ids.insert(o);
    }

    // best views
    for obj in graph.objects.values_mut() {
        obj.best_view_id = select_best_view(obj.visibility.iter().map(|(v, d)| (v, *d)))
            .ok_or_else(|| BuildError::Unobserved(obj.id.clone()))?;
    }

    // room names and embeddings
    let room_ids: Vec<RoomId> = graph.rooms.keys().cloned().collect();
    for id in room_ids {
        if graph.rooms[&id].name.is_empty() {
            let room = &graph.rooms[&id];
            let listed: Vec<(&ViewId, &str)> =
                room.view_ids.iter().map(|v| (v, graph.views[v].caption.as_str())).collect();
            let reply = providers.text_reasoner.ask_text(&prompts::name_room_prompt(&listed))?;
            let name = reply.lines().next().unwrap_or("").trim().trim_matches(['"', '.']).to_lowercase();
            let name = if name.is_empty() { id.to_string() } else { name };
            log.push(BuildEvent::RoomNamed { room: id.clone(), name: name.clone() });
            graph.rooms.get_mut(&id).expect("present").name = name;
        }
        let layout_room = layout.rooms.iter().find(|r| r.id == id).expect("layout room");
        let embedding = match &layout_room.embedding {
            Some(e) => e.clone(),
            None => providers.text_embedder.embed_text(&graph.rooms[&id].name)?,
        };
        graph.rooms.get_mut(&id).expect("present").embedding = embedding;
    }

    graph.embedding_dims = EmbeddingDims {
        room: graph.rooms.values().next().map(|r| r.embedding.dim()),
        view: graph.views.values().next().map(|v| v.embedding.dim()),
        object: graph.objects.values().next().map(|o| o.embedding.dim()),
    };

    let ordered: Vec<&ViewNode> = layout.views.iter().map(|v| &graph.views[&v.id]).collect();
    graph.view_edges = build_view_edges(&ordered, options.neighbor_radius, options.sequence_linking);

    let report = validate(&graph);
    if !report.is_valid() {
        return Err(BuildError::Invalid(report));
    }
    info!(nodes = graph.node_count(), edges = graph.view_edges.len(), "graph built");
    Ok(BuildOutput { graph, log })
}
