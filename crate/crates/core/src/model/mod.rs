//! Node and edge types of the hierarchical multi-modal scene graph.
//!
//! The graph has four layers (floor, room, view, object). Containment is a tree:
//! floors own rooms, rooms own views and objects. Views and objects are
//! additionally linked by visibility, and views are linked to each other by
//! undirected traversal edges used for planning.
//!
//! A [`SceneGraph`] is immutable once published; the builder is the only
//! writer.

mod persist;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{distance3, Point2, Point3};
use crate::ids::{FloorId, ObjectId, RoomId, ViewId};

pub use persist::{load, load_unchecked, save, to_json_string, PersistError, FORMAT_VERSION};
pub use validate::{validate, Layer, Rule, ValidationReport, Violation};

/// Dense semantic feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Camera pose: position in meters, orientation as a unit quaternion (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3,
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn at(position: Point3) -> Self {
        Self { position, orientation: [1.0, 0.0, 0.0, 0.0] }
    }

    /// Pose at `position` rotated by `yaw` radians about +z.
    pub fn with_yaw(position: Point3, yaw: f64) -> Self {
        let half = yaw / 2.0;
        Self { position, orientation: [half.cos(), 0.0, 0.0, half.sin()] }
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.orientation.iter().map(|q| q * q).sum::<f64>().sqrt()
    }
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn is_ordered(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    /// Top-down rectangle of the box, counter-clockwise.
    pub fn footprint(&self) -> Vec<Point2> {
        vec![
            [self.min[0], self.min[1]],
            [self.max[0], self.min[1]],
            [self.max[0], self.max[1]],
            [self.min[0], self.max[1]],
        ]
    }

    pub fn max_edge(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorNode {
    pub id: FloorId,
    pub name: String,
    pub z_min: f64,
    pub z_max: f64,
    pub room_ids: BTreeSet<RoomId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub id: RoomId,
    pub floor_id: FloorId,
    pub polygon: Vec<Point2>,
    pub name: String,
    pub embedding: Embedding,
    pub view_ids: BTreeSet<ViewId>,
    pub object_ids: BTreeSet<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewNode {
    pub id: ViewId,
    pub room_id: RoomId,
    pub pose: Pose,
    pub embedding: Embedding,
    pub caption: String,
    /// Symbolic image handle passed to the image reasoner; the view id is used
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub visible_object_ids: BTreeSet<ObjectId>,
}

impl ViewNode {
    pub fn image_handle(&self) -> &str {
        self.image_ref.as_deref().unwrap_or(self.id.as_str())
    }

    pub fn position(&self) -> &Point3 {
        &self.pose.position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: ObjectId,
    pub room_id: RoomId,
    pub label: String,
    pub aabb: Aabb,
    pub centroid: Point3,
    pub embedding: Embedding,
    /// Mean depth of the object in each view that observes it, meters.
    pub visibility: BTreeMap<ViewId, f64>,
    pub best_view_id: ViewId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_ref: Option<String>,
}

/// Undirected traversal edge between two views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEdge {
    pub a: ViewId,
    pub b: ViewId,
    pub length: f64,
}

impl ViewEdge {
    /// Edge with endpoints in canonical (sorted) order.
    pub fn between(a: &ViewNode, b: &ViewNode) -> Self {
        let length = distance3(a.position(), b.position());
        if a.id <= b.id {
            Self { a: a.id.clone(), b: b.id.clone(), length }
        } else {
            Self { a: b.id.clone(), b: a.id.clone(), length }
        }
    }

    pub fn other(&self, id: &ViewId) -> Option<&ViewId> {
        if &self.a == id {
            Some(&self.b)
        } else if &self.b == id {
            Some(&self.a)
        } else {
            None
        }
    }
}

/// Per-layer embedding dimensionality; `None` for a layer with no nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub room: Option<usize>,
    pub view: Option<usize>,
    pub object: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub embedding_dims: EmbeddingDims,
    #[serde(with = "keyed")]
    pub floors: BTreeMap<FloorId, FloorNode>,
    #[serde(with = "keyed")]
    pub rooms: BTreeMap<RoomId, RoomNode>,
    #[serde(with = "keyed")]
    pub views: BTreeMap<ViewId, ViewNode>,
    #[serde(with = "keyed")]
    pub objects: BTreeMap<ObjectId, ObjectNode>,
    pub view_edges: Vec<ViewEdge>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.floors.len() + self.rooms.len() + self.views.len() + self.objects.len()
    }

    pub fn floor_by_name(&self, name: &str) -> Option<&FloorNode> {
        self.floors.values().find(|f| f.name == name)
    }

    /// Summary counts for service health output.
    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            floors: self.floors.len(),
            rooms: self.rooms.len(),
            views: self.views.len(),
            objects: self.objects.len(),
            view_edges: self.view_edges.len(),
            embedding_dims: self.embedding_dims,
            room_names: self.rooms.values().map(|r| (r.id.clone(), r.name.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub floors: usize,
    pub rooms: usize,
    pub views: usize,
    pub objects: usize,
    pub view_edges: usize,
    pub embedding_dims: EmbeddingDims,
    pub room_names: BTreeMap<RoomId, String>,
}

/// Depths closer than this are treated as equal when picking a best view.
pub const DEPTH_TIE_EPS: f64 = 1e-9;

/// The view with minimum mean depth; among views within [`DEPTH_TIE_EPS`] of
/// the minimum, the lexicographically smallest id.
pub fn select_best_view<'a, I>(observations: I) -> Option<ViewId>
where
    I: IntoIterator<Item = (&'a ViewId, f64)>,
{
    let observations: Vec<(&ViewId, f64)> = observations.into_iter().collect();
    let min = observations.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    observations
        .into_iter()
        .filter(|(_, d)| *d <= min + DEPTH_TIE_EPS)
        .map(|(v, _)| v)
        .min()
        .cloned()
}

/// Types stored in an id-keyed collection.
pub(crate) trait Keyed {
    type Key: Ord + Clone + std::fmt::Display;
    fn key(&self) -> &Self::Key;
}

macro_rules! keyed {
    ($ty:ty, $key:ty) => {
        impl Keyed for $ty {
            type Key = $key;
            fn key(&self) -> &$key {
                &self.id
            }
        }
    };
}

keyed!(FloorNode, FloorId);
keyed!(RoomNode, RoomId);
keyed!(ViewNode, ViewId);
keyed!(ObjectNode, ObjectId);

/// Serializes an id-keyed map as a JSON array of nodes, ordered by id.
mod keyed {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Keyed;

    pub fn serialize<S, T>(map: &BTreeMap<T::Key, T>, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Keyed + Serialize,
    {
        serializer.collect_seq(map.values())
    }

    pub fn deserialize<'de, D, T>(deserializer: D) -> Result<BTreeMap<T::Key, T>, D::Error>
    where
        D: Deserializer<'de>,
        T: Keyed + Deserialize<'de>,
    {
        let nodes = Vec::<T>::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for node in nodes {
            let key = node.key().clone();
            if map.insert(key.clone(), node).is_some() {
                return Err(D::Error::custom(format!("duplicate id `{key}`")));
            }
        }
        Ok(map)
    }
}
