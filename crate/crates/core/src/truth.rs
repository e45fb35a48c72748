//! Ground-truth tables consulted by the offline oracles.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{FloorId, ObjectId, RoomId, ViewId};
use crate::model::{Embedding, SceneGraph};
use crate::vocab::{best_term, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub category: String,
    pub room_id: RoomId,
    pub small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomTruth {
    pub name: String,
    pub floor_id: FloorId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub image_ref: String,
    pub room_id: RoomId,
    pub caption: String,
    /// Visible objects and their depth, meters.
    pub visible: BTreeMap<ObjectId, f64>,
    pub embedding: Embedding,
}

/// Everything the offline reasoners are allowed to know about a scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub floors: BTreeMap<FloorId, String>,
    pub rooms: BTreeMap<RoomId, RoomTruth>,
    pub objects: BTreeMap<ObjectId, ObjectTruth>,
    pub views: BTreeMap<ViewId, ViewTruth>,
}

impl GroundTruth {
    /// Treats the graph's labels, visibility and captions as truth. Used when an
    /// offline run has no generator output to consult.
    pub fn from_graph(graph: &SceneGraph) -> Self {
        let floors = graph.floors.values().map(|f| (f.id.clone(), f.name.clone())).collect();
        let rooms = graph
            .rooms
            .values()
            .map(|r| (r.id.clone(), RoomTruth { name: r.name.clone(), floor_id: r.floor_id.clone() }))
            .collect();
        let objects = graph
            .objects
            .values()
            .map(|o| {
                let small = o.aabb.max_edge() <= 0.3;
                (o.id.clone(), ObjectTruth { category: o.label.clone(), room_id: o.room_id.clone(), small })
            })
            .collect();
        let views = graph
            .views
            .values()
            .map(|v| {
                let visible = v
                    .visible_object_ids
                    .iter()
                    .filter_map(|o| graph.objects.get(o).and_then(|obj| obj.visibility.get(&v.id)).map(|d| (o.clone(), *d)))
                    .collect();
                (
                    v.id.clone(),
                    ViewTruth {
                        image_ref: v.image_handle().to_owned(),
                        room_id: v.room_id.clone(),
                        caption: v.caption.clone(),
                        visible,
                        embedding: v.embedding.clone(),
                    },
                )
            })
            .collect();
        Self { floors, rooms, objects, views }
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.objects.values().map(|o| o.category.as_str()).collect()
    }

    pub fn room_names(&self) -> BTreeSet<&str> {
        self.rooms.values().map(|r| r.name.as_str()).collect()
    }

    /// Category named by a phrase (longest whole-token match).
    pub fn category_of(&self, phrase: &str) -> Option<String> {
        let tokens = tokenize(phrase);
        best_term(&tokens, self.categories()).map(|m| m.term.to_owned())
    }

    pub fn view_by_image(&self, image_ref: &str) -> Option<(&ViewId, &ViewTruth)> {
        self.views.iter().find(|(_, v)| v.image_ref == image_ref)
    }

    /// Smallest depth at which `category` appears in the view, if at all.
    pub fn category_depth(&self, view: &ViewTruth, category: &str) -> Option<f64> {
        view.visible
            .iter()
            .filter(|(o, _)| self.objects.get(*o).is_some_and(|t| t.category == category))
            .map(|(_, d)| *d)
            .min_by(f64::total_cmp)
    }
}
