//! Structural invariant checks. Violations are reported as data; validation
//! itself never fails.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{select_best_view, Embedding, SceneGraph};
use crate::geometry::{distance3, is_simple_polygon};

/// Quaternion norms must lie within this of 1.
pub const QUATERNION_TOL: f64 = 1e-6;
/// Stored edge lengths must match endpoint distance within this, meters.
pub const EDGE_LENGTH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Floor,
    Room,
    View,
    Object,
    Edge,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layer::Floor => "floor",
            Layer::Room => "room",
            Layer::View => "view",
            Layer::Object => "object",
            Layer::Edge => "edge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    EmbeddingDim,
    EmbeddingFinite,
    QuaternionNorm,
    NonFinitePosition,
    FloorHeights,
    DanglingReference,
    ContainmentBackLink,
    PolygonSimple,
    VisibilitySymmetry,
    AabbOrder,
    CentroidInAabb,
    VisibilityEmpty,
    DepthPositive,
    BestViewMissing,
    BestViewNotMinimal,
    BestViewRoom,
    EdgeSelfLoop,
    EdgeDuplicate,
    EdgeLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: Layer,
    pub id: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}`: {:?}: {}", self.layer, self.id, self.rule, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, layer: Layer, id: impl fmt::Display, rule: Rule, detail: impl Into<String>) {
        self.violations.push(Violation { layer, id: id.to_string(), rule, detail: detail.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} violations", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

fn check_embedding(
    report: &mut ValidationReport,
    layer: Layer,
    id: &str,
    embedding: &Embedding,
    layer_dim: Option<usize>,
) {
    if embedding.dim() == 0 || Some(embedding.dim()) != layer_dim {
        report.push(
            layer,
            id,
            Rule::EmbeddingDim,
            format!("dim {} but layer dim is {:?}", embedding.dim(), layer_dim),
        );
    }
    if !embedding.is_finite() {
        report.push(layer, id, Rule::EmbeddingFinite, "non-finite component");
    }
}

pub fn validate(graph: &SceneGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let dims = graph.embedding_dims;

    for floor in graph.floors.values() {
        if !(floor.z_min.is_finite() && floor.z_max.is_finite() && floor.z_min < floor.z_max) {
            report.push(
                Layer::Floor,
                &floor.id,
                Rule::FloorHeights,
                format!("z_min {} must be below z_max {}", floor.z_min, floor.z_max),
            );
        }
        for room_id in &floor.room_ids {
            match graph.rooms.get(room_id) {
                None => report.push(Layer::Floor, &floor.id, Rule::DanglingReference, format!("room `{room_id}`")),
                Some(room) if room.floor_id != floor.id => report.push(
                    Layer::Floor,
                    &floor.id,
                    Rule::ContainmentBackLink,
                    format!("room `{room_id}` belongs to floor `{}`", room.floor_id),
                ),
                Some(_) => {}
            }
        }
    }

    for room in graph.rooms.values() {
        match graph.floors.get(&room.floor_id) {
            None => report.push(Layer::Room, &room.id, Rule::DanglingReference, format!("floor `{}`", room.floor_id)),
            Some(floor) if !floor.room_ids.contains(&room.id) => report.push(
                Layer::Room,
                &room.id,
                Rule::ContainmentBackLink,
                format!("floor `{}` does not list this room", room.floor_id),
            ),
            Some(_) => {}
        }
        if !is_simple_polygon(&room.polygon) {
            report.push(Layer::Room, &room.id, Rule::PolygonSimple, "polygon must be simple with positive area");
        }
        check_embedding(&mut report, Layer::Room, room.id.as_str(), &room.embedding, dims.room);
        for view_id in &room.view_ids {
            match graph.views.get(view_id) {
                None => report.push(Layer::Room, &room.id, Rule::DanglingReference, format!("view `{view_id}`")),
                Some(view) if view.room_id != room.id => report.push(
                    Layer::Room,
                    &room.id,
                    Rule::ContainmentBackLink,
                    format!("view `{view_id}` belongs to room `{}`", view.room_id),
                ),
                Some(_) => {}
            }
        }
        for object_id in &room.object_ids {
            match graph.objects.get(object_id) {
                None => report.push(Layer::Room, &room.id, Rule::DanglingReference, format!("object `{object_id}`")),
                Some(object) if object.room_id != room.id => report.push(
                    Layer::Room,
                    &room.id,
                    Rule::ContainmentBackLink,
                    format!("object `{object_id}` belongs to room `{}`", object.room_id),
                ),
                Some(_) => {}
            }
        }
    }

    for view in graph.views.values() {
        match graph.rooms.get(&view.room_id) {
            None => report.push(Layer::View, &view.id, Rule::DanglingReference, format!("room `{}`", view.room_id)),
            Some(room) if !room.view_ids.contains(&view.id) => report.push(
                Layer::View,
                &view.id,
                Rule::ContainmentBackLink,
                format!("room `{}` does not list this view", view.room_id),
            ),
            Some(_) => {}
        }
        if (view.pose.quaternion_norm() - 1.0).abs() > QUATERNION_TOL {
            report.push(
                Layer::View,
                &view.id,
                Rule::QuaternionNorm,
                format!("quaternion norm {}", view.pose.quaternion_norm()),
            );
        }
        if !view.pose.position.iter().all(|c| c.is_finite()) {
            report.push(Layer::View, &view.id, Rule::NonFinitePosition, "pose position");
        }
        check_embedding(&mut report, Layer::View, view.id.as_str(), &view.embedding, dims.view);
        for object_id in &view.visible_object_ids {
            match graph.objects.get(object_id) {
                None => report.push(Layer::View, &view.id, Rule::DanglingReference, format!("object `{object_id}`")),
                Some(object) if !object.visibility.contains_key(&view.id) => report.push(
                    Layer::View,
                    &view.id,
                    Rule::VisibilitySymmetry,
                    format!("object `{object_id}` does not list this view"),
                ),
                Some(_) => {}
            }
        }
    }

    for object in graph.objects.values() {
        match graph.rooms.get(&object.room_id) {
            None => report.push(
                Layer::Object,
                &object.id,
                Rule::DanglingReference,
                format!("room `{}`", object.room_id),
            ),
            Some(room) if !room.object_ids.contains(&object.id) => report.push(
                Layer::Object,
                &object.id,
                Rule::ContainmentBackLink,
                format!("room `{}` does not list this object", object.room_id),
            ),
            Some(_) => {}
        }
        let finite_box = object.aabb.min.iter().chain(object.aabb.max.iter()).all(|c| c.is_finite());
        if !finite_box || !object.aabb.is_ordered() {
            report.push(Layer::Object, &object.id, Rule::AabbOrder, "aabb min must not exceed max");
        } else if !object.aabb.contains(&object.centroid) {
            report.push(Layer::Object, &object.id, Rule::CentroidInAabb, "centroid outside aabb");
        }
        check_embedding(&mut report, Layer::Object, object.id.as_str(), &object.embedding, dims.object);
        if object.visibility.is_empty() {
            report.push(Layer::Object, &object.id, Rule::VisibilityEmpty, "no observing view");
        }
        for (view_id, depth) in &object.visibility {
            if !(depth.is_finite() && *depth > 0.0) {
                report.push(
                    Layer::Object,
                    &object.id,
                    Rule::DepthPositive,
                    format!("depth {depth} from view `{view_id}`"),
                );
            }
            match graph.views.get(view_id) {
                None => report.push(Layer::Object, &object.id, Rule::DanglingReference, format!("view `{view_id}`")),
                Some(view) if !view.visible_object_ids.contains(&object.id) => report.push(
                    Layer::Object,
                    &object.id,
                    Rule::VisibilitySymmetry,
                    format!("view `{view_id}` does not list this object"),
                ),
                Some(_) => {}
            }
        }
        if !object.visibility.contains_key(&object.best_view_id) {
            report.push(
                Layer::Object,
                &object.id,
                Rule::BestViewMissing,
                format!("best view `{}` not among observing views", object.best_view_id),
            );
        } else {
            let expected = select_best_view(object.visibility.iter().map(|(v, d)| (v, *d)));
            if expected.as_ref() != Some(&object.best_view_id) {
                report.push(
                    Layer::Object,
                    &object.id,
                    Rule::BestViewNotMinimal,
                    format!("best view `{}`, minimum-depth view is {:?}", object.best_view_id, expected),
                );
            }
            if let Some(view) = graph.views.get(&object.best_view_id) {
                if view.room_id != object.room_id {
                    report.push(
                        Layer::Object,
                        &object.id,
                        Rule::BestViewRoom,
                        format!("best view `{}` lies in room `{}`", view.id, view.room_id),
                    );
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    for edge in &graph.view_edges {
        let label = format!("{}~{}", edge.a, edge.b);
        if edge.a == edge.b {
            report.push(Layer::Edge, &label, Rule::EdgeSelfLoop, "edge endpoints are equal");
            continue;
        }
        let key = if edge.a < edge.b { (&edge.a, &edge.b) } else { (&edge.b, &edge.a) };
        if !seen.insert(key) {
            report.push(Layer::Edge, &label, Rule::EdgeDuplicate, "more than one edge for this pair");
        }
        match (graph.views.get(&edge.a), graph.views.get(&edge.b)) {
            (Some(a), Some(b)) => {
                let expected = distance3(a.position(), b.position());
                if !(edge.length > 0.0 && (edge.length - expected).abs() <= EDGE_LENGTH_TOL) {
                    report.push(
                        Layer::Edge,
                        &label,
                        Rule::EdgeLength,
                        format!("length {} but endpoints are {expected} apart", edge.length),
                    );
                }
            }
            _ => report.push(Layer::Edge, &label, Rule::DanglingReference, "endpoint view missing"),
        }
    }

    report
}
