//! Shortest waypoint paths over the view graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance3, Point3};
use crate::ids::ViewId;
use crate::model::{Pose, SceneGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("graph has no views")]
    NoViews,
    #[error("unknown view `{0}`")]
    UnknownView(ViewId),
    #[error(
        "`{to}` is unreachable from `{from}` (components of {from_component} and {to_component} views)"
    )]
    Unreachable { from: ViewId, to: ViewId, from_component: usize, to_component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub from_view: ViewId,
    pub to_view: ViewId,
    /// Total edge length, meters.
    pub cost: f64,
    pub views: Vec<ViewId>,
    pub waypoints: Vec<Pose>,
}

/// Nearest view to `position`; ties go to the smaller id.
pub fn nearest_view(position: &Point3, graph: &SceneGraph) -> Option<ViewId> {
    graph
        .views
        .values()
        .map(|v| (distance3(position, v.position()), &v.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then node index
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Adjacency view of a scene graph's traversal edges.
pub struct ViewGraph<'a> {
    graph: &'a SceneGraph,
    ids: Vec<&'a ViewId>,
    index: BTreeMap<&'a ViewId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// Distances and predecessors from one source.
pub struct ShortestPaths {
    pub source: usize,
    pub dist: Vec<f64>,
    pub prev: Vec<Option<usize>>,
}

impl<'a> ViewGraph<'a> {
    pub fn new(graph: &'a SceneGraph) -> Self {
        let ids: Vec<&ViewId> = graph.views.keys().collect();
        let index: BTreeMap<&ViewId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for e in &graph.view_edges {
            if let (Some(&a), Some(&b)) = (index.get(&e.a), index.get(&e.b)) {
                adjacency[a].push((b, e.length));
                adjacency[b].push((a, e.length));
            }
        }
        Self { graph, ids, index, adjacency }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &ViewId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &ViewId {
        self.ids[index]
    }

    /// Dijkstra from `source`; unreachable nodes have infinite distance.
    pub fn shortest_paths(&self, source: usize) -> ShortestPaths {
        let n = self.ids.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier { cost: 0.0, node: source });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, len) in &self.adjacency[node] {
                let c = cost + len;
                if c < dist[next] {
                    dist[next] = c;
                    prev[next] = Some(node);
                    heap.push(Frontier { cost: c, node: next });
                }
            }
        }
        ShortestPaths { source, dist, prev }
    }

    fn component_size(&self, start: usize) -> usize {
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(n) = stack.pop() {
            count += 1;
            for &(m, _) in &self.adjacency[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        count
    }

    pub fn plan(&self, start: &ViewId, goal: &ViewId) -> Result<Plan, PlanError> {
        let s = self.index_of(start).ok_or_else(|| PlanError::UnknownView(start.clone()))?;
        let g = self.index_of(goal).ok_or_else(|| PlanError::UnknownView(goal.clone()))?;
        let paths = self.shortest_paths(s);
        if !paths.dist[g].is_finite() {
            return Err(PlanError::Unreachable {
                from: start.clone(),
                to: goal.clone(),
                from_component: self.component_size(s),
                to_component: self.component_size(g),
            });
        }
        let mut order = vec![g];
        let mut cur = g;
        while let Some(p) = paths.prev[cur] {
            order.push(p);
            cur = p;
        }
        order.reverse();
        let views: Vec<ViewId> = order.iter().map(|&i| self.ids[i].clone()).collect();
        let waypoints = views.iter().map(|v| self.graph.views[v].pose).collect();
        Ok(Plan { from_view: start.clone(), to_view: goal.clone(), cost: paths.dist[g], views, waypoints })
    }
}

pub fn plan(start: &ViewId, goal: &ViewId, graph: &SceneGraph) -> Result<Plan, PlanError> {
    ViewGraph::new(graph).plan(start, goal)
}

/// Plans from the view nearest to `position`.
pub fn plan_from(position: &Point3, goal: &ViewId, graph: &SceneGraph) -> Result<Plan, PlanError> {
    let start = nearest_view(position, graph).ok_or(PlanError::NoViews)?;
    plan(&start, goal, graph)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::model::{ViewEdge, ViewNode};

    fn graph(points: &[(&str, Point3)], edges: &[(&str, &str)]) -> SceneGraph {
        let mut g = SceneGraph::new();
        for (id, p) in points {
            g.views.insert(
                ViewId::from(*id),
                ViewNode {
                    id: ViewId::from(*id),
                    room_id: "r".into(),
                    pose: Pose::at(*p),
                    embedding: vec![1.0].into(),
                    caption: String::new(),
                    image_ref: None,
                    visible_object_ids: BTreeSet::new(),
                },
            );
        }
        for (a, b) in edges {
            let e = ViewEdge::between(&g.views[&ViewId::from(*a)], &g.views[&ViewId::from(*b)]);
            g.view_edges.push(e);
        }
        g
    }

    #[test]
    fn start_equals_goal() {
        let g = graph(&[("a", [0.0, 0.0, 0.0])], &[]);
        let p = plan(&"a".into(), &"a".into(), &g).unwrap();
        assert_eq!(p.views, vec![ViewId::from("a")]);
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.waypoints.len(), 1);
    }

    #[test]
    fn direct_edge_beats_detour() {
        let g = graph(&[("a", [0.0, 0.0, 0.0]), ("b", [3.0, 0.0, 0.0]), ("c", [3.0, 4.0, 0.0])], &[("a", "b"), ("b", "c"), ("a", "c")]);
        let p = plan(&"a".into(), &"c".into(), &g).unwrap();
        assert_eq!(p.views, vec![ViewId::from("a"), ViewId::from("c")]);
        assert!((p.cost - 5.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_reports_component_sizes() {
        let g = graph(
            &[("a", [0.0, 0.0, 0.0]), ("b", [1.0, 0.0, 0.0]), ("c", [9.0, 0.0, 0.0])],
            &[("a", "b")],
        );
        assert_eq!(
            plan(&"a".into(), &"c".into(), &g),
            Err(PlanError::Unreachable { from: "a".into(), to: "c".into(), from_component: 2, to_component: 1 })
        );
        assert_eq!(plan(&"a".into(), &"zz".into(), &g), Err(PlanError::UnknownView("zz".into())));
    }

    #[test]
    fn nearest_view_ties_to_smaller_id() {
        let g = graph(&[("b", [1.0, 0.0, 0.0]), ("a", [-1.0, 0.0, 0.0])], &[]);
        assert_eq!(nearest_view(&[0.0, 0.0, 0.0], &g), Some(ViewId::from("a")));
        assert_eq!(nearest_view(&[1.0, 0.0, 0.0], &g), Some(ViewId::from("b")));
        assert_eq!(nearest_view(&[0.0; 3], &SceneGraph::new()), None);
    }
}
