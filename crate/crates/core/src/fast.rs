//! Embedding-similarity retrieval over the room, view and object layers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ObjectId, RoomId, ViewId};
use crate::model::{Embedding, SceneGraph};
use crate::parser::StructuredQuery;
use crate::providers::{ProviderError, ProviderSuite, TextEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimMismatch { left: usize, right: usize },
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("no {layer} candidates in {}", scope.as_ref().map(|r| format!("room `{r}`")).unwrap_or_else(|| "the graph".into()))]
    EmptySearchSpace { layer: &'static str, scope: Option<RoomId> },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, MatchError> {
    if a.dim() != b.dim() {
        return Err(MatchError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(MatchError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored<I> {
    pub id: I,
    pub score: f64,
}

/// Sorts by descending score, then ascending id.
fn rank<I: Ord>(mut items: Vec<Scored<I>>) -> Vec<Scored<I>> {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    items
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastMatchResult {
    pub query_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<Scored<RoomId>>,
    pub views: Vec<Scored<ViewId>>,
    pub objects: Vec<Scored<ObjectId>>,
    pub scoped: bool,
    pub query_embedding: Embedding,
}

impl FastMatchResult {
    pub fn top_view(&self) -> &ViewId {
        &self.views[0].id
    }

    pub fn top_object(&self) -> &ObjectId {
        &self.objects[0].id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastOptions {
    pub n_views: usize,
    pub n_objects: usize,
    /// Restrict view/object search to the matched room.
    pub room_scoping: bool,
}

impl Default for FastOptions {
    fn default() -> Self {
        Self { n_views: 5, n_objects: 5, room_scoping: true }
    }
}

/// Best room for `q.room`, searched on the floor named exactly by `q.floor`
/// when there is one, otherwise on all floors.
pub fn match_room(
    q: &StructuredQuery,
    graph: &SceneGraph,
    embedder: &dyn TextEmbedder,
) -> Result<Option<Scored<RoomId>>, MatchError> {
    let Some(room_text) = q.room.as_deref() else { return Ok(None) };
    let floor = q.floor.as_deref().and_then(|f| graph.floor_by_name(f));
    let rooms: Vec<_> =
        graph.rooms.values().filter(|r| floor.is_none_or(|f| f.id == r.floor_id)).collect();
    if rooms.is_empty() {
        return Ok(None);
    }
    let e = embedder.embed_text(room_text)?;
    let scored = rooms
        .into_iter()
        .map(|r| Ok(Scored { id: r.id.clone(), score: cosine(&e, &r.embedding)? }))
        .collect::<Result<Vec<_>, MatchError>>()?;
    Ok(rank(scored).into_iter().next())
}

/// Every view in scope, ranked against an already-embedded query.
pub fn rank_views(
    query: &Embedding,
    graph: &SceneGraph,
    scope: Option<&RoomId>,
) -> Result<Vec<Scored<ViewId>>, MatchError> {
    let scored = graph
        .views
        .values()
        .filter(|v| scope.is_none_or(|r| &v.room_id == r))
        .map(|v| Ok(Scored { id: v.id.clone(), score: cosine(query, &v.embedding)? }))
        .collect::<Result<Vec<_>, MatchError>>()?;
    if scored.is_empty() {
        return Err(MatchError::EmptySearchSpace { layer: "view", scope: scope.cloned() });
    }
    Ok(rank(scored))
}

pub fn rank_objects<'a>(
    query: &Embedding,
    graph: &SceneGraph,
    candidates: impl Iterator<Item = &'a ObjectId>,
    scope: Option<&RoomId>,
) -> Result<Vec<Scored<ObjectId>>, MatchError> {
    let scored = candidates
        .filter_map(|id| graph.objects.get(id))
        .filter(|o| scope.is_none_or(|r| &o.room_id == r))
        .map(|o| Ok(Scored { id: o.id.clone(), score: cosine(query, &o.embedding)? }))
        .collect::<Result<Vec<_>, MatchError>>()?;
    if scored.is_empty() {
        return Err(MatchError::EmptySearchSpace { layer: "object", scope: scope.cloned() });
    }
    Ok(rank(scored))
}

pub fn match_views(
    q: &StructuredQuery,
    graph: &SceneGraph,
    scope: Option<&RoomId>,
    embedder: &dyn TextEmbedder,
    n: usize,
) -> Result<Vec<Scored<ViewId>>, MatchError> {
    let e = embedder.embed_text(&q.search_text())?;
    let mut ranked = rank_views(&e, graph, scope)?;
    ranked.truncate(n.max(1));
    Ok(ranked)
}

pub fn match_objects(
    q: &StructuredQuery,
    graph: &SceneGraph,
    scope: Option<&RoomId>,
    embedder: &dyn TextEmbedder,
    n: usize,
) -> Result<Vec<Scored<ObjectId>>, MatchError> {
    let e = embedder.embed_text(&q.search_text())?;
    let mut ranked = rank_objects(&e, graph, graph.objects.keys(), scope)?;
    ranked.truncate(n.max(1));
    Ok(ranked)
}

/// Room match, then scoped view and object rankings. Embedding calls only.
pub fn fast_match(
    q: &StructuredQuery,
    graph: &SceneGraph,
    providers: &ProviderSuite,
    options: &FastOptions,
) -> Result<FastMatchResult, MatchError> {
    let embedder = providers.text_embedder.as_ref();
    let room = if options.room_scoping { match_room(q, graph, embedder)? } else { None };
    let scope = room.as_ref().map(|r| &r.id);
    let query_text = q.search_text();
    let query_embedding = embedder.embed_text(&query_text)?;
    let mut views = rank_views(&query_embedding, graph, scope)?;
    views.truncate(options.n_views.max(1));
    let mut objects = rank_objects(&query_embedding, graph, graph.objects.keys(), scope)?;
    objects.truncate(options.n_objects.max(1));
    Ok(FastMatchResult { query_text, scoped: room.is_some(), room, views, objects, query_embedding })
}
