//! Reasoner-checked refinement of a fast match, and the full query pipeline.
//!
//! The fast result is accepted when the image reasoner confirms the target in
//! the top object's best view. Otherwise the text reasoner picks a view from
//! the captions of the views fast matching did not rank, the image reasoner
//! chooses between that view and the top fast view, and the object is
//! re-ranked among the chosen view's visible objects.
//!
//! Reasoner failures never abort a query: each step falls back toward the fast
//! result and records the fallback in the trace.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::fast::{fast_match, rank_objects, rank_views, FastMatchResult, FastOptions, MatchError};
use crate::geometry::Point3;
use crate::ids::{ObjectId, RoomId, ViewId};
use crate::model::{Embedding, SceneGraph};
use crate::parser::{parse_context, parse_instruction, rule_based_parse, ParseError, StructuredQuery};
use crate::prompts::{self, Choice};
use crate::providers::{Counted, ImageReasoner, ProviderSuite, TextReasoner};

/// Re-asks after an unreadable reply in each reasoning step.
pub const STEP_RETRIES: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    pub decision: String,
}

impl TraceStep {
    fn new(step: &str, input: impl Into<String>, reply: Option<String>, decision: impl Into<String>) -> Self {
        Self { step: step.to_owned(), input: input.into(), reply, decision: decision.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_id: Option<RoomId>,
    pub scoped: bool,
    pub top_view: ViewId,
    pub top_object: ObjectId,
    pub views: Vec<ViewId>,
    pub objects: Vec<ObjectId>,
}

impl From<&FastMatchResult> for FastSummary {
    fn from(fm: &FastMatchResult) -> Self {
        Self {
            room_id: fm.room.as_ref().map(|r| r.id.clone()),
            scoped: fm.scoped,
            top_view: fm.top_view().clone(),
            top_object: fm.top_object().clone(),
            views: fm.views.iter().map(|s| s.id.clone()).collect(),
            objects: fm.objects.iter().map(|s| s.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavGoal {
    pub instruction: String,
    pub query: StructuredQuery,
    pub view_id: ViewId,
    pub object_id: ObjectId,
    /// Object centroid, meters.
    pub position: Point3,
    pub room_id: RoomId,
    pub mode: Mode,
    pub fast: FastSummary,
    pub trace: Vec<TraceStep>,
    pub reasoner_calls: u32,
    /// Wall-clock seconds; only recorded on request so documents stay
    /// reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("instruction parsing failed: {0}")]
    Parse(#[from] ParseError),
    #[error("fast matching failed: {0}")]
    Match(#[from] MatchError),
    #[error("goal view `{0}` has no visible objects")]
    EmptyGoalView(ViewId),
}

/// A failed query with the trace up to the failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{source}")]
pub struct FsrError {
    pub source: PipelineError,
    pub trace: Vec<TraceStep>,
    pub reasoner_calls: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FsrOptions {
    pub fast: FastOptions,
    /// Skip verification and always return the fast result.
    pub fast_only: bool,
    pub record_timing: bool,
}

fn ask_text_with_retry<T>(
    reasoner: &dyn TextReasoner,
    prompt: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> (Option<T>, Vec<String>) {
    let mut replies = Vec::new();
    for _ in 0..=STEP_RETRIES {
        match reasoner.ask_text(prompt) {
            Ok(reply) => {
                let parsed = parse(&reply);
                replies.push(reply);
                if parsed.is_some() {
                    return (parsed, replies);
                }
            }
            Err(e) => replies.push(format!("<provider error: {e}>")),
        }
    }
    (None, replies)
}

fn ask_image_with_retry<T>(
    reasoner: &dyn ImageReasoner,
    prompt: &str,
    images: &[&str],
    parse: impl Fn(&str) -> Option<T>,
) -> (Option<T>, Vec<String>) {
    let mut replies = Vec::new();
    for _ in 0..=STEP_RETRIES {
        match reasoner.ask_image(prompt, images) {
            Ok(reply) => {
                let parsed = parse(&reply);
                replies.push(reply);
                if parsed.is_some() {
                    return (parsed, replies);
                }
            }
            Err(e) => replies.push(format!("<provider error: {e}>")),
        }
    }
    (None, replies)
}

fn joined(replies: Vec<String>) -> Option<String> {
    (!replies.is_empty()).then(|| replies.join(" | "))
}

/// Presence check of the query phrase in the top object's best view.
/// Unreadable replies count as "no".
pub fn verify_object(
    fm: &FastMatchResult,
    q: &StructuredQuery,
    graph: &SceneGraph,
    reasoner: &dyn ImageReasoner,
) -> (bool, TraceStep) {
    let top = fm.top_object();
    let view = &graph.views[&graph.objects[top].best_view_id];
    let prompt = prompts::presence_prompt(&q.search_text());
    let (answer, replies) = ask_image_with_retry(reasoner, &prompt, &[view.image_handle()], prompts::parse_yes_no);
    let input = format!("object `{top}` in best view `{}`", view.id);
    let decision = match answer {
        Some(true) => "present: accept fast result".to_owned(),
        Some(false) => "absent: reason slowly".to_owned(),
        None => {
            warn!(object = %top, "unreadable verification reply; treating as absent");
            "unreadable reply: treated as absent".to_owned()
        }
    };
    (answer.unwrap_or(false), TraceStep::new("verify-object", input, joined(replies), decision))
}

/// Views in the search scope that fast matching did not rank.
pub fn unmatched_views(fm: &FastMatchResult, graph: &SceneGraph) -> Vec<ViewId> {
    let scope = fm.room.as_ref().map(|r| &r.id).filter(|_| fm.scoped);
    graph
        .views
        .values()
        .filter(|v| scope.is_none_or(|r| &v.room_id == r))
        .filter(|v| fm.views.iter().all(|s| s.id != v.id))
        .map(|v| v.id.clone())
        .collect()
}

/// Caption-based choice among `unmatched` views. Falls back to the unmatched
/// view most similar to the query embedding when the reply names no listed
/// view.
pub fn select_view_by_captions(
    q: &StructuredQuery,
    query_embedding: &Embedding,
    unmatched: &[ViewId],
    graph: &SceneGraph,
    reasoner: &dyn TextReasoner,
) -> Result<(ViewId, TraceStep), MatchError> {
    match unmatched {
        [] => Err(MatchError::EmptySearchSpace { layer: "view", scope: None }),
        [only] => Ok((only.clone(), TraceStep::new("select-view", "1 unmatched view", None, format!("only candidate `{only}`")))),
        _ => {
            let listed: Vec<(&ViewId, &str)> =
                unmatched.iter().map(|v| (v, graph.views[v].caption.as_str())).collect();
            let ids: Vec<&ViewId> = unmatched.iter().collect();
            let prompt = prompts::select_view_prompt(&q.search_text(), &listed);
            let (choice, replies) =
                ask_text_with_retry(reasoner, &prompt, |r| prompts::parse_view_choice(r, &ids).cloned());
            let input = format!("{} unmatched views", unmatched.len());
            match choice {
                Some(v) => {
                    let decision = format!("reasoner chose `{v}`");
                    Ok((v, TraceStep::new("select-view", input, joined(replies), decision)))
                }
                None => {
                    let best = unmatched_fallback(query_embedding, unmatched, graph)?;
                    warn!(view = %best, "caption selection unreadable; using best-scoring unmatched view");
                    let decision = format!("unreadable reply: best-scoring unmatched view `{best}`");
                    Ok((best, TraceStep::new("select-view", input, joined(replies), decision)))
                }
            }
        }
    }
}

fn unmatched_fallback(query: &Embedding, unmatched: &[ViewId], graph: &SceneGraph) -> Result<ViewId, MatchError> {
    let ranked = rank_views(query, graph, None)?;
    ranked
        .into_iter()
        .find(|s| unmatched.contains(&s.id))
        .map(|s| s.id)
        .ok_or(MatchError::EmptySearchSpace { layer: "view", scope: None })
}

/// Forced choice between the fast view (image A) and `view_1` (image B).
pub fn compare_views(
    q: &StructuredQuery,
    view_fast: &ViewId,
    view_1: &ViewId,
    graph: &SceneGraph,
    reasoner: &dyn ImageReasoner,
) -> (ViewId, Option<TraceStep>) {
    if view_fast == view_1 {
        return (view_fast.clone(), None);
    }
    let images = [graph.views[view_fast].image_handle(), graph.views[view_1].image_handle()];
    let prompt = prompts::compare_prompt(&q.search_text());
    let (choice, replies) = ask_image_with_retry(reasoner, &prompt, &images, prompts::parse_choice);
    let input = format!("A = `{view_fast}`, B = `{view_1}`");
    let (picked, decision) = match choice {
        Some(Choice::A) => (view_fast.clone(), format!("chose fast view `{view_fast}`")),
        Some(Choice::B) => (view_1.clone(), format!("chose caption view `{view_1}`")),
        None => {
            warn!("unreadable comparison reply; keeping the fast view");
            (view_fast.clone(), format!("unreadable reply: keep fast view `{view_fast}`"))
        }
    };
    (picked, Some(TraceStep::new("compare-views", input, joined(replies), decision)))
}

/// Most query-similar object among those visible in `view`.
pub fn refine_object(view: &ViewId, query_embedding: &Embedding, graph: &SceneGraph) -> Result<ObjectId, PipelineError> {
    let visible = &graph.views[view].visible_object_ids;
    if visible.is_empty() {
        return Err(PipelineError::EmptyGoalView(view.clone()));
    }
    let ranked = rank_objects(query_embedding, graph, visible.iter(), None)?;
    Ok(ranked[0].id.clone())
}

struct Run<'a> {
    graph: &'a SceneGraph,
    providers: &'a ProviderSuite,
    calls: AtomicU32,
    trace: Vec<TraceStep>,
}

impl Run<'_> {
    fn fail(self, source: impl Into<PipelineError>) -> FsrError {
        FsrError { source: source.into(), trace: self.trace, reasoner_calls: self.calls.load(Ordering::Relaxed) }
    }

    fn parse(&mut self, text: &str) -> Result<StructuredQuery, PipelineError> {
        let text_reasoner = Counted::new(self.providers.text_reasoner.as_ref(), &self.calls);
        let ctx = parse_context(self.graph);
        match parse_instruction(text, &text_reasoner, &ctx) {
            Ok(q) => {
                self.trace.push(TraceStep::new("parse-instruction", text, None, describe_query(&q)));
                Ok(q)
            }
            Err(e @ (ParseError::Unparseable { .. } | ParseError::Provider(_))) => {
                let q = rule_based_parse(text)?;
                let decision = format!("{e}; rule-based parse: {}", describe_query(&q));
                self.trace.push(TraceStep::new("parse-instruction", text, None, decision));
                Ok(q)
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn describe_query(q: &StructuredQuery) -> String {
    let mut parts = vec![format!("object `{}`", q.object_phrase)];
    if let Some(r) = &q.room {
        parts.push(format!("room `{r}`"));
    }
    if let Some(f) = &q.floor {
        parts.push(format!("floor `{f}`"));
    }
    if q.inferred {
        parts.push("inferred".into());
    }
    parts.join(", ")
}

#[allow(clippy::too_many_arguments)]
fn goal(
    run: Run<'_>,
    text: &str,
    q: StructuredQuery,
    fm: &FastMatchResult,
    view_id: ViewId,
    object_id: ObjectId,
    mode: Mode,
    started: Instant,
    options: &FsrOptions,
) -> NavGoal {
    let obj = &run.graph.objects[&object_id];
    NavGoal {
        instruction: text.to_owned(),
        query: q,
        position: obj.centroid,
        room_id: obj.room_id.clone(),
        view_id,
        object_id,
        mode,
        fast: FastSummary::from(fm),
        reasoner_calls: run.calls.load(Ordering::Relaxed),
        trace: run.trace,
        elapsed_s: options.record_timing.then(|| started.elapsed().as_secs_f64()),
    }
}

/// Parses, fast-matches, verifies and, when verification fails, reasons
/// slowly. Returns the fast match alongside the goal.
pub fn fsr_query_detailed(
    text: &str,
    graph: &SceneGraph,
    providers: &ProviderSuite,
    options: &FsrOptions,
) -> Result<(NavGoal, FastMatchResult), FsrError> {
    let started = Instant::now();
    let mut run = Run { graph, providers, calls: AtomicU32::new(0), trace: Vec::new() };

    let q = match run.parse(text) {
        Ok(q) => q,
        Err(e) => return Err(run.fail(e)),
    };
    let fm = match fast_match(&q, graph, providers, &options.fast) {
        Ok(fm) => fm,
        Err(e) => return Err(run.fail(e)),
    };
    let top = fm.top_object().clone();
    let top_best = graph.objects[&top].best_view_id.clone();
    run.trace.push(TraceStep::new(
        "fast-match",
        fm.query_text.clone(),
        None,
        format!(
            "room {}, top view `{}`, top object `{top}`",
            fm.room.as_ref().map(|r| format!("`{}`", r.id)).unwrap_or_else(|| "unscoped".into()),
            fm.top_view()
        ),
    ));

    if options.fast_only {
        return Ok((goal(run, text, q, &fm, top_best, top, Mode::Fast, started, options), fm));
    }

    let image_reasoner = Counted::new(providers.image_reasoner.as_ref(), &run.calls);
    let (verified, step) = verify_object(&fm, &q, graph, &image_reasoner);
    run.trace.push(step);
    if verified {
        return Ok((goal(run, text, q, &fm, top_best, top, Mode::Fast, started, options), fm));
    }

    // slow path
    let view_fast = fm.top_view().clone();
    let unmatched = unmatched_views(&fm, graph);
    let view_1 = if unmatched.is_empty() {
        run.trace.push(TraceStep::new("select-view", "0 unmatched views", None, format!("keep fast view `{view_fast}`")));
        view_fast.clone()
    } else {
        let text_reasoner = Counted::new(providers.text_reasoner.as_ref(), &run.calls);
        match select_view_by_captions(&q, &fm.query_embedding, &unmatched, graph, &text_reasoner) {
            Ok((v, step)) => {
                run.trace.push(step);
                v
            }
            Err(e) => return Err(run.fail(e)),
        }
    };
    let (goal_view, step) = compare_views(&q, &view_fast, &view_1, graph, &image_reasoner);
    run.trace.extend(step);

    let other = if goal_view == view_fast { &view_1 } else { &view_fast };
    let refined = match refine_object(&goal_view, &fm.query_embedding, graph) {
        Ok(o) => Some((goal_view.clone(), o)),
        Err(PipelineError::EmptyGoalView(_)) => {
            debug!(view = %goal_view, "goal view has no objects; trying the other candidate");
            refine_object(other, &fm.query_embedding, graph).ok().map(|o| (other.clone(), o))
        }
        Err(e) => return Err(run.fail(e)),
    };
    let (view_id, object_id) = match refined {
        Some((v, o)) => {
            run.trace.push(TraceStep::new("refine-object", format!("view `{v}`"), None, format!("object `{o}`")));
            (v, o)
        }
        None => {
            run.trace.push(TraceStep::new(
                "refine-object",
                format!("views `{goal_view}`, `{other}`"),
                None,
                format!("no visible objects: fall back to fast object `{top}`"),
            ));
            (top_best, top)
        }
    };
    Ok((goal(run, text, q, &fm, view_id, object_id, Mode::Slow, started, options), fm))
}

pub fn fsr_query(
    text: &str,
    graph: &SceneGraph,
    providers: &ProviderSuite,
    options: &FsrOptions,
) -> Result<NavGoal, FsrError> {
    fsr_query_detailed(text, graph, providers, options).map(|(g, _)| g)
}
