//! Success rate and retrieval success rate over instruction datasets.
//!
//! RSR@n@k is the fraction of queries with at least one of the top-n
//! predicted positions within k meters of the ground truth; SR is the n = 1,
//! k = 1 cell. Spatial-target queries additionally require a prediction to lie
//! in the instructed room for it to count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{distance3, Point3};
use crate::ids::{ObjectId, RoomId};
use crate::model::SceneGraph;
use crate::providers::ProviderSuite;
use crate::slow::{fsr_query_detailed, FsrOptions, Mode};

pub const RSR_N: [usize; 2] = [1, 5];
pub const RSR_K: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstructionCategory {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "RR")]
    Rr,
    #[serde(rename = "SO")]
    So,
    #[serde(rename = "ST")]
    St,
}

impl InstructionCategory {
    pub const ALL: [InstructionCategory; 4] = [Self::Rf, Self::Rr, Self::So, Self::St];

    pub fn code(self) -> &'static str {
        match self {
            Self::Rf => "RF",
            Self::Rr => "RR",
            Self::So => "SO",
            Self::St => "ST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub text: String,
    pub category: InstructionCategory,
    pub gt_object_id: ObjectId,
    pub gt_position: Point3,
    pub gt_room_id: RoomId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Fast matching with room scoping; ranked objects are the predictions.
    Fast,
    /// Fast matching over the whole graph.
    FastNoSt,
    /// Fast matching plus slow reasoning; one prediction.
    Fsr,
    FsrNoSt,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fast => "fast",
            Self::FastNoSt => "fast-no-st",
            Self::Fsr => "fsr",
            Self::FsrNoSt => "fsr-no-st",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Fast, Self::FastNoSt, Self::Fsr, Self::FsrNoSt].into_iter().find(|p| p.name() == name)
    }

    fn ranked(self) -> bool {
        matches!(self, Self::Fast | Self::FastNoSt)
    }

    fn options(self, base: &FsrOptions) -> FsrOptions {
        let mut o = *base;
        o.fast.room_scoping = matches!(self, Self::Fast | Self::Fsr);
        o.fast_only = self.ranked();
        o
    }
}

/// 1 when any of the first `n` predictions lies within `k` meters.
pub fn rsr(predictions: &[Point3], gt: &Point3, n: usize, k: f64) -> u8 {
    u8::from(predictions.iter().take(n).any(|p| distance3(p, gt) <= k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub object_id: ObjectId,
    pub room_id: RoomId,
    pub position: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    PipelineError,
    WrongRoom,
    WrongObjectRightRoom,
    DistanceExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub text: String,
    pub category: InstructionCategory,
    pub gt_object_id: ObjectId,
    pub predictions: Vec<Prediction>,
    /// `hits[i][j]`: RSR at `RSR_N[i]`, `RSR_K[j]` under the spatial-target rule.
    pub hits: Vec<Vec<u8>>,
    /// Same without the spatial-target rule.
    pub plain_hits: Vec<Vec<u8>>,
    pub latency_s: f64,
    pub reasoner_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// The fast stage's top object is not the ground-truth object.
    pub fast_top1_error: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QueryOutcome {
    pub fn success(&self) -> bool {
        self.hits[0][0] == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instruction: String,
    pub category: InstructionCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    pub reason: FailureReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub queries: usize,
    pub sr: f64,
    /// `rsr[i][j]` at `n = RSR_N[i]`, `k = RSR_K[j]`; `None` where the
    /// pipeline yields fewer than `n` predictions by design.
    pub rsr: Vec<Vec<Option<f64>>>,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p90_latency_s: f64,
    pub mean_reasoner_calls: f64,
    pub fast_path_queries: usize,
    pub slow_path_queries: usize,
    pub mean_calls_fast_path: Option<f64>,
    pub mean_calls_slow_path: Option<f64>,
    pub fast_top1_errors: usize,
    pub pipeline_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pipeline: Pipeline,
    pub rsr_n: Vec<usize>,
    pub rsr_k: Vec<f64>,
    pub overall: Stats,
    pub per_category: BTreeMap<InstructionCategory, Stats>,
    pub failures: Vec<Failure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<QueryOutcome>,
    pub notes: Vec<String>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn stats(outcomes: &[&QueryOutcome], ranked: bool) -> Stats {
    let count = outcomes.len();
    let rate = |i: usize, j: usize| {
        if count == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| f64::from(o.hits[i][j])).sum::<f64>() / count as f64
        }
    };
    let rsr: Vec<Vec<Option<f64>>> = RSR_N
        .iter()
        .enumerate()
        .map(|(i, &n)| (0..RSR_K.len()).map(|j| (ranked || n == 1).then(|| rate(i, j))).collect())
        .collect();
    let mut latencies: Vec<f64> = outcomes.iter().map(|o| o.latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    let path = |m: Mode| outcomes.iter().filter(move |o| o.mode == Some(m));
    Stats {
        queries: count,
        sr: rsr[0][0].unwrap_or(0.0),
        mean_latency_s: mean(latencies.iter().copied()).unwrap_or(0.0),
        p50_latency_s: percentile(&latencies, 0.5),
        p90_latency_s: percentile(&latencies, 0.9),
        mean_reasoner_calls: mean(outcomes.iter().map(|o| f64::from(o.reasoner_calls))).unwrap_or(0.0),
        fast_path_queries: path(Mode::Fast).count(),
        slow_path_queries: path(Mode::Slow).count(),
        mean_calls_fast_path: mean(path(Mode::Fast).map(|o| f64::from(o.reasoner_calls))),
        mean_calls_slow_path: mean(path(Mode::Slow).map(|o| f64::from(o.reasoner_calls))),
        fast_top1_errors: outcomes.iter().filter(|o| o.fast_top1_error).count(),
        pipeline_errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
        rsr,
    }
}

fn score(predictions: &[Prediction], record: &InstructionRecord, strict: bool) -> Vec<Vec<u8>> {
    let counted: Vec<Point3> = predictions
        .iter()
        .map(|p| {
            if strict && record.category == InstructionCategory::St && p.room_id != record.gt_room_id {
                // a prediction outside the instructed room can never count
                [f64::INFINITY; 3]
            } else {
                p.position
            }
        })
        .collect();
    RSR_N.iter().map(|&n| RSR_K.iter().map(|&k| rsr(&counted, &record.gt_position, n, k)).collect()).collect()
}

fn run_one(
    record: &InstructionRecord,
    graph: &SceneGraph,
    pipeline: Pipeline,
    providers: &ProviderSuite,
    options: &FsrOptions,
) -> QueryOutcome {
    let started = Instant::now();
    let result = fsr_query_detailed(&record.text, graph, providers, options);
    let latency_s = started.elapsed().as_secs_f64();
    let prediction = |id: &ObjectId| {
        let o = &graph.objects[id];
        Prediction { object_id: id.clone(), room_id: o.room_id.clone(), position: o.centroid }
    };
    let (predictions, reasoner_calls, mode, fast_top1_error, error) = match result {
        Ok((goal, fm)) => {
            let predictions: Vec<Prediction> = if pipeline.ranked() {
                fm.objects.iter().map(|s| prediction(&s.id)).collect()
            } else {
                vec![prediction(&goal.object_id)]
            };
            let top1_error = fm.top_object() != &record.gt_object_id;
            (predictions, goal.reasoner_calls, Some(goal.mode), top1_error, None)
        }
        Err(e) => (Vec::new(), e.reasoner_calls, None, true, Some(e.to_string())),
    };
    QueryOutcome {
        text: record.text.clone(),
        category: record.category,
        gt_object_id: record.gt_object_id.clone(),
        hits: score(&predictions, record, true),
        plain_hits: score(&predictions, record, false),
        predictions,
        latency_s,
        reasoner_calls,
        mode,
        fast_top1_error,
        error,
    }
}

fn failure(outcome: &QueryOutcome, record: &InstructionRecord) -> Option<Failure> {
    if outcome.success() {
        return None;
    }
    let Some(top) = outcome.predictions.first() else {
        return Some(Failure {
            instruction: record.text.clone(),
            category: record.category,
            predicted: None,
            distance: None,
            reason: FailureReason::PipelineError,
            detail: outcome.error.clone(),
        });
    };
    let reason = if top.room_id != record.gt_room_id {
        FailureReason::WrongRoom
    } else if top.object_id != record.gt_object_id {
        FailureReason::WrongObjectRightRoom
    } else {
        FailureReason::DistanceExceeded
    };
    Some(Failure {
        instruction: record.text.clone(),
        category: record.category,
        predicted: Some(top.object_id.clone()),
        distance: Some(distance3(&top.position, &record.gt_position)),
        reason,
        detail: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub fsr: FsrOptions,
    /// Keep per-query outcomes in the report.
    pub keep_outcomes: bool,
}

/// Runs every instruction through `pipeline`. Queries run in parallel; the
/// report does not depend on scheduling.
pub fn evaluate(
    dataset: &[InstructionRecord],
    graph: &SceneGraph,
    pipeline: Pipeline,
    providers: &ProviderSuite,
    options: &EvalOptions,
) -> EvalReport {
    let fsr = pipeline.options(&options.fsr);
    let outcomes: Vec<QueryOutcome> =
        dataset.par_iter().map(|r| run_one(r, graph, pipeline, providers, &fsr)).collect();
    let all: Vec<&QueryOutcome> = outcomes.iter().collect();
    let per_category = InstructionCategory::ALL
        .into_iter()
        .filter_map(|c| {
            let subset: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.category == c).collect();
            (!subset.is_empty()).then(|| (c, stats(&subset, pipeline.ranked())))
        })
        .collect();
    let failures = outcomes.iter().zip(dataset).filter_map(|(o, r)| failure(o, r)).collect();
    let mut notes = Vec::new();
    if !pipeline.ranked() {
        notes.push("single-prediction pipeline: RSR at n=5 is not applicable".to_owned());
    }
    EvalReport {
        pipeline,
        rsr_n: RSR_N.to_vec(),
        rsr_k: RSR_K.to_vec(),
        overall: stats(&all, pipeline.ranked()),
        per_category,
        failures,
        outcomes: if options.keep_outcomes { outcomes } else { Vec::new() },
        notes,
    }
}

/// Aligned text table: one row per category plus the total.
pub fn render_table(report: &EvalReport) -> String {
    let mut header = vec!["category".to_owned(), "queries".to_owned(), "SR".to_owned()];
    for n in &report.rsr_n {
        for k in &report.rsr_k {
            header.push(format!("RSR@{n}@{k}"));
        }
    }
    header.extend(["latency_s".to_owned(), "calls".to_owned()]);
    let row = |name: &str, s: &Stats| {
        let mut cells = vec![name.to_owned(), s.queries.to_string(), format!("{:.3}", s.sr)];
        for r in &s.rsr {
            for v in r {
                cells.push(v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()));
            }
        }
        cells.push(format!("{:.4}", s.mean_latency_s));
        cells.push(format!("{:.2}", s.mean_reasoner_calls));
        cells
    };
    let mut rows = vec![header];
    for (c, s) in &report.per_category {
        rows.push(row(c.code(), s));
    }
    rows.push(row("all", &report.overall));
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = format!("pipeline: {}\n", report.pipeline.name());
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}
