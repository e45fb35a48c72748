//! `hmsg` subcommands.
//!
//! Exit codes: 0 success, 1 unexpected I/O failure, 2 usage, 3 bad input data,
//! 4 provider failure, 5 unreachable goal.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hmsg::builder::{build_graph, BuildError, BuildOptions, LayoutInput, DEFAULT_NEIGHBOR_RADIUS};
use hmsg::eval::{evaluate, render_table, EvalOptions, InstructionRecord, Pipeline};
use hmsg::geometry::Point3;
use hmsg::model::{load, load_unchecked, save, validate, PersistError, SceneGraph};
use hmsg::parser::ParseError;
use hmsg::planner::{plan_from, PlanError};
use hmsg::providers::offline::{AnchorTable, Corruption};
use hmsg::providers::remote::{RemoteConfig, UreqTransport, ENV_OFFLINE};
use hmsg::providers::{ProviderError, ProviderLimits, ProviderSuite};
use hmsg::slow::{fsr_query, FsrError, FsrOptions, PipelineError};
use hmsg::fast::MatchError;
use hmsg::synth::{generate_scene, SynthParams};
use hmsg::truth::GroundTruth;
use serde::Serialize;
use thiserror::Error;
use tracing::info;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    Unreachable(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Io { source, .. } if source.kind() == io::ErrorKind::BrokenPipe)
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Provider(_) => 4,
            CliError::Unreachable(_) => 5,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Provider(p) => p.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Unreachable { .. } => CliError::Unreachable(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FsrError> for CliError {
    fn from(e: FsrError) -> Self {
        match &e.source {
            PipelineError::Parse(ParseError::Provider(_)) | PipelineError::Match(MatchError::Provider(_)) => {
                CliError::Provider(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hmsg", version, about = "Build, query and evaluate hierarchical scene graphs")]
pub struct Cli {
    /// Log verbosity on standard error (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a scene graph from a layout file.
    Build(BuildArgs),
    /// Resolve one instruction to a navigation goal.
    Query(QueryArgs),
    /// Plan a waypoint path to a view.
    Plan(PlanArgs),
    /// Score a pipeline on an instruction dataset.
    Eval(EvalArgs),
    /// Generate a synthetic scene, dataset and ground truth.
    Synth(SynthArgs),
    /// Serve queries over HTTP.
    Serve(ServeArgs),
    /// Check a graph file against the structural invariants.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// Use the deterministic offline oracles (also enabled by HMSG_OFFLINE=1).
    #[arg(long)]
    pub offline: bool,
    /// Ground-truth file backing the offline oracles; derived from the graph
    /// when omitted.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Fraction of offline reasoner answers to corrupt.
    #[arg(long, default_value_t = 0.0, value_name = "RATE")]
    pub error_rate: f64,
    /// Seed of the corruption coin.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-request timeout in seconds for remote providers.
    #[arg(long, default_value_t = 30.0, value_name = "SECS")]
    pub timeout: f64,
    /// Retries per remote request.
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
    /// Concurrent remote requests.
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, value_name = "FILE")]
    pub layout: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NEIGHBOR_RADIUS, value_name = "M")]
    pub neighbor_radius: f64,
    #[arg(long)]
    pub no_sequence_linking: bool,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Record wall-clock time in the goal document.
    #[arg(long)]
    pub timing: bool,
    /// Skip slow reasoning.
    #[arg(long)]
    pub fast_only: bool,
    /// Search the whole graph instead of the room the instruction names.
    #[arg(long)]
    pub no_room_scoping: bool,
    #[arg(long, default_value_t = 5)]
    pub n_views: usize,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    /// Start position `x,y,z` in meters.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub from: Point3,
    #[arg(long, value_name = "VIEW")]
    pub to_view: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// fsr, fsr-no-st, fast or fast-no-st.
    #[arg(long, value_parser = parse_pipeline)]
    pub pipeline: Pipeline,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Include per-query outcomes in the report.
    #[arg(long)]
    pub outcomes: bool,
    #[arg(long, default_value_t = 5)]
    pub n_views: usize,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub floors: usize,
    /// Rooms per floor.
    #[arg(long, default_value_t = 4)]
    pub rooms: usize,
    /// Objects per room.
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    /// Views per room, including the corridor view.
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_view: f64,
    #[arg(long)]
    pub no_corridor: bool,
    /// Comma-separated category pool.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    /// Also build the graph (offline) into `graph.json`.
    #[arg(long)]
    pub build: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = 5)]
    pub n_views: usize,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub graph: PathBuf,
}

pub fn parse_point(s: &str) -> Result<Point3, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z but got `{s}`"));
    }
    let mut p = [0.0; 3];
    for (slot, part) in p.iter_mut().zip(&parts) {
        *slot = part.parse::<f64>().map_err(|e| format!("`{part}`: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("`{part}` is not finite"));
        }
    }
    Ok(p)
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    Pipeline::parse(s).ok_or_else(|| format!("unknown pipeline `{s}` (fsr, fsr-no-st, fast, fast-no-st)"))
}

pub fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).try_init();
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {what} {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{what} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(CliError::io("writing standard output"))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    print_stdout(&text)
}

pub fn load_graph(path: &Path) -> Result<SceneGraph, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("opening graph {}", path.display())))?;
    load(io::BufReader::new(file)).map_err(|e| match e {
        PersistError::Io(source) => CliError::Io { context: format!("reading graph {}", path.display()), source },
        other => CliError::Data(format!("graph {}: {other}", path.display())),
    })
}

fn offline_requested(args: &ProviderArgs) -> bool {
    args.offline || std::env::var(ENV_OFFLINE).is_ok_and(|v| v == "1")
}

/// Provider suite for a command. `graph` supplies ground truth for the
/// offline oracles when no truth file is given.
pub fn providers(args: &ProviderArgs, graph: Option<&SceneGraph>) -> Result<ProviderSuite, CliError> {
    if !(0.0..=1.0).contains(&args.error_rate) {
        return Err(CliError::Usage(format!("--error-rate must be in [0, 1], got {}", args.error_rate)));
    }
    if offline_requested(args) {
        let truth = match (&args.truth, graph) {
            (Some(path), _) => read_json::<GroundTruth>(path, "ground truth")?,
            (None, Some(g)) => GroundTruth::from_graph(g),
            (None, None) => GroundTruth::default(),
        };
        let corruption = Corruption::with_rate(args.error_rate, args.seed);
        return Ok(ProviderSuite::offline(Arc::new(truth), AnchorTable::standard(), corruption));
    }
    if !(args.timeout.is_finite() && args.timeout > 0.0) {
        return Err(CliError::Usage(format!("--timeout must be positive, got {}", args.timeout)));
    }
    let config = RemoteConfig::from_env()?;
    let limits = ProviderLimits {
        max_retries: args.max_retries,
        timeout: std::time::Duration::from_secs_f64(args.timeout),
        max_in_flight: args.max_in_flight.max(1),
    };
    Ok(ProviderSuite::remote(&config, limits, Arc::new(UreqTransport::new())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Plan(a) => plan(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
        Command::Validate(a) => validate_cmd(a),
    }
}

fn build(a: BuildArgs) -> Result<(), CliError> {
    let layout: LayoutInput = read_json(&a.layout, "layout")?;
    let providers = providers(&a.providers, None)?;
    let options = BuildOptions {
        neighbor_radius: a.neighbor_radius,
        sequence_linking: !a.no_sequence_linking,
        // without ground truth the offline oracles cannot caption or name
        offline: offline_requested(&a.providers) && a.providers.truth.is_none(),
    };
    let out = build_graph(&layout, &providers, &options)?;
    write_graph(&a.out, &out.graph)?;
    let s = out.graph.summary();
    info!(events = out.log.len(), "build finished");
    eprintln!(
        "built {} floors, {} rooms, {} views, {} objects, {} edges -> {}",
        s.floors,
        s.rooms,
        s.views,
        s.objects,
        s.view_edges,
        a.out.display()
    );
    Ok(())
}

fn write_graph(path: &Path, graph: &SceneGraph) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
    save(graph, BufWriter::new(file)).map_err(|e| match e {
        PersistError::Io(source) => CliError::Io { context: format!("writing {}", path.display()), source },
        other => CliError::Data(other.to_string()),
    })
}

fn query(a: QueryArgs) -> Result<(), CliError> {
    let graph = load_graph(&a.graph)?;
    let providers = providers(&a.providers, Some(&graph))?;
    let mut options = FsrOptions { fast_only: a.fast_only, record_timing: a.timing, ..Default::default() };
    options.fast.room_scoping = !a.no_room_scoping;
    options.fast.n_views = a.n_views.max(1);
    let goal = fsr_query(&a.text, &graph, &providers, &options)?;
    print_json(&goal)
}

fn plan(a: PlanArgs) -> Result<(), CliError> {
    let graph = load_graph(&a.graph)?;
    let p = plan_from(&a.from, &a.to_view.as_str().into(), &graph)?;
    print_json(&p)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let graph = load_graph(&a.graph)?;
    let dataset: Vec<InstructionRecord> = read_json(&a.dataset, "dataset")?;
    let providers = providers(&a.providers, Some(&graph))?;
    let mut options = EvalOptions { keep_outcomes: a.outcomes, ..Default::default() };
    options.fsr.fast.n_views = a.n_views.max(1);
    let report = evaluate(&dataset, &graph, a.pipeline, &providers, &options);
    write_json(&a.out, &report)?;
    print_stdout(&render_table(&report))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let params = SynthParams {
        n_floors: a.floors,
        n_rooms: a.rooms,
        n_objects_per_room: a.objects,
        n_views_per_room: a.views,
        categories: a.categories,
        sigma: a.sigma,
        sigma_view: a.sigma_view,
        corridor: !a.no_corridor,
    };
    let scene = generate_scene(a.seed, &params).map_err(|e| CliError::Data(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(CliError::io(format!("creating {}", a.out_dir.display())))?;
    write_json(&a.out_dir.join("layout.json"), &scene.layout)?;
    write_json(&a.out_dir.join("dataset.json"), &scene.dataset)?;
    write_json(&a.out_dir.join("truth.json"), &scene.truth)?;
    if a.build {
        let providers = ProviderSuite::offline(Arc::new(scene.truth.clone()), AnchorTable::standard(), Corruption::none());
        let out = build_graph(&scene.layout, &providers, &BuildOptions { offline: true, ..Default::default() })?;
        write_graph(&a.out_dir.join("graph.json"), &out.graph)?;
    }
    eprintln!(
        "wrote {} views, {} objects, {} instructions to {}",
        scene.layout.views.len(),
        scene.layout.objects.len(),
        scene.dataset.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let graph = load_graph(&a.graph)?;
    let providers = providers(&a.providers, Some(&graph))?;
    let mut options = FsrOptions::default();
    options.fast.n_views = a.n_views.max(1);
    let state = crate::service::AppState::new(graph, providers, options);
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("starting runtime"))?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(a.bind).await.map_err(CliError::io(format!("binding {}", a.bind)))?;
        eprintln!("listening on {}", listener.local_addr().map_err(CliError::io("reading bound address"))?);
        axum::serve(listener, crate::service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::io("serving"))
    })
}

fn validate_cmd(a: ValidateArgs) -> Result<(), CliError> {
    let file = File::open(&a.graph).map_err(CliError::io(format!("opening graph {}", a.graph.display())))?;
    let graph = load_unchecked(io::BufReader::new(file)).map_err(|e| CliError::Data(e.to_string()))?;
    let report = validate(&graph);
    print_stdout(&report.to_string())?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} violations in {}", report.len(), a.graph.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("1, -2.5,3"), Ok([1.0, -2.5, 3.0]));
        assert!(parse_point("1,2").is_err());
        assert!(parse_point("1,2,nan").is_err());
        assert!(parse_point("a,b,c").is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Io { context: String::new(), source: io::Error::other("x") }.exit_code(),
            CliError::Usage(String::new()).exit_code(),
            CliError::Data(String::new()).exit_code(),
            CliError::Provider(String::new()).exit_code(),
            CliError::Unreachable(String::new()).exit_code(),
        ];
        let unique: std::collections::BTreeSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), codes.len());
        assert!(!codes.contains(&0));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
