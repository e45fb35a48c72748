//! Hierarchical multi-modal scene graphs for language-driven goal retrieval:
//! graph model and construction, offline and remote model providers, the
//! fast/slow retrieval pipeline, waypoint planning, evaluation and a synthetic
//! scene generator.

pub mod builder;
pub mod eval;
pub mod fast;
pub mod geometry;
pub mod ids;
pub mod model;
pub mod parser;
pub mod planner;
pub mod prompts;
pub mod providers;
pub mod slow;
pub mod synth;
pub mod truth;
pub mod vocab;
