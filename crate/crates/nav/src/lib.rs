//! Command-line front end and HTTP query service over a single scene graph.

pub mod cli;
pub mod service;
