//! JSON persistence of scene graphs.
//!
//! Floats are written as shortest round-trip decimal and parsed with exact
//! rounding, so a save/load cycle is bit-exact.

use std::io::{Read, Write};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::{validate, SceneGraph, ValidationReport};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("malformed graph document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported graph version `{found}` (expected `{FORMAT_VERSION}`)")]
    VersionMismatch { found: String },
    #[error("graph failed validation: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    version: &'a str,
    #[serde(flatten)]
    graph: &'a SceneGraph,
}

/// Validated, pretty-printed document.
pub fn to_json_string(graph: &SceneGraph) -> Result<String, PersistError> {
    let report = validate(graph);
    if !report.is_valid() {
        return Err(PersistError::Invalid(report));
    }
    let mut out = serde_json::to_string_pretty(&DocumentOut { version: FORMAT_VERSION, graph })?;
    out.push('\n');
    Ok(out)
}

pub fn save<W: Write>(graph: &SceneGraph, mut sink: W) -> Result<(), PersistError> {
    let doc = to_json_string(graph)?;
    sink.write_all(doc.as_bytes())?;
    sink.flush()?;
    Ok(())
}

/// Parses and version-checks a document without validating it.
pub fn load_unchecked<R: Read>(mut source: R) -> Result<SceneGraph, PersistError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut value: Value = serde_json::from_str(&text)?;
    let version = match value.as_object_mut().and_then(|m| m.remove("version")) {
        Some(Value::String(v)) => v,
        Some(other) => return Err(PersistError::VersionMismatch { found: other.to_string() }),
        None => return Err(PersistError::VersionMismatch { found: String::new() }),
    };
    if version != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch { found: version });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load<R: Read>(source: R) -> Result<SceneGraph, PersistError> {
    let graph = load_unchecked(source)?;
    let report = validate(&graph);
    if !report.is_valid() {
        return Err(PersistError::Invalid(report));
    }
    Ok(graph)
}
