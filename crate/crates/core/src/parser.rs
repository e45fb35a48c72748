//! Instruction parsing into floor / room / object components.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::model::SceneGraph;
use crate::prompts::{self, ParseContext};
use crate::providers::{ProviderError, TextReasoner};
use crate::vocab::{is_stopword, tokenize};

/// Reformat requests after the first unreadable reply.
pub const REFORMAT_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    pub object_phrase: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub raw: String,
    #[serde(default)]
    pub inferred: bool,
}

impl StructuredQuery {
    /// Text embedded for view/object matching: the object phrase followed by
    /// the attributes.
    pub fn search_text(&self) -> String {
        std::iter::once(self.object_phrase.as_str())
            .chain(self.attributes.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("empty instruction")]
    EmptyInstruction,
    #[error("reasoner reply unreadable after {attempts} attempt(s)")]
    Unparseable { attempts: u32 },
    #[error("instruction names no target object")]
    EmptyObject,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Floor names, room names and object labels of a graph, for the prompt.
pub fn parse_context(graph: &SceneGraph) -> ParseContext {
    let floors: BTreeSet<&str> = graph.floors.values().map(|f| f.name.as_str()).collect();
    let rooms: BTreeSet<&str> = graph.rooms.values().map(|r| r.name.as_str()).collect();
    let objects: BTreeSet<&str> = graph.objects.values().map(|o| o.label.as_str()).collect();
    let owned = |s: BTreeSet<&str>| s.into_iter().map(str::to_owned).collect();
    ParseContext { floors: owned(floors), rooms: owned(rooms), objects: owned(objects) }
}

fn clean(field: Option<String>) -> Option<String> {
    field
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty() && s != "null" && s != "none")
}

/// Asks the reasoner for a structured decomposition, with up to
/// [`REFORMAT_RETRIES`] reformat requests.
pub fn parse_instruction(
    text: &str,
    reasoner: &dyn TextReasoner,
    ctx: &ParseContext,
) -> Result<StructuredQuery, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInstruction);
    }
    let mut reply = reasoner.ask_text(&prompts::parse_prompt(text, ctx))?;
    for attempt in 0..=REFORMAT_RETRIES {
        if let Some(doc) = prompts::parse_reply(&reply) {
            let object_phrase = doc.object.trim().to_lowercase();
            if object_phrase.is_empty() {
                return Err(ParseError::EmptyObject);
            }
            return Ok(StructuredQuery {
                floor: clean(doc.floor),
                room: clean(doc.room),
                object_phrase,
                attributes: doc.attributes.into_iter().map(|a| a.trim().to_lowercase()).filter(|a| !a.is_empty()).collect(),
                raw: text.to_owned(),
                inferred: doc.inferred,
            });
        }
        if attempt < REFORMAT_RETRIES {
            debug!(attempt, "unreadable parse reply; asking to reformat");
            reply = reasoner.ask_text(&prompts::reformat_prompt(text, ctx, &reply))?;
        }
    }
    Err(ParseError::Unparseable { attempts: 1 + REFORMAT_RETRIES })
}

const LEAD_WORDS: &[&str] = &[
    "go", "to", "the", "a", "an", "take", "me", "find", "where", "is", "are", "navigate", "please", "bring", "show",
    "walk", "head", "can", "could", "you", "i", "want", "need", "get", "let's", "lets", "us", "toward", "towards", "my",
];

/// Pattern parser: `[verb phrase] <object> [in the <room> [on the <floor>]]`.
pub fn rule_based_parse(text: &str) -> Result<StructuredQuery, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInstruction);
    }
    let tokens = tokenize(text);
    let start = tokens.iter().position(|t| !LEAD_WORDS.contains(&t.as_str())).unwrap_or(tokens.len());
    let rest = &tokens[start..];
    let split_at = |words: &[String], marker: &str| {
        words.iter().position(|t| t == marker).map(|i| {
            let skip = if words.get(i + 1).is_some_and(|t| t == "the") { 2 } else { 1 };
            (words[..i].to_vec(), words[(i + skip).min(words.len())..].to_vec())
        })
    };
    let (object, location) = split_at(rest, "in").unwrap_or((rest.to_vec(), Vec::new()));
    let (object, floor_first) = split_at(&object, "on").unwrap_or((object, Vec::new()));
    let (room, floor) = split_at(&location, "on").unwrap_or((location, floor_first));
    let phrase = |words: &[String]| {
        let kept: Vec<&str> = words.iter().map(String::as_str).skip_while(|t| is_stopword(t)).collect();
        let s = kept.join(" ");
        (!s.is_empty()).then_some(s)
    };
    let object_phrase = phrase(&object).ok_or(ParseError::EmptyObject)?;
    Ok(StructuredQuery {
        floor: phrase(&floor),
        room: phrase(&room),
        object_phrase,
        attributes: Vec::new(),
        raw: text.to_owned(),
        inferred: false,
    })
}
