//! Prompt construction for the reasoner capabilities and parsing of their
//! replies. Every prompt starts with a `TASK:` header line so that offline
//! oracles can dispatch on it.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::ViewId;

pub const TASK_PARSE: &str = "TASK: parse-instruction";
pub const TASK_REFORMAT: &str = "TASK: reformat-reply";
pub const TASK_SELECT_VIEW: &str = "TASK: select-view";
pub const TASK_NAME_ROOM: &str = "TASK: name-room";
pub const TASK_PRESENCE: &str = "TASK: verify-presence";
pub const TASK_COMPARE: &str = "TASK: compare-views";
pub const TASK_CAPTION: &str = "TASK: caption-view";

/// Field labels shared by prompt writers and readers.
pub const FIELD_INSTRUCTION: &str = "Instruction: ";
pub const FIELD_CANDIDATES: &str = "Candidate objects: ";
pub const FIELD_FLOORS: &str = "Floors: ";
pub const FIELD_ROOMS: &str = "Rooms: ";
pub const FIELD_QUERY: &str = "Query: ";
pub const FIELD_OBJECT: &str = "Object: ";
pub const FIELD_PREVIOUS: &str = "Previous reply: ";

/// Names the scene offers to the instruction parser.
#[derive(Debug, Clone, Default)]
pub struct ParseContext {
    pub floors: Vec<String>,
    pub rooms: Vec<String>,
    pub objects: Vec<String>,
}

pub fn parse_prompt(instruction: &str, ctx: &ParseContext) -> String {
    format!(
        "{TASK_PARSE}\n\
         Decompose the navigation instruction into the floor, the room and the target object.\n\
         If the goal is implicit, infer the single most likely target object from the candidates and set \"inferred\" to true.\n\
         Leave floor or room null when the instruction does not mention them.\n\
         {FIELD_FLOORS}{}\n\
         {FIELD_ROOMS}{}\n\
         {FIELD_CANDIDATES}{}\n\
         {FIELD_INSTRUCTION}{}\n\
         Reply with one ```json fenced block: \
         {{\"floor\": string|null, \"room\": string|null, \"object\": string, \"attributes\": [string], \"inferred\": bool}}",
        ctx.floors.join("; "),
        ctx.rooms.join("; "),
        ctx.objects.join("; "),
        one_line(instruction),
    )
}

pub fn reformat_prompt(instruction: &str, ctx: &ParseContext, previous: &str) -> String {
    format!(
        "{TASK_REFORMAT}\n\
         Your previous reply could not be read. Answer again using exactly the requested format.\n\
         {FIELD_PREVIOUS}{}\n{}",
        one_line(previous),
        parse_prompt(instruction, ctx).trim_start_matches(TASK_PARSE).trim_start(),
    )
}

pub fn select_view_prompt(query: &str, views: &[(&ViewId, &str)]) -> String {
    let mut out = format!(
        "{TASK_SELECT_VIEW}\n\
         Pick the view whose description is most consistent with the query.\n\
         {FIELD_QUERY}{}\nViews:\n",
        one_line(query)
    );
    for (id, caption) in views {
        out.push_str(&format!("- {id}: {}\n", one_line(caption)));
    }
    out.push_str("Reply with exactly one listed view id.");
    out
}

pub fn name_room_prompt(views: &[(&ViewId, &str)]) -> String {
    let mut out = format!("{TASK_NAME_ROOM}\nThese views were captured in one room.\nViews:\n");
    for (id, caption) in views {
        out.push_str(&format!("- {id}: {}\n", one_line(caption)));
    }
    out.push_str("Reply with a short room name only.");
    out
}

pub fn presence_prompt(object: &str) -> String {
    format!(
        "{TASK_PRESENCE}\n{FIELD_OBJECT}{}\nIs this object visible in the image? Answer yes or no.",
        one_line(object)
    )
}

pub fn compare_prompt(object: &str) -> String {
    format!(
        "{TASK_COMPARE}\n{FIELD_OBJECT}{}\n\
         Image A is the first image, image B the second. Which image shows the object better? Answer A or B.",
        one_line(object)
    )
}

pub fn caption_prompt() -> String {
    format!("{TASK_CAPTION}\nDescribe the image in one sentence, naming the visible objects.")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Header line of a prompt.
pub fn task_of(prompt: &str) -> &str {
    prompt.lines().next().unwrap_or("").trim()
}

/// Value of the first `label`-prefixed line.
pub fn field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

/// `(id, caption)` pairs from a `- id: caption` list.
pub fn listed_views(prompt: &str) -> Vec<(String, String)> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .filter_map(|l| l.split_once(": "))
        .map(|(id, caption)| (id.trim().to_owned(), caption.trim().to_owned()))
        .collect()
}

/// Semicolon-separated list field.
pub fn list_field(prompt: &str, label: &str) -> Vec<String> {
    field(prompt, label)
        .map(|v| v.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect())
        .unwrap_or_default()
}

/// Document the parser asks the reasoner for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseReply {
    #[serde(default)]
    pub floor: Option<String>,
    #[serde(default)]
    pub room: Option<String>,
    pub object: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub inferred: bool,
}

impl ParseReply {
    pub fn to_fenced(&self) -> String {
        format!("```json\n{}\n```", serde_json::to_string(self).expect("parse reply serializes"))
    }
}

/// Body of the first fenced block (any info string), or the whole reply if it
/// is itself a JSON object.
pub fn extract_fenced_json(reply: &str) -> Option<Value> {
    if let Some(start) = reply.find("```") {
        let rest = &reply[start + 3..];
        let body_start = rest.find('\n').map(|i| i + 1).unwrap_or(0);
        let rest = &rest[body_start..];
        let end = rest.find("```")?;
        return serde_json::from_str(rest[..end].trim()).ok();
    }
    let trimmed = reply.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).ok();
    }
    None
}

pub fn parse_reply(reply: &str) -> Option<ParseReply> {
    extract_fenced_json(reply).and_then(|v| serde_json::from_value(v).ok())
}

fn first_word(reply: &str) -> String {
    reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

pub fn parse_yes_no(reply: &str) -> Option<bool> {
    match first_word(reply).as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    A,
    B,
}

pub fn parse_choice(reply: &str) -> Option<Choice> {
    let word = first_word(reply);
    let word = word.strip_prefix("image").unwrap_or(&word);
    match word {
        "a" => Some(Choice::A),
        "b" => Some(Choice::B),
        _ => {
            // "Image B" style replies
            let tokens: Vec<String> = reply
                .split_whitespace()
                .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                .collect();
            match tokens.as_slice() {
                [image, letter, ..] if image == "image" && letter == "a" => Some(Choice::A),
                [image, letter, ..] if image == "image" && letter == "b" => Some(Choice::B),
                _ => None,
            }
        }
    }
}

/// The listed id named by a reply: an exact (trimmed) match, or the only
/// listed id that occurs as a word in the reply.
pub fn parse_view_choice<'a>(reply: &str, listed: &[&'a ViewId]) -> Option<&'a ViewId> {
    let trimmed = reply.trim().trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '.');
    if let Some(id) = listed.iter().find(|id| id.as_str() == trimmed) {
        return Some(id);
    }
    let words: Vec<&str> = reply
        .split(|c: char| c.is_whitespace() || c == ',' || c == '`' || c == '"')
        .map(|w| w.trim_end_matches(['.', ':', ';']))
        .collect();
    let mut hits = listed.iter().filter(|id| words.contains(&id.as_str()));
    match (hits.next(), hits.next()) {
        (Some(id), None) => Some(id),
        _ => None,
    }
}
