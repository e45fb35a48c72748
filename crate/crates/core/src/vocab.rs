//! Fixed vocabulary shared by the synthetic scene generator and the offline
//! oracles: room types, object categories and the need→object table used to
//! resolve implicit requests.

/// Room types, in anchor-table order.
pub const ROOM_TYPES: &[&str] = &[
    "office",
    "kitchen",
    "meeting room",
    "lounge",
    "laboratory",
    "storage room",
    "reception",
    "library",
    "classroom",
    "workshop",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryKind {
    /// Appears in several rooms; drives spatial-target instructions.
    Shared,
    /// Box edges at most 0.3 m.
    Small,
    /// Target of a need in [`NEEDS`].
    Need,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Category {
    pub name: &'static str,
    pub kind: CategoryKind,
}

const fn cat(name: &'static str, kind: CategoryKind) -> Category {
    Category { name, kind }
}

/// Object categories, in anchor-table order.
pub const CATEGORIES: &[Category] = &[
    cat("chair", CategoryKind::Shared),
    cat("table", CategoryKind::Shared),
    cat("trash can", CategoryKind::Shared),
    cat("whiteboard", CategoryKind::Shared),
    cat("cabinet", CategoryKind::Shared),
    cat("lamp", CategoryKind::Shared),
    cat("cup", CategoryKind::Small),
    cat("remote control", CategoryKind::Small),
    cat("keyboard", CategoryKind::Small),
    cat("mouse", CategoryKind::Small),
    cat("phone", CategoryKind::Small),
    cat("book", CategoryKind::Small),
    cat("bottle", CategoryKind::Small),
    cat("stapler", CategoryKind::Small),
    cat("glasses", CategoryKind::Small),
    cat("water dispenser", CategoryKind::Need),
    cat("stool", CategoryKind::Need),
    cat("refrigerator", CategoryKind::Need),
    cat("coffee machine", CategoryKind::Need),
    cat("printer", CategoryKind::Need),
    cat("sink", CategoryKind::Need),
    cat("microwave", CategoryKind::Need),
    cat("television", CategoryKind::Need),
    cat("sofa", CategoryKind::Plain),
    cat("bookshelf", CategoryKind::Plain),
    cat("potted plant", CategoryKind::Plain),
    cat("projector", CategoryKind::Plain),
    cat("piano", CategoryKind::Plain),
    cat("fan", CategoryKind::Plain),
    cat("wall clock", CategoryKind::Plain),
    cat("coat rack", CategoryKind::Plain),
    cat("fire extinguisher", CategoryKind::Plain),
    cat("vending machine", CategoryKind::Plain),
    cat("backpack", CategoryKind::Plain),
    cat("monitor", CategoryKind::Plain),
];

/// A user need that implies a target object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Need {
    /// Single-word cues; any one occurring in an instruction selects this need.
    pub cues: &'static [&'static str],
    /// Instruction phrasings used by the generator.
    pub phrasings: &'static [&'static str],
    pub object: &'static str,
}

pub const NEEDS: &[Need] = &[
    Need { cues: &["thirsty", "drink"], phrasings: &["I'm thirsty", "I need a drink of water"], object: "water dispenser" },
    Need { cues: &["tired", "sit"], phrasings: &["I'm tired", "My legs hurt, I want to sit down"], object: "stool" },
    Need { cues: &["hungry", "snack"], phrasings: &["I'm hungry", "I want a cold snack"], object: "refrigerator" },
    Need { cues: &["caffeine", "sleepy"], phrasings: &["I need some caffeine", "I'm sleepy"], object: "coffee machine" },
    Need {
        cues: &["print", "printout"],
        phrasings: &["I need to print a document", "Where can I pick up my printout?"],
        object: "printer",
    },
    Need { cues: &["wash", "dirty"], phrasings: &["I want to wash my hands", "My hands are dirty"], object: "sink" },
    Need { cues: &["heat", "reheat"], phrasings: &["I want to heat up my lunch", "I need to reheat my food"], object: "microwave" },
    Need { cues: &["watch", "bored"], phrasings: &["I want to watch the news", "I'm bored"], object: "television" },
];

pub fn need_for_object(object: &str) -> Option<&'static Need> {
    NEEDS.iter().find(|n| n.object == object)
}

pub fn category(name: &str) -> Option<&'static Category> {
    CATEGORIES.iter().find(|c| c.name == name)
}

/// Full anchor vocabulary: room types then object categories.
pub fn anchor_vocabulary() -> Vec<&'static str> {
    ROOM_TYPES.iter().copied().chain(CATEGORIES.iter().map(|c| c.name)).collect()
}

/// Lower-cased word tokens; apostrophes are kept inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "to", "of", "in", "on", "at", "me", "my", "i", "i'm", "is", "are", "where", "go", "take",
    "find", "please", "can", "could", "you", "some", "and", "with", "for", "near", "by", "it", "this", "that",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// A vocabulary term located in a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermMatch<'a> {
    pub term: &'a str,
    pub start: usize,
    pub len: usize,
}

/// Occurrences of `terms` as whole-token subsequences of `tokens`.
pub fn find_terms<'a, I>(tokens: &[String], terms: I) -> Vec<TermMatch<'a>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = Vec::new();
    for term in terms {
        let term_tokens = tokenize(term);
        if term_tokens.is_empty() || term_tokens.len() > tokens.len() {
            continue;
        }
        for start in 0..=(tokens.len() - term_tokens.len()) {
            if tokens[start..start + term_tokens.len()] == term_tokens[..] {
                out.push(TermMatch { term, start, len: term_tokens.len() });
            }
        }
    }
    out
}

/// Longest matching term; ties go to the rightmost occurrence (the head noun of
/// an English noun phrase comes last).
pub fn best_term<'a, I>(tokens: &[String], terms: I) -> Option<TermMatch<'a>>
where
    I: IntoIterator<Item = &'a str>,
{
    find_terms(tokens, terms).into_iter().max_by(|a, b| a.len.cmp(&b.len).then(a.start.cmp(&b.start)))
}
