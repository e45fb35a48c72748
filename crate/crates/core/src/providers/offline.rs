//! Deterministic offline providers answering from ground truth.
//!
//! Text embeddings come from a fixed table of orthonormal anchor vectors, one
//! per room type and object category; words outside the vocabulary map to
//! hashed pseudo-random unit vectors. Image references are symbolic ids
//! resolved against [`GroundTruth`]. Reasoner answers can be corrupted by a
//! seeded coin keyed on the request, so a given request always gets the same
//! answer.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::{Arc, OnceLock};

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_prompt, ImageEmbedder, ImageReasoner, ProviderError, ProviderLimits, ProviderSuite, TextEmbedder, TextReasoner};
use crate::ids::ViewId;
use crate::model::Embedding;
use crate::prompts::{self, ParseReply};
use crate::truth::GroundTruth;
use crate::vocab::{anchor_vocabulary, best_term, find_terms, is_stopword, tokenize, TermMatch, NEEDS};

pub const ANCHOR_DIM: usize = 64;
pub const ANCHOR_SEED: u64 = 0x05ee_d0a7;
/// Weight of each out-of-vocabulary word added to a known term's anchor.
pub const ATTRIBUTE_WEIGHT: f64 = 0.1;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn hash_parts(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write_u64(p.len() as u64);
        h.write(p);
    }
    mix64(h.finish())
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Unit anchors for the fixed vocabulary.
#[derive(Debug, Clone)]
pub struct AnchorTable {
    dim: usize,
    seed: u64,
    anchors: BTreeMap<&'static str, Vec<f64>>,
}

impl AnchorTable {
    /// Anchors are orthonormal when `dim` is at least the vocabulary size
    /// (Gram-Schmidt over Gaussian draws), otherwise independent random unit
    /// vectors.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "anchor dimension must be positive");
        let vocab = anchor_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vocab.len());
        let orthogonal = dim >= vocab.len();
        for _ in &vocab {
            let mut v = gaussian(&mut rng, dim);
            if orthogonal {
                // two passes for numerical orthogonality
                for _ in 0..2 {
                    for b in &basis {
                        let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                    }
                }
            }
            basis.push(normalize(v));
        }
        Self { dim, seed, anchors: vocab.into_iter().zip(basis).collect() }
    }

    /// The shared table at [`ANCHOR_DIM`] / [`ANCHOR_SEED`].
    pub fn standard() -> Arc<AnchorTable> {
        static TABLE: OnceLock<Arc<AnchorTable>> = OnceLock::new();
        TABLE.get_or_init(|| Arc::new(AnchorTable::new(ANCHOR_DIM, ANCHOR_SEED))).clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.anchors.keys().copied()
    }

    pub fn is_known(&self, term: &str) -> bool {
        self.anchors.contains_key(term)
    }

    /// Pseudo-random unit vector for an arbitrary word.
    pub fn hashed(&self, word: &str) -> Vec<f64> {
        let seed = hash_parts(&[&self.seed.to_le_bytes(), b"word", word.as_bytes()]);
        normalize(gaussian(&mut ChaCha8Rng::seed_from_u64(seed), self.dim))
    }

    /// Anchor of a vocabulary term, or the hashed vector of anything else.
    pub fn anchor(&self, term: &str) -> Embedding {
        match self.anchors.get(term) {
            Some(v) => Embedding::new(v.clone()),
            None => Embedding::new(self.hashed(term)),
        }
    }

    /// `normalize(base + sigma * g)` with `g ~ N(0, I / dim)`.
    pub fn perturb(&self, base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Embedding {
        let scale = sigma / (self.dim as f64).sqrt();
        let noisy = base.iter().map(|b| b + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Embedding::new(normalize(noisy))
    }
}

/// Text embedder over an [`AnchorTable`].
#[derive(Debug, Clone)]
pub struct OfflineTextEmbedder {
    anchors: Arc<AnchorTable>,
}

impl OfflineTextEmbedder {
    pub fn new(anchors: Arc<AnchorTable>) -> Self {
        Self { anchors }
    }
}

impl TextEmbedder for OfflineTextEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let dim = self.anchors.dim();
        let matched = best_term(&tokens, self.anchors.terms());
        let outside = |i: usize| matched.as_ref().is_none_or(|m| i < m.start || i >= m.start + m.len);
        let mut content: Vec<&str> =
            tokens.iter().enumerate().filter(|(i, t)| outside(*i) && !is_stopword(t)).map(|(_, t)| t.as_str()).collect();
        let mut v = match &matched {
            Some(m) => self.anchors.anchor(m.term).into_inner(),
            None => {
                if content.is_empty() {
                    content = tokens.iter().map(String::as_str).collect();
                }
                vec![0.0; dim]
            }
        };
        let weight = if matched.is_some() { ATTRIBUTE_WEIGHT } else { 1.0 };
        for word in content {
            v.iter_mut().zip(self.anchors.hashed(word)).for_each(|(x, h)| *x += weight * h);
        }
        Ok(Embedding::new(normalize(v)))
    }
}

/// Image embedder resolving symbolic image refs against ground truth.
#[derive(Debug, Clone)]
pub struct OfflineImageEmbedder {
    truth: Arc<GroundTruth>,
}

impl OfflineImageEmbedder {
    pub fn new(truth: Arc<GroundTruth>) -> Self {
        Self { truth }
    }
}

impl ImageEmbedder for OfflineImageEmbedder {
    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError> {
        self.truth
            .view_by_image(image_ref)
            .map(|(_, v)| v.embedding.clone())
            .ok_or_else(|| ProviderError::UnknownImage(image_ref.to_owned()))
    }
}

/// How a corrupted compare answer looks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareCorruption {
    /// An unparseable reply.
    #[default]
    Garble,
    /// The other image.
    Swap,
}

/// Seeded answer corruption shared by both offline reasoners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub error_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub compare: CompareCorruption,
}

impl Corruption {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_rate(error_rate: f64, seed: u64) -> Self {
        Self { error_rate, seed, compare: CompareCorruption::Garble }
    }

    /// Whether the answer to this exact request is corrupted.
    pub fn coin(&self, prompt: &str, image_refs: &[&str]) -> bool {
        if self.error_rate <= 0.0 {
            return false;
        }
        if self.error_rate >= 1.0 {
            return true;
        }
        let mut parts: Vec<&[u8]> = vec![b"corrupt", prompt.as_bytes()];
        parts.extend(image_refs.iter().map(|r| r.as_bytes()));
        let seed = self.seed.to_le_bytes();
        parts.insert(0, &seed);
        let h = hash_parts(&parts);
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.error_rate
    }
}

const GARBLED: &str = "I'm sorry, I can't determine that from the information given.";

pub struct OfflineTextReasoner {
    truth: Arc<GroundTruth>,
    corruption: Corruption,
}

impl OfflineTextReasoner {
    pub fn new(truth: Arc<GroundTruth>, corruption: Corruption) -> Self {
        Self { truth, corruption }
    }

    fn select_view(&self, prompt: &str) -> String {
        let listed = prompts::listed_views(prompt);
        if listed.is_empty() {
            return "none".into();
        }
        let query = prompts::field(prompt, prompts::FIELD_QUERY).unwrap_or("");
        let category = self.truth.category_of(query);
        let mut best: Option<(usize, f64)> = None;
        if let Some(c) = &category {
            for (i, (id, _)) in listed.iter().enumerate() {
                let depth = self
                    .truth
                    .views
                    .get(&ViewId::from(id.as_str()))
                    .and_then(|v| self.truth.category_depth(v, c));
                if let Some(d) = depth {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
            }
        }
        let pick = best.map(|(i, _)| i).unwrap_or(0);
        if self.corruption.coin(prompt, &[]) {
            if listed.len() == 1 {
                return "none of them".into();
            }
            return listed[(pick + 1) % listed.len()].0.clone();
        }
        listed[pick].0.clone()
    }

    fn name_room(&self, prompt: &str) -> String {
        if self.corruption.coin(prompt, &[]) {
            return GARBLED.into();
        }
        prompts::listed_views(prompt)
            .iter()
            .find_map(|(id, _)| {
                let view = self.truth.views.get(&ViewId::from(id.as_str()))?;
                self.truth.rooms.get(&view.room_id).map(|r| r.name.clone())
            })
            .unwrap_or_else(|| "room".into())
    }

    fn parse(&self, prompt: &str) -> String {
        if self.corruption.coin(prompt, &[]) {
            return GARBLED.into();
        }
        let instruction = prompts::field(prompt, prompts::FIELD_INSTRUCTION).unwrap_or("");
        let or_truth = |listed: Vec<String>, truth: Vec<String>| if listed.is_empty() { truth } else { listed };
        let floors = or_truth(
            prompts::list_field(prompt, prompts::FIELD_FLOORS),
            self.truth.floors.values().cloned().collect(),
        );
        let rooms = or_truth(
            prompts::list_field(prompt, prompts::FIELD_ROOMS),
            self.truth.room_names().into_iter().map(str::to_owned).collect(),
        );
        let objects = or_truth(
            prompts::list_field(prompt, prompts::FIELD_CANDIDATES),
            self.truth.categories().into_iter().map(str::to_owned).collect(),
        );
        lexicon_parse(instruction, &floors, &rooms, &objects).to_fenced()
    }
}

fn overlaps(a: &TermMatch<'_>, b: &TermMatch<'_>) -> bool {
    a.start < b.start + b.len && b.start < a.start + a.len
}

fn best_free<'a>(tokens: &[String], terms: &'a [String], taken: &[TermMatch<'_>]) -> Option<TermMatch<'a>> {
    find_terms(tokens, terms.iter().map(String::as_str))
        .into_iter()
        .filter(|m| taken.iter().all(|t| !overlaps(m, t)))
        .max_by(|a, b| a.len.cmp(&b.len).then(a.start.cmp(&b.start)))
}

/// Lexicon-driven decomposition used by the offline parse oracle.
pub fn lexicon_parse(instruction: &str, floors: &[String], rooms: &[String], objects: &[String]) -> ParseReply {
    let tokens = tokenize(instruction);
    let mut taken: Vec<TermMatch<'_>> = Vec::new();
    let floor = best_free(&tokens, floors, &taken);
    taken.extend(floor.clone());
    let room = best_free(&tokens, rooms, &taken);
    taken.extend(room.clone());
    let object = best_free(&tokens, objects, &taken);
    let (object, inferred) = match object {
        Some(m) => {
            // extend left over adjectives up to the previous stopword or span
            let mut start = m.start;
            while start > 0 && !is_stopword(&tokens[start - 1]) && taken.iter().all(|t| start > t.start + t.len || start - 1 < t.start) {
                start -= 1;
            }
            (tokens[start..m.start + m.len].join(" "), false)
        }
        None => {
            let need = NEEDS
                .iter()
                .find(|n| n.cues.iter().any(|c| tokens.iter().any(|t| t == c)) && objects.iter().any(|o| o == n.object));
            match need {
                Some(n) => (n.object.to_owned(), true),
                None => {
                    let content: Vec<&str> = tokens
                        .iter()
                        .enumerate()
                        .filter(|(i, t)| !is_stopword(t) && taken.iter().all(|m| *i < m.start || *i >= m.start + m.len))
                        .map(|(_, t)| t.as_str())
                        .collect();
                    (content.join(" "), false)
                }
            }
        }
    };
    ParseReply {
        floor: floor.map(|m| m.term.to_owned()),
        room: room.map(|m| m.term.to_owned()),
        object,
        attributes: Vec::new(),
        inferred,
    }
}

impl TextReasoner for OfflineTextReasoner {
    fn ask_text(&self, prompt: &str) -> Result<String, ProviderError> {
        check_prompt(prompt, &[])?;
        Ok(match prompts::task_of(prompt) {
            prompts::TASK_PARSE | prompts::TASK_REFORMAT => self.parse(prompt),
            prompts::TASK_SELECT_VIEW => self.select_view(prompt),
            prompts::TASK_NAME_ROOM => self.name_room(prompt),
            _ => "I don't know how to help with that request.".into(),
        })
    }
}

pub struct OfflineImageReasoner {
    truth: Arc<GroundTruth>,
    corruption: Corruption,
}

impl OfflineImageReasoner {
    pub fn new(truth: Arc<GroundTruth>, corruption: Corruption) -> Self {
        Self { truth, corruption }
    }

    fn depth_of(&self, image_ref: &str, object: &str) -> Result<Option<f64>, ProviderError> {
        let (_, view) =
            self.truth.view_by_image(image_ref).ok_or_else(|| ProviderError::UnknownImage(image_ref.to_owned()))?;
        Ok(self.truth.category_of(object).and_then(|c| self.truth.category_depth(view, &c)))
    }
}

impl ImageReasoner for OfflineImageReasoner {
    fn ask_image(&self, prompt: &str, image_refs: &[&str]) -> Result<String, ProviderError> {
        check_prompt(prompt, image_refs)?;
        let corrupt = self.corruption.coin(prompt, image_refs);
        let object = prompts::field(prompt, prompts::FIELD_OBJECT).unwrap_or("");
        match (prompts::task_of(prompt), image_refs) {
            (prompts::TASK_PRESENCE, [image]) => {
                let present = self.depth_of(image, object)?.is_some();
                Ok(if present != corrupt { "yes" } else { "no" }.into())
            }
            (prompts::TASK_COMPARE, [a, b]) => {
                let pick_b = match (self.depth_of(a, object)?, self.depth_of(b, object)?) {
                    (Some(da), Some(db)) => db < da,
                    (None, Some(_)) => true,
                    _ => false,
                };
                if corrupt && self.corruption.compare == CompareCorruption::Garble {
                    return Ok("Both images look reasonable to me.".into());
                }
                Ok(if pick_b != corrupt { "B" } else { "A" }.into())
            }
            (prompts::TASK_CAPTION, [image]) => {
                let (_, view) =
                    self.truth.view_by_image(image).ok_or_else(|| ProviderError::UnknownImage((*image).to_owned()))?;
                Ok(if corrupt { GARBLED.into() } else { view.caption.clone() })
            }
            _ => Ok("I can't answer that about these images.".into()),
        }
    }
}

impl ProviderSuite {
    /// Offline oracles over `truth`.
    pub fn offline(truth: Arc<GroundTruth>, anchors: Arc<AnchorTable>, corruption: Corruption) -> Self {
        Self {
            text_embedder: Arc::new(OfflineTextEmbedder::new(anchors)),
            image_embedder: Arc::new(OfflineImageEmbedder::new(truth.clone())),
            text_reasoner: Arc::new(OfflineTextReasoner::new(truth.clone(), corruption)),
            image_reasoner: Arc::new(OfflineImageReasoner::new(truth, corruption)),
            limits: ProviderLimits::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ids::{FloorId, ObjectId, RoomId};
    use crate::truth::{ObjectTruth, RoomTruth, ViewTruth};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn tiny_truth() -> Arc<GroundTruth> {
        let mut t = GroundTruth::default();
        t.floors.insert(FloorId::from("f0"), "first floor".into());
        t.rooms.insert(RoomId::from("r0"), RoomTruth { name: "office".into(), floor_id: FloorId::from("f0") });
        for (id, cat) in [("o0", "chair"), ("o1", "cup")] {
            t.objects.insert(
                ObjectId::from(id),
                ObjectTruth { category: cat.into(), room_id: RoomId::from("r0"), small: cat == "cup" },
            );
        }
        let view = |visible: &[(&str, f64)], caption: &str, image: &str| ViewTruth {
            image_ref: image.into(),
            room_id: RoomId::from("r0"),
            caption: caption.into(),
            visible: visible.iter().map(|(o, d)| (ObjectId::from(*o), *d)).collect::<BTreeMap<_, _>>(),
            embedding: Embedding::new(vec![1.0, 0.0]),
        };
        t.views.insert(ViewId::from("v0"), view(&[("o0", 2.0)], "a chair", "img0"));
        t.views.insert(ViewId::from("v1"), view(&[("o0", 1.0), ("o1", 1.5)], "a chair and a cup", "img1"));
        Arc::new(t)
    }

    #[test]
    fn anchors_are_orthonormal() {
        let t = AnchorTable::standard();
        let terms: Vec<_> = t.terms().collect();
        for (i, a) in terms.iter().enumerate() {
            let va = t.anchor(a).into_inner();
            assert!((dot(&va, &va) - 1.0).abs() < 1e-12);
            for b in &terms[i + 1..] {
                assert!(dot(&va, t.anchor(b).values()).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn text_embedding_is_pure_and_anchored() {
        let anchors = AnchorTable::standard();
        let e = OfflineTextEmbedder::new(anchors.clone());
        let a = e.embed_text("chair").unwrap();
        assert_eq!(a, e.embed_text("chair").unwrap());
        let own = dot(a.values(), anchors.anchor("chair").values());
        let other = dot(a.values(), anchors.anchor("door").values());
        assert!(own > other, "{own} vs {other}");
        assert!((own - 1.0).abs() < 1e-12);
        let attr = e.embed_text("blue cylindrical stool").unwrap();
        assert!(dot(attr.values(), anchors.anchor("stool").values()) > 0.95);
        assert_eq!(e.embed_text(" , "), Err(ProviderError::EmptyInput));
        assert!((e.embed_text("xyzzy plugh").unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn presence_inverts_under_full_corruption() {
        let truth = tiny_truth();
        let honest = OfflineImageReasoner::new(truth.clone(), Corruption::none());
        let liar = OfflineImageReasoner::new(truth, Corruption::with_rate(1.0, 3));
        let p = prompts::presence_prompt("cup");
        assert_eq!(honest.ask_image(&p, &["img1"]).unwrap(), "yes");
        assert_eq!(honest.ask_image(&p, &["img0"]).unwrap(), "no");
        assert_eq!(liar.ask_image(&p, &["img1"]).unwrap(), "no");
        assert_eq!(liar.ask_image(&p, &["img0"]).unwrap(), "yes");
        assert!(matches!(honest.ask_image(&p, &["nope"]), Err(ProviderError::UnknownImage(_))));
    }

    #[test]
    fn compare_prefers_the_nearer_view() {
        let truth = tiny_truth();
        let honest = OfflineImageReasoner::new(truth.clone(), Corruption::none());
        let p = prompts::compare_prompt("chair");
        assert_eq!(honest.ask_image(&p, &["img0", "img1"]).unwrap(), "B");
        assert_eq!(honest.ask_image(&p, &["img1", "img0"]).unwrap(), "A");
        let swap = Corruption { compare: CompareCorruption::Swap, ..Corruption::with_rate(1.0, 0) };
        let liar = OfflineImageReasoner::new(truth, swap);
        assert_eq!(liar.ask_image(&p, &["img0", "img1"]).unwrap(), "A");
    }

    #[test]
    fn select_view_oracle() {
        let truth = tiny_truth();
        let (v0, v1) = (ViewId::from("v0"), ViewId::from("v1"));
        let p = prompts::select_view_prompt("the cup", &[(&v0, "a chair"), (&v1, "a chair and a cup")]);
        let honest = OfflineTextReasoner::new(truth.clone(), Corruption::none());
        assert_eq!(honest.ask_text(&p).unwrap(), "v1");
        let liar = OfflineTextReasoner::new(truth, Corruption::with_rate(1.0, 0));
        assert_eq!(liar.ask_text(&p).unwrap(), "v0");
    }

    #[test]
    fn corruption_patterns_depend_on_seed() {
        let a = Corruption::with_rate(0.5, 1);
        let b = Corruption::with_rate(0.5, 2);
        let prompts: Vec<String> = (0..64).map(|i| format!("prompt {i}")).collect();
        let pa: Vec<bool> = prompts.iter().map(|p| a.coin(p, &[])).collect();
        let pb: Vec<bool> = prompts.iter().map(|p| b.coin(p, &[])).collect();
        assert_ne!(pa, pb);
        let hits = pa.iter().filter(|x| **x).count();
        assert!((16..=48).contains(&hits), "{hits}");
        assert_eq!(pa, prompts.iter().map(|p| a.coin(p, &[])).collect::<Vec<_>>());
    }

    #[test]
    fn lexicon_parse_cases() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let floors = s(&["first floor", "second floor"]);
        let rooms = s(&["office", "kitchen"]);
        let objects = s(&["stool", "water dispenser", "chair"]);
        let r = lexicon_parse("Take me to the blue cylindrical stool in the office", &floors, &rooms, &objects);
        assert_eq!((r.room.as_deref(), r.object.as_str(), r.inferred), (Some("office"), "blue cylindrical stool", false));
        let r = lexicon_parse("I'm thirsty", &floors, &rooms, &objects);
        assert_eq!((r.object.as_str(), r.inferred, r.room), ("water dispenser", true, None));
        let r = lexicon_parse("go to the chair in the kitchen on the second floor", &floors, &rooms, &objects);
        assert_eq!(r.floor.as_deref(), Some("second floor"));
        assert_eq!(r.room.as_deref(), Some("kitchen"));
        assert_eq!(r.object, "chair");
    }
}
