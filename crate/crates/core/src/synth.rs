//! Seeded synthetic scenes: layout, instruction dataset and ground truth.
//!
//! Each floor is a row of 6 m x 5 m rooms along +x, optionally fronted by a
//! 2 m corridor at `y in [-2, 0]`. A room's view budget is one corridor view
//! (when the corridor is enabled) plus interior views on the line `y = 2.5`,
//! visited in order, so the trajectory runs room by room. Objects fill slots
//! `[shared, shared, small, need, plain, plain, ..]`; shared categories rotate
//! through three per floor, so each appears in at least two rooms when the
//! floor has two or more.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{LayoutFloor, LayoutInput, LayoutObject, LayoutRoom, LayoutView, Observation};
use crate::eval::{InstructionCategory, InstructionRecord};
use crate::geometry::{distance3, Point2, Point3};
use crate::ids::{FloorId, ObjectId, RoomId, ViewId};
use crate::model::{Aabb, Embedding, Pose};
use crate::providers::offline::{hash_parts, normalize, AnchorTable};
use crate::truth::{GroundTruth, ObjectTruth, RoomTruth, ViewTruth};
use crate::vocab::{category, need_for_object, CategoryKind, CATEGORIES, ROOM_TYPES};

pub const ROOM_WIDTH: f64 = 6.0;
pub const ROOM_DEPTH: f64 = 5.0;
pub const CORRIDOR_WIDTH: f64 = 2.0;
pub const FLOOR_HEIGHT: f64 = 3.0;
pub const CAMERA_HEIGHT: f64 = 1.2;
pub const VISIBILITY_RADIUS: f64 = 4.0;
pub const MIN_OBJECT_SPACING: f64 = 1.0;
pub const SMALL_OBJECT_ELEVATION: f64 = 0.75;
/// Largest box edge of a small object.
pub const SMALL_EDGE_MAX: f64 = 0.3;
const SHARED_PER_FLOOR: usize = 3;
const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_floors: usize,
    /// Rooms per floor.
    pub n_rooms: usize,
    pub n_objects_per_room: usize,
    pub n_views_per_room: usize,
    /// Category pool; empty means the full vocabulary.
    #[serde(default)]
    pub categories: Vec<String>,
    /// Object-embedding noise; doubled for small objects.
    pub sigma: f64,
    /// View-embedding noise.
    pub sigma_view: f64,
    pub corridor: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_floors: 1,
            n_rooms: 4,
            n_objects_per_room: 5,
            n_views_per_room: 6,
            categories: Vec::new(),
            sigma: 0.0,
            sigma_view: 0.0,
            corridor: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("{needed} rooms per floor but only {available} room types")]
    TooManyRooms { needed: usize, available: usize },
    #[error("category pool exhausted at room `{room}`")]
    CategoriesExhausted { room: RoomId },
    #[error("could not place object {slot} in room `{room}`")]
    Unplaceable { room: RoomId, slot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub layout: LayoutInput,
    pub dataset: Vec<InstructionRecord>,
    pub truth: GroundTruth,
}

pub fn floor_name(index: usize) -> String {
    const ORDINALS: &[&str] =
        &["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];
    match ORDINALS.get(index) {
        Some(o) => format!("{o} floor"),
        None => format!("floor {}", index + 1),
    }
}

fn check_params(p: &SynthParams) -> Result<(), SynthError> {
    let positive = [
        ("n_floors", p.n_floors),
        ("n_rooms", p.n_rooms),
        ("n_objects_per_room", p.n_objects_per_room),
        ("n_views_per_room", p.n_views_per_room),
    ];
    for (name, v) in positive {
        if v == 0 {
            return Err(SynthError::Params(format!("{name} must be positive")));
        }
    }
    for (name, s) in [("sigma", p.sigma), ("sigma_view", p.sigma_view)] {
        if !(s.is_finite() && s >= 0.0) {
            return Err(SynthError::Params(format!("{name} must be finite and non-negative")));
        }
    }
    if p.n_rooms > ROOM_TYPES.len() {
        return Err(SynthError::TooManyRooms { needed: p.n_rooms, available: ROOM_TYPES.len() });
    }
    if !p.categories.is_empty() {
        if p.categories.len() < 2 {
            return Err(SynthError::Params("at least 2 categories required".into()));
        }
        if let Some(bad) = p.categories.iter().find(|c| category(c).is_none()) {
            return Err(SynthError::Params(format!("unknown category `{bad}`")));
        }
    }
    Ok(())
}

struct Pools {
    shared: Vec<&'static str>,
    small: Vec<&'static str>,
    need: Vec<&'static str>,
    plain: Vec<&'static str>,
}

impl Pools {
    fn new(params: &SynthParams, rng: &mut ChaCha8Rng) -> Self {
        let allowed = |name: &str| params.categories.is_empty() || params.categories.iter().any(|c| c == name);
        let mut of = |kind: CategoryKind| {
            let mut v: Vec<&'static str> =
                CATEGORIES.iter().filter(|c| c.kind == kind && allowed(c.name)).map(|c| c.name).collect();
            v.shuffle(rng);
            v
        };
        Self { shared: of(CategoryKind::Shared), small: of(CategoryKind::Small), need: of(CategoryKind::Need), plain: of(CategoryKind::Plain) }
    }

    /// A unique category for a slot, falling back to plain categories.
    fn draw(&mut self, kind: CategoryKind) -> Option<&'static str> {
        let pool = match kind {
            CategoryKind::Small => &mut self.small,
            CategoryKind::Need => &mut self.need,
            _ => &mut self.plain,
        };
        pool.pop().or_else(|| self.plain.pop()).or_else(|| self.small.pop()).or_else(|| self.need.pop())
    }
}

fn slot_kind(slot: usize) -> CategoryKind {
    match slot {
        0 | 1 => CategoryKind::Shared,
        2 => CategoryKind::Small,
        3 => CategoryKind::Need,
        _ => CategoryKind::Plain,
    }
}

fn instruction_category(name: &str) -> InstructionCategory {
    match category(name).map(|c| c.kind) {
        Some(CategoryKind::Shared) => InstructionCategory::St,
        Some(CategoryKind::Small) => InstructionCategory::So,
        Some(CategoryKind::Need) => InstructionCategory::Rr,
        _ => InstructionCategory::Rf,
    }
}

struct PlacedObject {
    id: ObjectId,
    room: usize,
    category: &'static str,
    aabb: Aabb,
    centroid: Point3,
}

struct PlacedRoom {
    id: RoomId,
    floor: usize,
    name: &'static str,
    x0: f64,
}

struct PlacedView {
    id: ViewId,
    room: usize,
    position: Point3,
    yaw: f64,
}

/// Generates a scene. Layout and dataset depend only on `seed` and the
/// structural parameters; embedding noise is drawn from a separate stream, so
/// changing `sigma` keeps the geometry fixed.
pub fn generate_scene(seed: u64, params: &SynthParams) -> Result<SynthScene, SynthError> {
    generate_scene_with(seed, params, &AnchorTable::standard())
}

pub fn generate_scene_with(seed: u64, params: &SynthParams, anchors: &AnchorTable) -> Result<SynthScene, SynthError> {
    check_params(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(hash_parts(&[&seed.to_le_bytes(), b"embedding-noise"]));
    let mut pools = Pools::new(params, &mut rng);

    let mut floors = Vec::new();
    let mut rooms: Vec<PlacedRoom> = Vec::new();
    let mut views: Vec<PlacedView> = Vec::new();
    let mut objects: Vec<PlacedObject> = Vec::new();

    for f in 0..params.n_floors {
        let z0 = f as f64 * FLOOR_HEIGHT;
        floors.push(LayoutFloor {
            id: FloorId::new(format!("f{f}")),
            name: floor_name(f),
            z_min: z0,
            z_max: z0 + FLOOR_HEIGHT,
            cloud_ref: None,
        });
        let mut names: Vec<&'static str> = ROOM_TYPES.to_vec();
        names.shuffle(&mut rng);
        let mut shared: Vec<&'static str> = pools.shared.clone();
        shared.shuffle(&mut rng);
        shared.truncate(SHARED_PER_FLOOR);

        for i in 0..params.n_rooms {
            let room_index = rooms.len();
            let room = PlacedRoom {
                id: RoomId::new(format!("r{room_index:02}")),
                floor: f,
                name: names[i],
                x0: i as f64 * ROOM_WIDTH,
            };

            // views: corridor first, then interior left to right
            let interior = if params.corridor { params.n_views_per_room - 1 } else { params.n_views_per_room };
            if params.corridor {
                views.push(PlacedView {
                    id: ViewId::new(format!("v{:03}", views.len())),
                    room: room_index,
                    position: [room.x0 + ROOM_WIDTH / 2.0, -CORRIDOR_WIDTH / 2.0, z0 + CAMERA_HEIGHT],
                    yaw: std::f64::consts::FRAC_PI_2,
                });
            }
            for k in 0..interior {
                let x = room.x0 + (k as f64 + 0.5) * ROOM_WIDTH / interior as f64;
                views.push(PlacedView {
                    id: ViewId::new(format!("v{:03}", views.len())),
                    room: room_index,
                    position: [x, ROOM_DEPTH / 2.0, z0 + CAMERA_HEIGHT],
                    yaw: 0.0,
                });
            }
            let room_views: Vec<Point3> = views.iter().filter(|v| v.room == room_index).map(|v| v.position).collect();

            // objects
            let mut placed_here: Vec<Point2> = Vec::new();
            for slot in 0..params.n_objects_per_room {
                let kind = slot_kind(slot);
                let cat = match kind {
                    CategoryKind::Shared if !shared.is_empty() => shared[(i + slot) % shared.len()],
                    _ => pools.draw(kind).ok_or_else(|| SynthError::CategoriesExhausted { room: room.id.clone() })?,
                };
                let small = category(cat).is_some_and(|c| c.kind == CategoryKind::Small);
                let (lo, hi) = if small { (0.1, SMALL_EDGE_MAX) } else { (0.4, 1.2) };
                let size: Point3 = [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
                let base_z = if small { z0 + SMALL_OBJECT_ELEVATION } else { z0 };
                let margin = size[0].max(size[1]) / 2.0 + 0.1;
                let mut centroid = None;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let x = rng.random_range(room.x0 + margin..=room.x0 + ROOM_WIDTH - margin);
                    let y = rng.random_range(margin..=ROOM_DEPTH - margin);
                    let c = [x, y, base_z + size[2] / 2.0];
                    let spaced = placed_here.iter().all(|p| ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt() >= MIN_OBJECT_SPACING);
                    let seen = room_views.iter().any(|v| distance3(v, &c) <= VISIBILITY_RADIUS);
                    if spaced && seen {
                        centroid = Some(c);
                        break;
                    }
                }
                let c = centroid.ok_or_else(|| SynthError::Unplaceable { room: room.id.clone(), slot })?;
                placed_here.push([c[0], c[1]]);
                let half = size.map(|s| s / 2.0);
                objects.push(PlacedObject {
                    id: ObjectId::new(format!("o{:03}", objects.len())),
                    room: room_index,
                    category: cat,
                    aabb: Aabb {
                        min: [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
                        max: [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
                    },
                    centroid: c,
                });
            }
            rooms.push(room);
        }
    }

    // visibility
    let mut visible: Vec<BTreeMap<ObjectId, f64>> = vec![BTreeMap::new(); views.len()];
    let mut observations = Vec::new();
    for (vi, v) in views.iter().enumerate() {
        for o in objects.iter().filter(|o| o.room == v.room) {
            let d = distance3(&v.position, &o.centroid);
            if d <= VISIBILITY_RADIUS {
                visible[vi].insert(o.id.clone(), d);
                observations.push(Observation(v.id.clone(), o.id.clone(), d));
            }
        }
    }

    // embeddings
    let object_embeddings: Vec<Embedding> = objects
        .iter()
        .map(|o| {
            let small = category(o.category).is_some_and(|c| c.kind == CategoryKind::Small);
            let sigma = if small { 2.0 * params.sigma } else { params.sigma };
            anchors.perturb(anchors.anchor(o.category).values(), sigma, &mut noise)
        })
        .collect();
    let category_of: BTreeMap<&ObjectId, &'static str> = objects.iter().map(|o| (&o.id, o.category)).collect();
    let view_embeddings: Vec<Embedding> = views
        .iter()
        .zip(&visible)
        .map(|(v, vis)| {
            let mut base = vec![0.0; anchors.dim()];
            for (o, d) in vis {
                let w = 1.0 / (d * d);
                base.iter_mut().zip(anchors.anchor(category_of[o]).values()).for_each(|(b, a)| *b += w * a);
            }
            if vis.is_empty() {
                base = anchors.anchor(rooms[v.room].name).into_inner();
            }
            anchors.perturb(&normalize(base), params.sigma_view, &mut noise)
        })
        .collect();

    let caption = |vi: usize| {
        let mut seen: Vec<(&f64, &'static str)> = visible[vi].iter().map(|(o, d)| (d, category_of[o])).collect();
        seen.sort_by(|a, b| a.0.total_cmp(b.0));
        let mut names: Vec<&str> = Vec::new();
        for (_, c) in seen {
            if !names.contains(&c) {
                names.push(c);
            }
        }
        let room = rooms[views[vi].room].name;
        if names.is_empty() {
            format!("A view of the {room} with no notable objects.")
        } else {
            let listed: Vec<String> = names.iter().map(|n| format!("a {n}")).collect();
            format!("A view of the {room} showing {}.", listed.join(", "))
        }
    };

    let layout = LayoutInput {
        floors: floors.clone(),
        rooms: rooms
            .iter()
            .map(|r| LayoutRoom {
                id: r.id.clone(),
                floor_id: FloorId::new(format!("f{}", r.floor)),
                polygon: vec![[r.x0, 0.0], [r.x0 + ROOM_WIDTH, 0.0], [r.x0 + ROOM_WIDTH, ROOM_DEPTH], [r.x0, ROOM_DEPTH]],
                name: Some(r.name.to_owned()),
                embedding: None,
                cloud_ref: None,
            })
            .collect(),
        objects: objects
            .iter()
            .zip(&object_embeddings)
            .map(|(o, e)| LayoutObject {
                id: o.id.clone(),
                label: o.category.to_owned(),
                aabb: o.aabb,
                centroid: o.centroid,
                embedding: e.clone(),
                footprint: None,
                cloud_ref: None,
            })
            .collect(),
        views: views
            .iter()
            .enumerate()
            .map(|(vi, v)| LayoutView {
                id: v.id.clone(),
                pose: Pose::with_yaw(v.position, v.yaw),
                image_ref: Some(format!("{}.png", v.id)),
                embedding: Some(view_embeddings[vi].clone()),
                caption: Some(caption(vi)),
            })
            .collect(),
        observations,
    };

    let truth = GroundTruth {
        floors: floors.iter().map(|f| (f.id.clone(), f.name.clone())).collect(),
        rooms: layout
            .rooms
            .iter()
            .map(|r| (r.id.clone(), RoomTruth { name: r.name.clone().unwrap_or_default(), floor_id: r.floor_id.clone() }))
            .collect(),
        objects: objects
            .iter()
            .map(|o| {
                let small = category(o.category).is_some_and(|c| c.kind == CategoryKind::Small);
                (o.id.clone(), ObjectTruth { category: o.category.to_owned(), room_id: rooms[o.room].id.clone(), small })
            })
            .collect(),
        views: layout
            .views
            .iter()
            .enumerate()
            .map(|(vi, v)| {
                (
                    v.id.clone(),
                    ViewTruth {
                        image_ref: v.image_ref.clone().unwrap_or_default(),
                        room_id: rooms[views[vi].room].id.clone(),
                        caption: v.caption.clone().unwrap_or_default(),
                        visible: visible[vi].clone(),
                        embedding: view_embeddings[vi].clone(),
                    },
                )
            })
            .collect(),
    };

    let dataset = instructions(&objects, &rooms, &floors, params.n_floors > 1);
    Ok(SynthScene { layout, dataset, truth })
}

fn instructions(
    objects: &[PlacedObject],
    rooms: &[PlacedRoom],
    floors: &[LayoutFloor],
    multi_floor: bool,
) -> Vec<InstructionRecord> {
    let mut out = Vec::new();
    for o in objects {
        let c = o.category;
        let room = &rooms[o.room];
        let cat = instruction_category(c);
        let texts: Vec<String> = match cat {
            InstructionCategory::Rf => vec![format!("go to the {c}"), format!("take me to the {c}")],
            InstructionCategory::So => vec![format!("find the {c}"), format!("where is the {c}?")],
            InstructionCategory::Rr => match need_for_object(c) {
                Some(n) => n.phrasings.iter().map(|p| p.to_string()).collect(),
                None => vec![format!("go to the {c}")],
            },
            InstructionCategory::St => {
                let distractor = objects.iter().any(|p| p.category == c && p.room != o.room);
                if !distractor {
                    continue;
                }
                let suffix =
                    if multi_floor { format!(" on the {}", floors[room.floor].name) } else { String::new() };
                vec![
                    format!("go to the {c} in the {}{suffix}", room.name),
                    format!("take me to the {c} in the {}{suffix}", room.name),
                ]
            }
        };
        for text in texts {
            out.push(InstructionRecord {
                text,
                category: cat,
                gt_object_id: o.id.clone(),
                gt_position: o.centroid,
                gt_room_id: room.id.clone(),
            });
        }
    }
    out
}
