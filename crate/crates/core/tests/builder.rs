mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hmsg::builder::{
    assign_object_to_room, build_graph, build_view_edges, BuildError, BuildEvent, BuildOptions, LayoutFloor,
    LayoutInput, LayoutObject, LayoutRoom, LayoutView, Observation,
};
use hmsg::ids::{ObjectId, RoomId, ViewId};
use hmsg::model::{to_json_string, validate, Aabb, Embedding, Pose, ViewNode};
use hmsg::providers::offline::{AnchorTable, Corruption};
use hmsg::providers::ProviderSuite;
use hmsg::truth::GroundTruth;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn providers() -> ProviderSuite {
    ProviderSuite::offline(Arc::new(GroundTruth::default()), AnchorTable::standard(), Corruption::none())
}

fn offline() -> BuildOptions {
    BuildOptions { offline: true, ..Default::default() }
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.into_iter().map(|x| x / n).collect())
}

/// Three floors of side-by-side rectangular rooms with randomly placed views
/// and objects. Observations include cross-room ones and repeated depths.
fn random_layout(seed: u64) -> LayoutInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = LayoutInput::default();
    let dim = AnchorTable::standard().dim();
    let mut view_n = 0;
    let mut object_n = 0;
    for f in 0..3 {
        let z0 = 3.0 * f as f64;
        let fid = format!("f{f}");
        layout.floors.push(LayoutFloor { id: fid.clone().into(), name: format!("floor {f}"), z_min: z0, z_max: z0 + 3.0, cloud_ref: None });
        let mut x = 0.0;
        let mut floor_views = Vec::new();
        for r in 0..rng.random_range(1..4) {
            let w: f64 = rng.random_range(3.0..8.0);
            let d: f64 = rng.random_range(3.0..8.0);
            let rid: RoomId = format!("r{f}{r}").into();
            layout.rooms.push(LayoutRoom {
                id: rid.clone(),
                floor_id: fid.clone().into(),
                polygon: vec![[x, 0.0], [x + w, 0.0], [x + w, d], [x, d]],
                name: Some(["kitchen", "office", "lounge"][r % 3].into()),
                embedding: None,
                cloud_ref: None,
            });
            let mut room_views = Vec::new();
            for _ in 0..rng.random_range(1..5) {
                let id: ViewId = format!("v{view_n:03}").into();
                view_n += 1;
                let p = [x + rng.random_range(0.1..w - 0.1), rng.random_range(0.1..d - 0.1), z0 + 1.2];
                layout.views.push(LayoutView {
                    id: id.clone(),
                    pose: Pose::with_yaw(p, rng.random_range(-3.0..3.0)),
                    image_ref: None,
                    embedding: Some(unit(&mut rng, dim)),
                    caption: Some("a room".into()),
                });
                room_views.push(id);
            }
            for _ in 0..rng.random_range(0..5) {
                let id: ObjectId = format!("o{object_n:03}").into();
                object_n += 1;
                let c = [x + rng.random_range(0.5..w - 0.5), rng.random_range(0.5..d - 0.5), z0 + 0.5];
                let h = rng.random_range(0.05..0.4);
                let own = room_views.choose(&mut rng).unwrap().clone();
                let depth = rng.random_range(0.5..6.0);
                layout.observations.push(Observation(own, id.clone(), depth));
                for v in &room_views {
                    match rng.random_range(0..4) {
                        0 => layout.observations.push(Observation(v.clone(), id.clone(), rng.random_range(0.5..6.0))),
                        1 => layout.observations.push(Observation(v.clone(), id.clone(), depth)),
                        _ => {}
                    }
                }
                layout.objects.push(LayoutObject {
                    id,
                    label: "chair".into(),
                    aabb: Aabb { min: [c[0] - h, c[1] - h, c[2] - h], max: [c[0] + h, c[1] + h, c[2] + h] },
                    centroid: c,
                    embedding: unit(&mut rng, dim),
                    footprint: None,
                    cloud_ref: None,
                });
            }
            floor_views.extend(room_views);
            x += w;
        }
        // observations across rooms on the same floor, discarded by the builder
        for o in layout.objects.iter().filter(|o| o.centroid[2] >= z0 && o.centroid[2] < z0 + 3.0) {
            if rng.random_bool(0.3) {
                let v = floor_views.choose(&mut rng).unwrap().clone();
                layout.observations.push(Observation(v, o.id.clone(), rng.random_range(0.1..0.4)));
            }
        }
    }
    layout
}

/// Room of a point by direct rectangle test; rooms in one floor do not overlap
/// except on shared walls, where the smaller index wins.
fn rect_room<'a>(layout: &'a LayoutInput, p: &[f64; 3]) -> Option<&'a RoomId> {
    let floor = layout.floors.iter().find(|f| f.z_min <= p[2] && p[2] < f.z_max)?;
    layout.rooms.iter().filter(|r| r.floor_id == floor.id).find(|r| {
        let (lo, hi) = (r.polygon[0], r.polygon[2]);
        lo[0] <= p[0] && p[0] <= hi[0] && lo[1] <= p[1] && p[1] <= hi[1]
    }).map(|r| &r.id)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_layouts_build_valid_graphs(seed in any::<u64>()) {
        let layout = random_layout(seed);
        let out = build_graph(&layout, &providers(), &offline()).unwrap();
        let g = &out.graph;
        prop_assert!(validate(g).is_valid());
        prop_assert_eq!(common::reference_validate(g), Vec::<String>::new());
        prop_assert_eq!(g.views.len(), layout.views.len());
        prop_assert_eq!(g.objects.len(), layout.objects.len());

        let view_room: BTreeMap<&ViewId, &RoomId> =
            layout.views.iter().map(|v| (&v.id, rect_room(&layout, &v.pose.position).unwrap())).collect();
        for v in g.views.values() {
            prop_assert_eq!(&v.room_id, view_room[&v.id]);
        }
        for o in &layout.objects {
            let room = rect_room(&layout, &o.centroid).unwrap();
            let node = &g.objects[&o.id];
            prop_assert_eq!(&node.room_id, room);
            // brute force: mean depth per same-room view, then argmin with id tie-break
            let mut sums: BTreeMap<&ViewId, (f64, usize)> = BTreeMap::new();
            for Observation(v, obj, d) in &layout.observations {
                if obj == &o.id && view_room[v] == room {
                    let e = sums.entry(v).or_default();
                    e.0 += d;
                    e.1 += 1;
                }
            }
            let mut best: Option<(&ViewId, f64)> = None;
            for (v, (s, n)) in &sums {
                let mean = s / *n as f64;
                if best.is_none_or(|(_, b)| mean < b - 1e-9) {
                    best = Some((v, mean));
                }
            }
            prop_assert_eq!(&node.best_view_id, best.unwrap().0);
            let visible: BTreeSet<&ViewId> = node.visibility.keys().collect();
            let expected: BTreeSet<&ViewId> = sums.keys().copied().collect();
            prop_assert_eq!(visible, expected);
        }
    }
}

#[test]
fn builds_are_deterministic() {
    for seed in 0..5 {
        let layout = random_layout(seed);
        let a = to_json_string(&build_graph(&layout, &providers(), &offline()).unwrap().graph).unwrap();
        let b = to_json_string(&build_graph(&layout, &providers(), &offline()).unwrap().graph).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn cross_room_observations_are_logged_and_dropped() {
    let mut discarded = 0;
    for seed in 0..20 {
        let layout = random_layout(seed);
        let out = build_graph(&layout, &providers(), &offline()).unwrap();
        for e in &out.log {
            if let BuildEvent::ObservationDiscarded { view, object, view_room, object_room } = e {
                discarded += 1;
                assert_ne!(view_room, object_room);
                assert!(!out.graph.objects[object].visibility.contains_key(view));
            }
        }
    }
    assert!(discarded > 0);
}

fn view_node(id: usize, p: [f64; 3]) -> ViewNode {
    ViewNode {
        id: format!("v{id:03}").into(),
        room_id: "r".into(),
        pose: Pose::at(p),
        embedding: Embedding::new(vec![1.0]),
        caption: String::new(),
        image_ref: None,
        visible_object_ids: BTreeSet::new(),
    }
}

#[test]
fn edges_match_quadratic_oracle() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<ViewNode> = (0..50)
            .map(|i| {
                // a coarse lattice makes exact-radius and coincident pairs common
                let q = |rng: &mut ChaCha8Rng| rng.random_range(0..12) as f64 * 0.5;
                view_node(i, [q(&mut rng), q(&mut rng), if rng.random_bool(0.2) { 1.0 } else { 0.0 }])
            })
            .collect();
        let refs: Vec<&ViewNode> = views.iter().collect();
        let radius = [0.0, 1.0, 1.5, 2.0][seed as usize % 4];
        let seq = seed % 3 != 0;
        let got: BTreeSet<(String, String)> =
            build_view_edges(&refs, radius, seq).iter().map(|e| (e.a.to_string(), e.b.to_string())).collect();

        let dist = |a: &ViewNode, b: &ViewNode| {
            (0..3).map(|k| (a.pose.position[k] - b.pose.position[k]).powi(2)).sum::<f64>().sqrt()
        };
        let mut want = BTreeSet::new();
        for i in 0..views.len() {
            for j in i + 1..views.len() {
                let d = dist(&views[i], &views[j]);
                let linked = (radius > 0.0 && d <= radius) || (seq && j == i + 1);
                if linked && d > 0.0 {
                    want.insert((views[i].id.to_string(), views[j].id.to_string()));
                }
            }
        }
        assert_eq!(got, want, "seed {seed} radius {radius} seq {seq}");
    }
}

#[test]
fn straddling_object_goes_to_larger_overlap() {
    let mut layout = random_layout(0);
    layout.floors.truncate(1);
    layout.rooms = vec![
        LayoutRoom { id: "a".into(), floor_id: "f0".into(), polygon: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]], name: None, embedding: None, cloud_ref: None },
        LayoutRoom { id: "b".into(), floor_id: "f0".into(), polygon: vec![[4.0, 0.0], [8.0, 0.0], [8.0, 4.0], [4.0, 4.0]], name: None, embedding: None, cloud_ref: None },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        // box straddling the wall x=4, centroid anywhere inside the box
        let (lo, hi) = (rng.random_range(2.5..3.99), rng.random_range(4.01..5.5));
        let cx = rng.random_range(lo..hi);
        let o = LayoutObject {
            id: "o".into(),
            label: "chair".into(),
            aabb: Aabb { min: [lo, 1.0, 0.2], max: [hi, 2.0, 0.8] },
            centroid: [cx, 1.5, 0.5],
            embedding: Embedding::new(vec![1.0]),
            footprint: None,
            cloud_ref: None,
        };
        let got = assign_object_to_room(&o, &layout).unwrap().room_id;
        let (in_a, in_b) = (4.0 - lo, hi - 4.0);
        let expected = if cx < 4.0 {
            "a"
        } else if cx > 4.0 {
            "b"
        } else if in_a >= in_b {
            "a"
        } else {
            "b"
        };
        assert_eq!(got.as_str(), expected, "box [{lo}, {hi}] centroid {cx}");
    }
}

#[test]
fn unobserved_object_is_an_error() {
    let mut layout = random_layout(2);
    let victim = layout.objects[0].id.clone();
    layout.observations.retain(|Observation(_, o, _)| o != &victim);
    assert!(matches!(build_graph(&layout, &providers(), &offline()), Err(BuildError::Unobserved(o)) if o == victim));
}
