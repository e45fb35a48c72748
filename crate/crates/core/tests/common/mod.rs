#![allow(dead_code)]
// negated comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hmsg::builder::{build_graph, BuildOptions};
use hmsg::model::SceneGraph;
use hmsg::providers::offline::{AnchorTable, Corruption};
use hmsg::providers::ProviderSuite;
use hmsg::synth::{generate_scene, SynthParams, SynthScene};

pub struct Built {
    pub scene: SynthScene,
    pub graph: SceneGraph,
    pub providers: ProviderSuite,
}

pub fn offline_suite(scene: &SynthScene, corruption: Corruption) -> ProviderSuite {
    ProviderSuite::offline(Arc::new(scene.truth.clone()), AnchorTable::standard(), corruption)
}

pub fn built(seed: u64, params: &SynthParams) -> Built {
    let scene = generate_scene(seed, params).expect("scene generates");
    let providers = offline_suite(&scene, Corruption::none());
    let graph = build_graph(&scene.layout, &providers, &BuildOptions { offline: true, ..Default::default() })
        .expect("scene builds")
        .graph;
    Built { scene, graph, providers }
}

fn simple_polygon(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let twice_area: f64 = (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum();
    if twice_area.abs() <= 1e-12 {
        return false;
    }
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (p1, p2, q1, q2) = (poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]);
            let d1 = orient(q1, q2, p1);
            let d2 = orient(q1, q2, p2);
            let d3 = orient(p1, p2, q1);
            let d4 = orient(p1, p2, q2);
            if d1 * d2 <= 0.0 && d3 * d4 <= 0.0 {
                // collinear disjoint segments also satisfy the sign test; check overlap of extents
                let overlap_x = p1[0].min(p2[0]) <= q1[0].max(q2[0]) && q1[0].min(q2[0]) <= p1[0].max(p2[0]);
                let overlap_y = p1[1].min(p2[1]) <= q1[1].max(q2[1]) && q1[1].min(q2[1]) <= p1[1].max(p2[1]);
                if overlap_x && overlap_y {
                    return false;
                }
            }
        }
    }
    true
}

/// Re-derives every graph invariant without using the library validator.
/// Returns one message per broken invariant.
pub fn reference_validate(g: &SceneGraph) -> Vec<String> {
    let mut bad = Vec::new();
    let mut dims: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());

    for f in g.floors.values() {
        if !(f.z_min < f.z_max) {
            bad.push(format!("floor {} heights", f.id));
        }
        for r in &f.room_ids {
            match g.rooms.get(r) {
                Some(room) if room.floor_id == f.id => {}
                _ => bad.push(format!("floor {} lists room {r}", f.id)),
            }
        }
    }
    for r in g.rooms.values() {
        match g.floors.get(&r.floor_id) {
            Some(f) if f.room_ids.contains(&r.id) => {}
            _ => bad.push(format!("room {} floor link", r.id)),
        }
        if !simple_polygon(&r.polygon) {
            bad.push(format!("room {} polygon", r.id));
        }
        if !finite(r.embedding.values()) || r.embedding.dim() == 0 {
            bad.push(format!("room {} embedding", r.id));
        }
        dims.entry("room").or_default().insert(r.embedding.dim());
        for v in &r.view_ids {
            if g.views.get(v).is_none_or(|view| view.room_id != r.id) {
                bad.push(format!("room {} lists view {v}", r.id));
            }
        }
        for o in &r.object_ids {
            if g.objects.get(o).is_none_or(|obj| obj.room_id != r.id) {
                bad.push(format!("room {} lists object {o}", r.id));
            }
        }
    }
    for v in g.views.values() {
        if g.rooms.get(&v.room_id).is_none_or(|r| !r.view_ids.contains(&v.id)) {
            bad.push(format!("view {} room link", v.id));
        }
        let q = v.pose.orientation;
        let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (qn - 1.0).abs() > 1e-6 || !finite(&v.pose.position) {
            bad.push(format!("view {} pose", v.id));
        }
        if !finite(v.embedding.values()) || v.embedding.dim() == 0 {
            bad.push(format!("view {} embedding", v.id));
        }
        dims.entry("view").or_default().insert(v.embedding.dim());
        for o in &v.visible_object_ids {
            if g.objects.get(o).is_none_or(|obj| !obj.visibility.contains_key(&v.id)) {
                bad.push(format!("view {} visibility of {o}", v.id));
            }
        }
    }
    for o in g.objects.values() {
        if g.rooms.get(&o.room_id).is_none_or(|r| !r.object_ids.contains(&o.id)) {
            bad.push(format!("object {} room link", o.id));
        }
        if (0..3).any(|i| o.aabb.min[i] > o.aabb.max[i]) {
            bad.push(format!("object {} aabb", o.id));
        }
        if (0..3).any(|i| o.centroid[i] < o.aabb.min[i] || o.centroid[i] > o.aabb.max[i]) {
            bad.push(format!("object {} centroid", o.id));
        }
        if !finite(o.embedding.values()) || o.embedding.dim() == 0 {
            bad.push(format!("object {} embedding", o.id));
        }
        dims.entry("object").or_default().insert(o.embedding.dim());
        if o.visibility.is_empty() {
            bad.push(format!("object {} unobserved", o.id));
        }
        for (v, d) in &o.visibility {
            if !(d.is_finite() && *d > 0.0) {
                bad.push(format!("object {} depth", o.id));
            }
            if g.views.get(v).is_none_or(|view| !view.visible_object_ids.contains(&o.id)) {
                bad.push(format!("object {} visibility from {v}", o.id));
            }
        }
        match o.visibility.get(&o.best_view_id) {
            None => bad.push(format!("object {} best view missing", o.id)),
            Some(best) => {
                let min = o.visibility.values().copied().fold(f64::INFINITY, f64::min);
                if *best > min + 1e-9 {
                    bad.push(format!("object {} best view not minimal", o.id));
                }
                let smaller_tied = o.visibility.iter().any(|(v, d)| *d <= min + 1e-9 && v < &o.best_view_id);
                if smaller_tied {
                    bad.push(format!("object {} best view tie rule", o.id));
                }
                if g.views.get(&o.best_view_id).is_none_or(|v| v.room_id != o.room_id) {
                    bad.push(format!("object {} best view room", o.id));
                }
            }
        }
    }
    for (layer, set) in &dims {
        if set.len() > 1 {
            bad.push(format!("{layer} embedding dims {set:?}"));
        }
    }
    let mut pairs = BTreeSet::new();
    for e in &g.view_edges {
        if e.a == e.b {
            bad.push(format!("edge self loop {}", e.a));
        }
        let key = if e.a < e.b { (e.a.clone(), e.b.clone()) } else { (e.b.clone(), e.a.clone()) };
        if !pairs.insert(key) {
            bad.push(format!("edge duplicate {}-{}", e.a, e.b));
        }
        match (g.views.get(&e.a), g.views.get(&e.b)) {
            (Some(a), Some(b)) => {
                let d = (0..3).map(|i| (a.pose.position[i] - b.pose.position[i]).powi(2)).sum::<f64>().sqrt();
                if !(e.length > 0.0) || (d - e.length).abs() > 1e-6 {
                    bad.push(format!("edge length {}-{}", e.a, e.b));
                }
            }
            _ => bad.push(format!("edge dangling {}-{}", e.a, e.b)),
        }
    }
    bad
}

/// All-pairs shortest path lengths by Floyd-Warshall over view indices in id
/// order.
pub fn floyd_warshall(g: &SceneGraph) -> Vec<Vec<f64>> {
    let ids: Vec<_> = g.views.keys().collect();
    let n = ids.len();
    let idx = |id| ids.iter().position(|x| *x == id).unwrap();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &g.view_edges {
        let (a, b) = (idx(&e.a), idx(&e.b));
        d[a][b] = d[a][b].min(e.length);
        d[b][a] = d[b][a].min(e.length);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}
